"""Score-function gradient estimators for stateful policies.

Both estimators compute

    (1/N) sum_i sum_t grad log p_theta(step t of episode i) * target[t, i]

and differ in the log-density: :func:`reinforce_s2pg` uses the joint density
of ``(a_t, z_{t+1})`` given ``(o_t, z_t)``, which is local to the step, while
:func:`reinforce_bptt` uses the action density given the history through the
deterministic recurrence and differentiates through it.

Targets (``baseline_mode``):

* ``"none"``: the discounted episode return ``J`` at every step.
* ``"reward_to_go"``: ``sum_{k>=t} gamma^k r_k`` (rewards before ``t`` dropped).
* ``"mean_return"``: ``J_i`` minus the mean return of the other episodes.

All three are unbiased for the gradient of the discounted objective.
``step_discounted_targets=True`` switches ``reward_to_go`` to the common
``sum_{k>=t} gamma^(k-t) r_k`` form, i.e. drops the ``gamma^t`` factor from
each score term; that estimator is biased for the discounted objective and is
provided for comparison only.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

import s2pg_lab.diffcore as dc
from s2pg_lab.estimators.trajectory import ExtendedTrajectory, discounted_return
from s2pg_lab.policies import RecurrentDeterministicPolicy, StatefulGaussianPolicy

__all__ = ["GradientSample", "BASELINE_MODES", "step_targets", "reinforce_s2pg", "reinforce_bptt",
           "dump_gradients_csv"]

BASELINE_MODES = ("none", "reward_to_go", "mean_return")


@dataclass
class GradientSample:
    grad: np.ndarray                    # flat, store order
    n: int                              # trajectories averaged
    names: list
    per_sample: np.ndarray | None = None  # (N, P) per-trajectory gradients

    def __post_init__(self):
        if not np.isfinite(self.grad).all():
            raise dc.NumericError("non-finite gradient estimate")

    def standard_error(self) -> np.ndarray:
        if self.per_sample is None:
            raise ValueError("per-sample gradients were not recorded")
        return self.per_sample.std(axis=0, ddof=1) / np.sqrt(self.n)


def step_targets(traj: ExtendedTrajectory, baseline_mode: str = "none",
                 step_discounted_targets: bool = False) -> np.ndarray:
    """Weight ``(T, N)`` multiplying each step's score; zero on padding."""
    if baseline_mode not in BASELINE_MODES:
        raise ValueError(f"baseline_mode must be one of {BASELINE_MODES}")
    if step_discounted_targets and baseline_mode != "reward_to_go":
        raise ValueError("step_discounted_targets only applies to reward_to_go")
    T, N = traj.reward.shape
    r = np.where(traj.valid, traj.reward, 0.0)
    disc = traj.gamma ** np.arange(T)
    if baseline_mode == "reward_to_go":
        # reverse recursion; the discounted form then rescales by gamma^t
        w = np.empty((T, N))
        carry = np.zeros(N)
        for t in range(T - 1, -1, -1):
            carry = r[t] + traj.gamma * carry
            w[t] = carry
        if not step_discounted_targets:
            w = disc[:, None] * w
    else:
        J = discounted_return(traj)
        if baseline_mode == "mean_return":
            if N < 2:
                raise ValueError("mean_return needs at least two trajectories")
            J = J - (J.sum() - J) / (N - 1)
        w = np.broadcast_to(J, (T, N))
    return np.where(traj.valid, w, 0.0)


def _check_dims(traj, policy, privileged_input):
    x = traj.inputs(privileged_input)
    if x.shape[-1] != policy.obs_dim:
        raise ValueError(f"trajectory inputs have dimension {x.shape[-1]}, policy expects {policy.obs_dim}")
    if traj.a.shape[-1] != policy.act_dim:
        raise ValueError(f"actions have dimension {traj.a.shape[-1]}, policy expects {policy.act_dim}")
    if traj.z.shape[-1] != policy.d_z:
        raise ValueError(f"internal states have dimension {traj.z.shape[-1]}, policy expects {policy.d_z}")
    return x


def _per_sample_leaves(policy, tape, N):
    """One copy of every parameter per trajectory: leaves of shape (N, *shape)."""
    return {n: tape.watch(np.tile(v, (N, 1)), n) for n, v in policy.store.items()}


def _stack_per_sample(policy, grads, N):
    return np.concatenate([grads[n].reshape(N, -1) for n in policy.store.names], axis=1)


def _finish(policy, loss, tape, params, N, per_sample):
    grads = tape.backward(loss)
    if per_sample:
        G = _stack_per_sample(policy, grads, N) * N  # undo the 1/N of the loss
        return GradientSample(G.mean(axis=0), N, policy.store.names, G)
    return GradientSample(policy.store.flatten_map(grads), N, policy.store.names)


def reinforce_s2pg(traj: ExtendedTrajectory, policy: StatefulGaussianPolicy, baseline_mode: str = "none",
                   per_sample: bool = False, privileged_input: bool = False,
                   step_discounted_targets: bool = False) -> GradientSample:
    """S2PG estimate from on-policy extended trajectories."""
    x = _check_dims(traj, policy, privileged_input)
    w = step_targets(traj, baseline_mode, step_discounted_targets)
    T, N = w.shape
    tape = dc.Tape()
    if per_sample:
        if not getattr(policy.means, "supports_per_sample", False):
            raise ValueError("per-sample gradients need a mean model with per-sample support")
        params = _per_sample_leaves(policy, tape, N)
        loss = None
        for t in range(T):
            if not traj.valid[t].any():
                break
            lp = policy.log_prob(x[t], traj.z[t], traj.a[t], traj.z_next[t], params)
            term = dc.sum(dc.mul(lp, dc.Tensor(w[t] / N)))
            loss = term if loss is None else dc.add(loss, term)
    else:
        params = policy.watch(tape)
        rows = traj.valid.ravel()
        flat = lambda arr: arr.reshape(T * N, -1)[rows]  # noqa: E731
        lp = policy.log_prob(flat(x), flat(traj.z), flat(traj.a), flat(traj.z_next), params)
        loss = dc.sum(dc.mul(lp, dc.Tensor(w.ravel()[rows] / N)))
    return _finish(policy, loss, tape, params, N, per_sample)


def reinforce_bptt(traj: ExtendedTrajectory, policy: RecurrentDeterministicPolicy, truncation: int = 0,
                   baseline_mode: str = "none", per_sample: bool = False, privileged_input: bool = False,
                   step_discounted_targets: bool = False) -> GradientSample:
    """BPTT estimate; ``truncation`` is the gradient window length (0 = full history)."""
    x = _check_dims(traj, policy, privileged_input)
    w = step_targets(traj, baseline_mode, step_discounted_targets)
    T, N = w.shape
    tape = dc.Tape()
    if per_sample:
        if not getattr(policy.means, "supports_per_sample", False):
            raise ValueError("per-sample gradients need a mean model with per-sample support")
        params = _per_sample_leaves(policy, tape, N)
    else:
        params = policy.watch(tape)
    lps = policy.unroll_bptt(x, traj.a, truncation, params)
    loss = None
    for t, lp in enumerate(lps):
        if not traj.valid[t].any():
            break
        term = dc.sum(dc.mul(lp, dc.Tensor(w[t] / N)))
        loss = term if loss is None else dc.add(loss, term)
    return _finish(policy, loss, tape, params, N, per_sample)


def dump_gradients_csv(path, sample: GradientSample, store) -> None:
    """Per-sample gradients (or the mean if none were kept), one row each."""
    cols = [f"{n}[{i}]" for n in sample.names for i in range(store.slice_of(n).stop - store.slice_of(n).start)]
    rows = sample.per_sample if sample.per_sample is not None else sample.grad[None, :]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])
