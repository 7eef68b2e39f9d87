"""Extended trajectories: environment data plus the policy's internal states.

Batches are stored time-major and padded: arrays have shape ``(T, N, ...)``
for ``N`` episodes of at most ``T`` steps, and ``valid[t, i]`` marks real
steps. Episode ``i`` ends at its first ``last`` step. Continuous streams
from :func:`s2pg_lab.algorithms.rollout` instead pack several episodes per
column, separated by ``last``; validate those with ``multi_episode=True``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from s2pg_lab import kernels

__all__ = ["ExtendedTrajectory", "collect_episodes", "discounted_return", "dump_trajectories_csv"]


@dataclass
class ExtendedTrajectory:
    obs: np.ndarray          # (T, N, obs_dim)
    privileged: np.ndarray   # (T, N, state_dim)
    z: np.ndarray            # (T, N, d_z)
    a: np.ndarray            # (T, N, act_dim)
    z_next: np.ndarray       # (T, N, d_z)
    reward: np.ndarray       # (T, N)
    absorbing: np.ndarray    # (T, N)
    last: np.ndarray         # (T, N)
    valid: np.ndarray        # (T, N)
    next_obs: np.ndarray     # (T, N, obs_dim), observation after the step
    next_privileged: np.ndarray
    gamma: float
    logp: np.ndarray | None = None  # behaviour log-density of (a, z') per step
    info: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return self.reward.shape[0]

    @property
    def n(self) -> int:
        return self.reward.shape[1]

    @property
    def lengths(self) -> np.ndarray:
        return self.valid.sum(axis=0)

    def inputs(self, privileged: bool = False) -> np.ndarray:
        return self.privileged if privileged else self.obs

    def validate(self, multi_episode: bool = False) -> None:
        """Check the structural invariants; raises ValueError on violation."""
        T, N = self.reward.shape
        for name in ("absorbing", "last", "valid"):
            if getattr(self, name).shape != (T, N):
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {(T, N)}")
        # z_{t+1} = z'_t inside an episode
        inner = self.valid[1:] & self.valid[:-1] & ~self.last[:-1]
        if inner.any() and not np.array_equal(self.z[1:][inner], self.z_next[:-1][inner]):
            raise ValueError("internal state chain is broken")
        if multi_episode:
            # a new episode starts from the zero state
            restart = self.valid[1:] & self.last[:-1]
            if np.any(self.z[1:][restart] != 0.0):
                raise ValueError("an episode does not start from z = 0")
        else:
            ends = (self.last & self.valid).sum(axis=0)
            if np.any(ends > 1):
                raise ValueError("an episode has more than one last step")
        if not np.all(self.valid[:1]):
            raise ValueError("every episode needs at least one step")
        # valid is a prefix in time
        if np.any(self.valid[1:] & ~self.valid[:-1]):
            raise ValueError("valid mask must be a time prefix")

    def column(self, i: int) -> "ExtendedTrajectory":
        """Episode ``i`` as a batch of one, trimmed to its length."""
        L = int(self.lengths[i])
        pick = lambda x: None if x is None else x[:L, i:i + 1]  # noqa: E731
        return ExtendedTrajectory(
            pick(self.obs), pick(self.privileged), pick(self.z), pick(self.a), pick(self.z_next),
            pick(self.reward), pick(self.absorbing), pick(self.last), pick(self.valid),
            pick(self.next_obs), pick(self.next_privileged), self.gamma, pick(self.logp))


def discounted_return(traj, gamma: float | None = None, absorbing=None):
    """``sum_t gamma^t r_t``, truncated after the first absorbing step.

    ``traj`` is either an :class:`ExtendedTrajectory` (returns one value per
    episode) or a 1-d reward sequence (returns a float; ``gamma`` required).
    """
    if isinstance(traj, ExtendedTrajectory):
        g = traj.gamma if gamma is None else gamma
        disc = g ** np.arange(traj.horizon)
        return (disc[:, None] * np.where(traj.valid, traj.reward, 0.0)).sum(axis=0)
    if gamma is None:
        raise ValueError("gamma is required for a raw reward sequence")
    r = np.asarray(traj, dtype=np.float64).ravel()
    if r.size == 0:
        raise ValueError("empty trajectory")
    last = np.zeros(r.size, bool)
    if absorbing is not None:
        hits = np.flatnonzero(np.asarray(absorbing, bool))
        if hits.size:
            r = r[:hits[0] + 1]
            last = last[:hits[0] + 1]
    last[-1] = True
    return float(kernels.episode_returns(r, last, gamma)[0])


def collect_episodes(env, policy, n_episodes: int | None = None, rng=None, gamma: float = 0.99,
                     mode: str = "stochastic", privileged_input: bool = False, seed: int | None = None,
                     action_noise=None) -> ExtendedTrajectory:
    """Run ``env.n`` episodes to completion with ``policy`` and record them.

    ``mode="stochastic"`` draws ``(a, z')`` from ``policy.sample``;
    ``"deterministic"`` uses the means of both heads. ``action_noise`` is an
    optional callable ``(a, z', rng) -> (a, z')`` applied in stochastic mode
    by policies without a sampler (exploration for deterministic actors).
    """
    if n_episodes is not None and n_episodes != env.n:
        raise ValueError("n_episodes must equal the number of environment copies")
    if mode not in ("stochastic", "deterministic"):
        raise ValueError(f"unknown mode {mode!r}")
    rng = np.random.default_rng() if rng is None else rng
    N, T = env.n, env.horizon
    step = env.reset(seed)
    z = policy.initial_state(N)
    rec = {k: [] for k in ("obs", "priv", "z", "a", "zn", "r", "abs", "last", "valid", "nobs", "npriv", "logp")}
    success = np.zeros(N, bool)
    done = np.zeros(N, bool)
    for _ in range(T):
        x = step.privileged_state if privileged_input else step.obs
        if mode == "deterministic":
            a, zn = policy.act_mean(x, z)
            logp = np.zeros(N)
        elif hasattr(policy, "sample"):
            a, zn, logp = policy.sample(x, z, rng)
        else:
            a, zn = policy.act_mean(x, z)
            if action_noise is not None:
                a, zn = action_noise(a, zn, rng)
            logp = np.zeros(N)
        nxt = env.step_partial(a)
        for k, v in (("obs", step.obs), ("priv", step.privileged_state), ("z", z), ("a", a), ("zn", zn),
                     ("r", nxt.reward), ("abs", nxt.absorbing), ("last", nxt.last & ~done),
                     ("valid", ~done), ("nobs", nxt.obs), ("npriv", nxt.privileged_state), ("logp", logp)):
            rec[k].append(np.array(v, copy=True))
        success |= nxt.info.get("success", np.zeros(N, bool)) & ~done
        done = done | nxt.last
        if done.all():
            break
        step = nxt
        z = np.where(done[:, None], z, zn)
    arr = {k: np.stack(v) for k, v in rec.items()}
    traj = ExtendedTrajectory(arr["obs"], arr["priv"], arr["z"], arr["a"], arr["zn"], arr["r"], arr["abs"],
                              arr["last"], arr["valid"], arr["nobs"], arr["npriv"], float(gamma), arr["logp"],
                              {"success": success})
    return traj


def dump_trajectories_csv(path, traj: ExtendedTrajectory) -> None:
    """One row per valid step: episode, t, s..., o..., z..., a..., r, absorbing."""
    T, N = traj.reward.shape
    ds, do, dz, da = traj.privileged.shape[-1], traj.obs.shape[-1], traj.z.shape[-1], traj.a.shape[-1]
    header = (["episode", "t"] + [f"s{i}" for i in range(ds)] + [f"o{i}" for i in range(do)]
              + [f"z{i}" for i in range(dz)] + [f"a{i}" for i in range(da)] + ["r", "absorbing"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(N):
            for t in range(T):
                if not traj.valid[t, i]:
                    break
                row = [i, t, *traj.privileged[t, i], *traj.obs[t, i], *traj.z[t, i], *traj.a[t, i],
                       traj.reward[t, i], int(traj.absorbing[t, i])]
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
