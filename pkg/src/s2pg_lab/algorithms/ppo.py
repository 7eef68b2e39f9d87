"""PPO with stochastic stateful policies, plus its BPTT counterpart.

The stateful variant treats the sampled next internal state as part of the
action: the probability ratio is taken over the joint density of
``(a, z')`` and the stored internal states are plain data, so every
minibatch row is independent. The BPTT variant keeps a deterministic
recurrence and differentiates the action log-density through it over a
truncation window, which forces whole columns into each minibatch.

Datasets are dicts of time-major arrays ``(T, n, ...)`` as produced by
:meth:`StepSampler.segment`; a column may hold several episodes separated by
``last``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

import s2pg_lab.diffcore as dc
from s2pg_lab.algorithms.common import MetricsLog, make_eval, policy_x
from s2pg_lab.algorithms.config import AlgoConfig
from s2pg_lab.algorithms.critics import Critic, critic_input
from s2pg_lab.algorithms.rollout import StepSampler, policy_actor
from s2pg_lab.estimators.gae import gae_flat
from s2pg_lab.policies import NeuralMeans, RecurrentDeterministicPolicy, StatefulGaussianPolicy

__all__ = ["PPOOptimizers", "TrainResult", "make_ppo", "ppo_rs_update", "ppo_bptt_update", "train_ppo",
           "segment_advantages"]

logger = logging.getLogger(__name__)


@dataclass
class PPOOptimizers:
    policy: dc.Adam
    value: dc.Adam
    rng: np.random.Generator


@dataclass
class TrainResult:
    policy: object
    critic: Critic
    log: MetricsLog
    final: dict
    update_seconds: list = field(default_factory=list)
    agent: object = None


def make_ppo(x_dim: int, critic_dim: int, act_dim: int, config: AlgoConfig, kind: str = "s2pg"):
    """Policy, value critic and optimizers for one PPO run.

    ``kind="s2pg"`` builds a stochastic stateful policy (``d_z=0`` gives the
    memoryless baseline); ``"bptt"`` a recurrent policy with deterministic state.
    """
    means = NeuralMeans(x_dim, act_dim, config.d_z, config.policy_hidden, config.activation,
                        gate_bias=config.gate_bias, state_embed=config.state_embed)
    if kind == "s2pg":
        policy = StatefulGaussianPolicy(means, config.log_sigma_a, config.log_sigma_z,
                                        learn_sigma_z=config.learn_sigma_z, seed=config.seed)
    elif kind == "bptt":
        if config.d_z < 1:
            raise ValueError("the BPTT variant needs d_z >= 1")
        policy = RecurrentDeterministicPolicy(means, config.log_sigma_a, seed=config.seed)
    else:
        raise ValueError(f"unknown PPO kind {kind!r}")
    critic = Critic(critic_dim, config.d_z, kind="v", twin=False, hidden=config.critic_hidden,
                    activation="tanh", input_mode="privileged" if config.privileged_critic else "observation",
                    seed=config.seed + 7919)
    opts = PPOOptimizers(
        dc.Adam(policy.store, config.lr_actor, max_grad_norm=config.max_grad_norm, frozen=policy.frozen),
        dc.Adam(critic.store, config.lr_critic, max_grad_norm=config.max_grad_norm),
        np.random.default_rng(config.seed + 104729),
    )
    return policy, critic, opts


def _columns(arr: np.ndarray) -> np.ndarray:
    """Time-major ``(T, n, ...)`` to column-major flat ``(n*T, ...)``."""
    arr = np.asarray(arr)
    return np.swapaxes(arr, 0, 1).reshape(arr.shape[0] * arr.shape[1], *arr.shape[2:])


def _critic_views(data: dict, critic: Critic):
    cur = critic_input({"obs": _columns(data["obs"]), "privileged": _columns(data["privileged"])}, critic.input_mode)
    nxt = critic_input({"next_obs": _columns(data["next_obs"]), "next_privileged": _columns(data["next_privileged"])},
                       critic.input_mode, next_step=True)
    return cur, nxt


def segment_advantages(data: dict, critic: Critic, config: AlgoConfig):
    """GAE advantages and value targets, column-major flat.

    Each column's final step is cut as ``last`` and bootstrapped from the
    critic unless it is absorbing.
    """
    T, n = data["reward"].shape
    vx, nvx = _critic_views(data, critic)
    z, zn = _columns(data["z"]), _columns(data["z_next"])
    v = critic.values_np(vx, z)[0]
    vn = critic.values_np(nvx, zn)[0]
    last = _columns(data["last"]).copy()
    last.reshape(n, T)[:, -1] = True
    reward = config.reward_scale * _columns(data["reward"])
    return gae_flat(reward, v, vn, _columns(data["absorbing"]), last, config.gamma, config.lam)


def _fit_value(critic: Critic, opt: dc.Adam, x, z, targets, config: AlgoConfig, rng) -> float:
    m = targets.shape[0]
    loss = float("nan")
    for _ in range(config.value_epochs):
        perm = rng.permutation(m)
        for idx in np.array_split(perm, config.minibatches):
            loss = critic.fit_step(opt, x[idx], z[idx], targets[idx])
    return loss


def _clipped_loss(logp: dc.Tensor, logp_old: np.ndarray, adv: np.ndarray, eps: float):
    ratio = dc.exp(dc.sub(logp, logp_old))
    surr = dc.minimum(dc.mul(ratio, adv), dc.mul(dc.clip(ratio, 1.0 - eps, 1.0 + eps), adv))
    return dc.neg(dc.mean(surr)), ratio.data


def _trace_variance(grads: list[np.ndarray]) -> float:
    if len(grads) < 2:
        return float("nan")
    return float(np.var(np.stack(grads), axis=0, ddof=1).sum())


def _normalize(adv: np.ndarray, config: AlgoConfig) -> np.ndarray:
    if config.normalize_advantages and adv.size > 1:
        return (adv - adv.mean()) / (adv.std() + 1e-8)
    return adv


def ppo_rs_update(data: dict, policy: StatefulGaussianPolicy, critic: Critic, config: AlgoConfig,
                  opts: PPOOptimizers) -> dict:
    """One PPO iteration on an on-policy dataset of a stochastic stateful policy.

    The value function is fitted to the GAE targets first; the policy then
    takes ``epochs * minibatches`` steps on the clipped surrogate whose ratio
    is over the joint density of ``(a, z')``. Rows with a non-finite ratio
    are dropped from their minibatch and counted in ``stats["skipped"]``.
    """
    adv, targets = segment_advantages(data, critic, config)
    vx, _ = _critic_views(data, critic)
    z = _columns(data["z"])
    value_loss = _fit_value(critic, opts.value, vx, z, targets, config, opts.rng)

    x = policy_x(config, _columns(data["obs"]), _columns(data["privileged"]))
    a, zn, logp_old = _columns(data["a"]), _columns(data["z_next"]), _columns(data["logp"])
    adv = _normalize(adv, config)
    m = adv.shape[0]
    stats = {"value_loss": value_loss, "skipped": 0, "snapshot_ratio_dev": None}
    last_grads: list[np.ndarray] = []
    for epoch in range(config.epochs):
        perm = opts.rng.permutation(m)
        for idx in np.array_split(perm, config.minibatches):
            grad, ratio, skipped = _policy_grad(policy, x[idx], z[idx], a[idx], zn[idx], logp_old[idx], adv[idx],
                                                config.clip_eps)
            if stats["snapshot_ratio_dev"] is None:
                stats["snapshot_ratio_dev"] = float(np.max(np.abs(ratio[np.isfinite(ratio)] - 1.0), initial=0.0))
            stats["skipped"] += skipped
            if grad is None:
                continue
            if epoch == config.epochs - 1:
                last_grads.append(grad)
            opts.policy.step(grad)
    if stats["skipped"]:
        logger.warning("skipped %d rows with a non-finite probability ratio", stats["skipped"])
    stats["grad_variance_probe"] = _trace_variance(last_grads)
    return stats


def _bad_ratio(logp: np.ndarray, logp_old: np.ndarray) -> np.ndarray:
    """Rows whose probability ratio would be non-finite (or overflow ``exp``)."""
    with np.errstate(invalid="ignore", over="ignore"):
        log_ratio = logp - logp_old
        return ~np.isfinite(log_ratio) | (log_ratio > 700.0)


def _policy_grad(policy, x, z, a, zn, logp_old, adv, eps):
    tape = dc.Tape()
    p = policy.watch(tape)
    logp = policy.log_prob(x, z, a, zn, p)
    bad = _bad_ratio(logp.data, logp_old)
    if bad.any():
        keep = ~bad
        ratio = np.full(bad.shape, np.nan)
        if not keep.any():
            return None, ratio, int(bad.sum())
        grad, ratio[keep], _ = _policy_grad(policy, x[keep], z[keep], a[keep], zn[keep], logp_old[keep],
                                            adv[keep], eps)
        return grad, ratio, int(bad.sum())
    loss, ratio = _clipped_loss(logp, logp_old, adv, eps)
    return policy.store.flatten_map(tape.backward(loss)), ratio, 0


def ppo_bptt_update(data: dict, policy: RecurrentDeterministicPolicy, critic: Critic, config: AlgoConfig,
                    opts: PPOOptimizers) -> dict:
    """PPO iteration for a recurrent policy, differentiated through the recurrence.

    Minibatches are groups of columns. Each column restarts from its stored
    first state; episode boundaries inside a column reset the state and stop
    the gradient. The critic sees the recurrent states recorded at collection.
    """
    T, n = data["reward"].shape
    adv, targets = segment_advantages(data, critic, config)
    vx, _ = _critic_views(data, critic)
    value_loss = _fit_value(critic, opts.value, vx, _columns(data["z"]), targets, config, opts.rng)

    x = policy_x(config, data["obs"], data["privileged"])
    starts = np.zeros((T, n), bool)
    starts[1:] = data["last"][:-1]
    adv = _normalize(adv, config).reshape(n, T).T
    logp_old = data["logp"]
    z0 = data["z"][0]
    stats = {"value_loss": value_loss, "skipped": 0, "snapshot_ratio_dev": None}
    last_grads: list[np.ndarray] = []
    groups = max(1, min(config.minibatches, n))
    for epoch in range(config.epochs):
        for cols in np.array_split(opts.rng.permutation(n), groups):
            tape = dc.Tape()
            p = policy.watch(tape)
            per_step = policy.unroll_bptt(x[:, cols], data["a"][:, cols], config.truncation, p, starts[:, cols],
                                          z0[cols])
            logp = dc.concat(per_step, axis=0)
            old = logp_old[:, cols].reshape(-1)
            if _bad_ratio(logp.data, old).any():
                # a column cannot be split without breaking the recurrence; drop the group
                stats["skipped"] += int(len(cols) * T)
                logger.warning("skipped %d rows with a non-finite probability ratio", len(cols) * T)
                continue
            loss, ratio = _clipped_loss(logp, old, adv[:, cols].reshape(-1), config.clip_eps)
            if stats["snapshot_ratio_dev"] is None:
                stats["snapshot_ratio_dev"] = float(np.max(np.abs(ratio - 1.0)))
            grad = policy.store.flatten_map(tape.backward(loss))
            if epoch == config.epochs - 1:
                last_grads.append(grad)
            opts.policy.step(grad)
    stats["grad_variance_probe"] = _trace_variance(last_grads)
    return stats


def train_ppo(env_factory, config: AlgoConfig, kind: str = "s2pg", metrics_path=None, verbose: bool = False
              ) -> TrainResult:
    """Train PPO on ``env_factory(n)`` environments for ``config.total_steps`` steps.

    Evaluates the deterministic policy every ``eval_every`` steps and once at
    the end; metrics go to ``metrics_path`` when given.
    """
    env = env_factory(config.n_envs)
    privileged_policy = config.policy_input == "privileged"
    x_dim = env.state_dim if privileged_policy else env.obs_dim
    critic_dim = env.state_dim if config.privileged_critic else env.obs_dim
    policy, critic, opts = make_ppo(x_dim, critic_dim, env.act_dim, config, kind)
    update = ppo_rs_update if kind == "s2pg" else ppo_bptt_update
    sampler = StepSampler(env, policy.d_z, seed=config.seed, privileged_input=privileged_policy)
    actor = policy_actor(policy)
    evaluator = make_eval(env_factory, config)
    log = MetricsLog(metrics_path)
    result = TrainResult(policy, critic, log, {})
    per_iter = config.rollout_steps * config.n_envs
    next_eval = config.eval_every
    probe = float("nan")
    while sampler.total_steps < config.total_steps:
        data = sampler.segment(actor, config.rollout_steps)
        t0 = time.perf_counter()
        stats = update(data, policy, critic, config, opts)
        result.update_seconds.append(time.perf_counter() - t0)
        probe = stats["grad_variance_probe"]
        if sampler.total_steps >= next_eval or sampler.total_steps + per_iter > config.total_steps:
            row = log.append(sampler.total_steps, evaluator(policy), probe)
            next_eval += config.eval_every
            if verbose:
                print(f"step {row['step']:>8d}  return {row['mean_return']:9.3f}  success {row['success_rate']:.2f}")
    result.final = log.rows[-1] if log.rows else log.append(sampler.total_steps, evaluator(policy), probe)
    return result
