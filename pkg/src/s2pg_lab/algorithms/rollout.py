"""Experience collection and evaluation.

:class:`StepSampler` drives ``n`` environment copies continuously, resetting
finished copies and zeroing their internal state, and returns fixed-length
time-major segments. :func:`rollout` is the one-shot wrapper and
:func:`evaluate` runs complete deterministic episodes.
"""

from __future__ import annotations

import numpy as np

from s2pg_lab.estimators.trajectory import ExtendedTrajectory, collect_episodes

__all__ = ["StepSampler", "rollout", "evaluate", "EvalResult"]


class StepSampler:
    """Continuous sampler over a batched environment.

    ``act(x, z, rng) -> (a, z', logp, z_eps)`` decides each step; ``x`` is the
    observation, or the privileged state when ``privileged_input`` is set.
    """

    def __init__(self, env, d_z: int, seed: int = 0, privileged_input: bool = False):
        self.env = env
        self.d_z = d_z
        self.privileged_input = privileged_input
        self.rng = np.random.default_rng(seed)
        self.current = env.reset(seed)
        self.z = np.zeros((env.n, d_z))
        self.episode_id = np.arange(env.n, dtype=np.int64)
        self._next_episode = env.n
        self.step_in_episode = np.zeros(env.n, dtype=np.int64)
        self.total_steps = 0
        self.finished_returns: list[float] = []
        self.finished_success: list[bool] = []
        self._ret = np.zeros(env.n)

    def step(self, act):
        """Advance every copy by one step; returns a dict of per-copy arrays."""
        cur = self.current
        x = cur.privileged_state if self.privileged_input else cur.obs
        a, z_next, logp, z_eps = act(x, self.z, self.rng)
        nxt = self.env.step(a)
        rec = {
            "obs": cur.obs, "privileged": cur.privileged_state, "z": self.z.copy(), "a": np.asarray(a),
            "z_next": np.asarray(z_next), "z_eps": z_eps, "logp": logp, "reward": nxt.reward,
            "absorbing": nxt.absorbing, "last": nxt.last, "next_obs": nxt.obs,
            "next_privileged": nxt.privileged_state, "episode": self.episode_id.copy(),
            "step_index": self.step_in_episode.copy(),
        }
        self._ret += nxt.reward
        self.total_steps += self.env.n
        done = nxt.last
        if done.any():
            success = nxt.info.get("success", np.zeros(self.env.n, bool))
            for i in np.flatnonzero(done):
                self.finished_returns.append(float(self._ret[i]))
                self.finished_success.append(bool(success[i]))
            self._ret[done] = 0.0
            nxt = self.env.reset_done()
            self.z = np.where(done[:, None], 0.0, z_next)
            n_new = int(done.sum())
            self.episode_id[done] = self._next_episode + np.arange(n_new)
            self._next_episode += n_new
            self.step_in_episode = np.where(done, 0, self.step_in_episode + 1)
        else:
            self.z = np.asarray(z_next)
            self.step_in_episode += 1
        self.current = nxt
        return rec

    def segment(self, act, steps: int) -> dict[str, np.ndarray]:
        """``steps`` consecutive steps stacked time-major: arrays ``(steps, n, ...)``."""
        recs = [self.step(act) for _ in range(steps)]
        return {k: np.stack([r[k] for r in recs]) for k in recs[0]}


def policy_actor(policy, mode: str = "stochastic"):
    """Adapter from a policy to the sampler's ``act`` signature."""
    d_z = policy.d_z

    def act(x, z, rng):
        n = x.shape[0]
        if mode == "deterministic_eval":
            a, zn = policy.act_mean(x, z)
            return a, zn, np.zeros(n), np.zeros((n, d_z))
        a, zn, logp = policy.sample(x, z, rng)
        return a, zn, logp, np.zeros((n, d_z))
    return act


def rollout(env, policy, steps: int, mode: str = "stochastic", seed: int = 0,
            privileged_input: bool = False, gamma: float = 0.99) -> ExtendedTrajectory:
    """Collect ``steps`` steps per environment copy as an extended-trajectory batch.

    Each column is one copy's stream; episodes inside it are delimited by
    ``last`` and start from ``z = 0``.
    """
    if mode not in ("stochastic", "deterministic_eval"):
        raise ValueError(f"unknown mode {mode!r}")
    if env.obs_dim != policy.obs_dim and not privileged_input:
        raise ValueError("policy and environment observation dimensions differ")
    sampler = StepSampler(env, policy.d_z, seed, privileged_input)
    seg = sampler.segment(policy_actor(policy, mode), steps)
    return ExtendedTrajectory(seg["obs"], seg["privileged"], seg["z"], seg["a"], seg["z_next"], seg["reward"],
                              seg["absorbing"], seg["last"], np.ones_like(seg["last"]), seg["next_obs"],
                              seg["next_privileged"], gamma, seg["logp"])


class EvalResult(dict):
    @property
    def mean_return(self) -> float:
        return self["mean_return"]

    @property
    def success_rate(self) -> float:
        return self["success_rate"]


def evaluate(env, policy, seed: int = 0, privileged_input: bool = False) -> EvalResult:
    """Deterministic evaluation over ``env.n`` complete episodes (undiscounted returns)."""
    traj = collect_episodes(env, policy, mode="deterministic", seed=seed, privileged_input=privileged_input,
                            gamma=0.99)
    returns = np.where(traj.valid, traj.reward, 0.0).sum(axis=0)
    return EvalResult(mean_return=float(returns.mean()), std_return=float(returns.std()),
                      success_rate=float(traj.info["success"].mean()), returns=returns)
