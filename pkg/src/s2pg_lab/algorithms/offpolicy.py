"""Off-policy actor-critic learners for stateful policies.

Both learners treat the next internal state as a second action: critics
score ``(s, z, a, z')``, with ``s`` the privileged state, and the policy
reads only its own input (the observation by default). Replay transitions
keep the standardized noise that produced ``z'`` so their internal states
can be regenerated under the current policy (see :class:`ReplayBuffer`).

:class:`TD3Stateful` uses a deterministic stateful policy with clipped
target smoothing on both heads and delayed actor updates.
:class:`SACStateful` uses a stochastic stateful policy with separate
temperatures for the action and the internal state.
"""

from __future__ import annotations

import math
import time

import numpy as np

import s2pg_lab.diffcore as dc
from s2pg_lab.algorithms.common import MetricsLog, make_eval, policy_x
from s2pg_lab.algorithms.config import AlgoConfig
from s2pg_lab.algorithms.critics import Critic, critic_input
from s2pg_lab.algorithms.ppo import TrainResult
from s2pg_lab.algorithms.replay import ReplayBuffer
from s2pg_lab.algorithms.rollout import StepSampler
from s2pg_lab.policies import (
    LOG_SIGMA_A,
    LOG_SIGMA_Z,
    DeterministicStatefulPolicy,
    NeuralMeans,
    StatefulGaussianPolicy,
)

__all__ = ["TD3Stateful", "SACStateful", "td3_rs_update", "sac_rs_update", "temperature_loss", "train_offpolicy"]


class _OffPolicyBase:
    def __init__(self, x_dim: int, state_dim: int, act_dim: int, config: AlgoConfig):
        if not config.privileged_critic:
            raise ValueError("off-policy critics consume the privileged state; observation critics are PPO-only")
        self.config = config
        self.act_dim, self.d_z = act_dim, config.d_z
        self.means = NeuralMeans(x_dim, act_dim, config.d_z, config.policy_hidden, config.activation,
                                 gate_bias=config.gate_bias, state_embed=config.state_embed)
        self.critic = Critic(state_dim, config.d_z, act_dim, kind="q", twin=True, hidden=config.critic_hidden,
                             activation="relu", input_mode="privileged", seed=config.seed + 7919)
        self.target_critic = Critic(state_dim, config.d_z, act_dim, kind="q", twin=True,
                                    hidden=config.critic_hidden, activation="relu", input_mode="privileged")
        self.target_critic.store.load_flat(self.critic.store.flatten())
        self.critic_opt = dc.Adam(self.critic.store, config.lr_critic, max_grad_norm=config.max_grad_norm)
        self.rng = np.random.default_rng(config.seed + 104729)
        self.iteration = 0

    def x(self, batch, next_step: bool = False) -> np.ndarray:
        if next_step:
            return policy_x(self.config, batch["next_obs"], batch["next_privileged"])
        return policy_x(self.config, batch["obs"], batch["privileged"])

    def fit_critic(self, batch, target: np.ndarray) -> float:
        s = critic_input(batch, "privileged")
        return self.critic.fit_step(self.critic_opt, s, batch["z"], target, batch["a"], batch["z_next"])

    def _actor_step(self, loss: dc.Tensor, tape: dc.Tape) -> np.ndarray:
        grad = self.policy.store.flatten_map(tape.backward(loss))
        self.actor_opt.step(grad)
        return grad


# ---------------------------------------------------------------------- TD3


class TD3Stateful(_OffPolicyBase):
    """Deterministic stateful actor ``(mu^a, mu^z)`` with twin Q critics."""

    def __init__(self, x_dim: int, state_dim: int, act_dim: int, config: AlgoConfig, act_bounds=(-1.0, 1.0)):
        super().__init__(x_dim, state_dim, act_dim, config)
        zb = (-config.z_bound, config.z_bound)
        self.policy = DeterministicStatefulPolicy(self.means, act_bounds, zb, seed=config.seed)
        self.target_policy = self.policy.snapshot()
        self.actor_opt = dc.Adam(self.policy.store, config.lr_actor, max_grad_norm=config.max_grad_norm)

    def explore(self, x, z, rng):
        """Exploration step: Gaussian noise on both heads, clipped to their bounds."""
        a, _ = self.policy.act(x, z)
        eps_a = rng.standard_normal(a.shape)
        eps_z = rng.standard_normal((a.shape[0], self.d_z))
        a = np.clip(a + self.config.explore_noise * eps_a, *self.policy.a_bounds)
        return a, self.next_state(x, z, eps_z), np.zeros(a.shape[0]), eps_z

    def next_state(self, x, z, eps):
        mu_z = self.policy.state_mean_np(x, z)
        return np.clip(mu_z + self.config.explore_noise * eps, *self.policy.z_bounds)

    def _smooth(self, mean, bounds, rng):
        c = self.config
        noise = np.clip(c.target_noise * rng.standard_normal(mean.shape), -c.target_noise_clip, c.target_noise_clip)
        return np.clip(mean + noise, *bounds)

    def td_target(self, batch, rng=None) -> np.ndarray:
        """``r + gamma * min_i Qbar_i(s', z', a'', z'')`` with smoothed target heads; ``r`` on absorbing."""
        rng = self.rng if rng is None else rng
        c = self.config
        mu_a, mu_z = self.target_policy.mean_np(self.x(batch, True), batch["z_next"])
        a2 = self._smooth(mu_a, self.policy.a_bounds, rng)
        z2 = self._smooth(mu_z, self.policy.z_bounds, rng)
        q = self.target_critic.values_np(critic_input(batch, "privileged", True), batch["z_next"], a2, z2)
        v_next = np.where(batch["absorbing"], 0.0, q.min(axis=0))
        return c.reward_scale * batch["reward"] + c.gamma * v_next

    def actor_loss(self, batch, channels=("a", "z")):
        """``-mean Q_0(s, z, mu^a, mu^z)`` on a fresh tape.

        Dropping a name from ``channels`` blocks the gradient through that head.
        """
        tape = dc.Tape()
        p = self.policy.watch(tape)
        mu_a, mu_z = self.policy.means_tensor(dc.Tensor(self.x(batch)), dc.Tensor(batch["z"]), p)
        a = dc.clip(mu_a, *self.policy.a_bounds)
        zn = dc.clip(mu_z, *self.policy.z_bounds)
        a = a if "a" in channels else dc.detach(a)
        zn = zn if "z" in channels else dc.detach(zn)
        q0 = self.critic.heads_tensor(self.critic.store.constants(), critic_input(batch, "privileged"),
                                      batch["z"], a, zn)[0]
        return dc.neg(dc.mean(q0)), tape

    def actor_gradient(self, batch, channels=("a", "z")) -> np.ndarray:
        loss, tape = self.actor_loss(batch, channels)
        return self.policy.store.flatten_map(tape.backward(loss))

    def update(self, batch) -> dict:
        c = self.config
        self.iteration += 1
        stats = {"critic_loss": self.fit_critic(batch, self.td_target(batch)), "actor_updated": False}
        if self.iteration % c.policy_delay == 0:
            loss, tape = self.actor_loss(batch)
            stats["actor_grad"] = self._actor_step(loss, tape)
            stats["actor_loss"] = float(loss.data)
            stats["actor_updated"] = True
            dc.polyak_update(self.target_policy.store, self.policy.store, c.tau)
            dc.polyak_update(self.target_critic.store, self.critic.store, c.tau)
        return stats


def td3_rs_update(buffer: ReplayBuffer, agent: TD3Stateful, rng=None) -> dict | None:
    """One TD3 iteration from replay; a no-op (``None``) until the buffer exceeds ``s_min``."""
    if len(buffer) <= agent.config.s_min:
        return None
    rng = agent.rng if rng is None else rng
    batch = buffer.sample(agent.config.batch_size, rng, agent.next_state)
    return agent.update(batch)


# ---------------------------------------------------------------------- SAC


def temperature_loss(log_alpha: float, logp: np.ndarray, target_entropy: float) -> tuple[float, float]:
    """``-mean(alpha * (log pi + target))`` and its derivative in ``log alpha``."""
    alpha = math.exp(log_alpha)
    val = -alpha * float(np.mean(np.asarray(logp) + target_entropy))
    return val, val


class SACStateful(_OffPolicyBase):
    """Stochastic stateful actor with twin soft Q critics and two temperatures."""

    def __init__(self, x_dim: int, state_dim: int, act_dim: int, config: AlgoConfig):
        super().__init__(x_dim, state_dim, act_dim, config)
        self.policy = StatefulGaussianPolicy(self.means, config.log_sigma_a, config.log_sigma_z,
                                             learn_sigma_z=config.learn_sigma_z, seed=config.seed)
        self.actor_opt = dc.Adam(self.policy.store, config.lr_actor, max_grad_norm=config.max_grad_norm,
                                 frozen=self.policy.frozen)
        self.log_alpha = {"a": math.log(config.alpha_a), "z": math.log(config.alpha_z)}
        self.target_entropy = {
            "a": -float(act_dim) if config.target_entropy_a is None else config.target_entropy_a,
            "z": -float(config.d_z) if config.target_entropy_z is None else config.target_entropy_z,
        }
        # Adam moments for the two scalar log-temperatures
        self._alpha_m = {"a": [0.0, 0.0, 0], "z": [0.0, 0.0, 0]}
        self.samples_seen = 0

    @property
    def alpha(self) -> dict:
        return {k: math.exp(v) for k, v in self.log_alpha.items()}

    def explore(self, x, z, rng):
        mu_a, mu_z = self.policy.mean_np(x, z)
        sa, sz = self.policy.sigmas()
        eps_z = rng.standard_normal(mu_z.shape)
        a = mu_a + sa * rng.standard_normal(mu_a.shape)
        return a, mu_z + sz * eps_z, np.zeros(a.shape[0]), eps_z

    def next_state(self, x, z, eps):
        mu_z = self.policy.state_mean_np(x, z)
        return mu_z + self.policy.sigmas()[1] * eps

    def _sample_parts(self, x, z, rng):
        """Draw ``(a, z')`` and their separate log-densities on plain arrays."""
        mu_a, mu_z = self.policy.mean_np(x, z)
        sa, sz = self.policy.sigmas()
        ea, ez = rng.standard_normal(mu_a.shape), rng.standard_normal(mu_z.shape)
        lp_a = -0.5 * np.sum(ea * ea, -1) - np.sum(np.log(sa)) - 0.5 * self.act_dim * math.log(2 * math.pi)
        lp_z = -0.5 * np.sum(ez * ez, -1) - np.sum(np.log(sz)) - 0.5 * self.d_z * math.log(2 * math.pi)
        return mu_a + sa * ea, mu_z + sz * ez, lp_a, lp_z

    def soft_target(self, batch, rng=None) -> np.ndarray:
        """``r + gamma * (min_i Qbar_i(s', z', a', z'') - alpha^a log pi^a - alpha^z log pi^z)``."""
        rng = self.rng if rng is None else rng
        c, al = self.config, self.alpha
        a2, z2, lp_a, lp_z = self._sample_parts(self.x(batch, True), batch["z_next"], rng)
        q = self.target_critic.values_np(critic_input(batch, "privileged", True), batch["z_next"], a2, z2)
        v = q.min(axis=0) - al["a"] * lp_a - (al["z"] * lp_z if self.d_z else 0.0)
        return c.reward_scale * batch["reward"] + c.gamma * np.where(batch["absorbing"], 0.0, v)

    def actor_loss(self, batch, rng=None):
        """``mean(alpha^a log pi^a + alpha^z log pi^z - min_i Q_i)`` at reparameterized samples."""
        rng = self.rng if rng is None else rng
        al = self.alpha
        x, z = dc.Tensor(self.x(batch)), dc.Tensor(batch["z"])
        B = batch["z"].shape[0]
        tape = dc.Tape()
        p = self.policy.watch(tape)
        mu_a = self.policy.means.action_mean(p, x, z)
        a = dc.add(mu_a, dc.mul(dc.expand_rows(dc.exp(p[LOG_SIGMA_A]), B), rng.standard_normal(mu_a.shape)))
        lp_a = dc.gaussian_logpdf_logstd(a, mu_a, p[LOG_SIGMA_A])
        ent = dc.mul(lp_a, al["a"])
        if self.d_z:
            mu_z = self.policy.means.state_mean(p, x, z)
            zn = dc.add(mu_z, dc.mul(dc.expand_rows(dc.exp(p[LOG_SIGMA_Z]), B), rng.standard_normal(mu_z.shape)))
            lp_z = dc.gaussian_logpdf_logstd(zn, mu_z, p[LOG_SIGMA_Z])
            ent = dc.add(ent, dc.mul(lp_z, al["z"]))
        else:
            zn, lp_z = dc.Tensor(np.zeros((B, 0))), dc.Tensor(np.zeros(B))
        q = self.critic.heads_tensor(self.critic.store.constants(), critic_input(batch, "privileged"),
                                     batch["z"], a, zn)
        loss = dc.mean(dc.sub(ent, dc.minimum(q[0], q[1])))
        return loss, tape, lp_a.data, lp_z.data

    def _alpha_step(self, key: str, logp: np.ndarray) -> float:
        loss, grad = temperature_loss(self.log_alpha[key], logp, self.target_entropy[key])
        m = self._alpha_m[key]
        m[2] += 1
        m[0] = 0.9 * m[0] + 0.1 * grad
        m[1] = 0.999 * m[1] + 0.001 * grad * grad
        step = (m[0] / (1 - 0.9 ** m[2])) / (math.sqrt(m[1] / (1 - 0.999 ** m[2])) + 1e-8)
        self.log_alpha[key] -= self.config.lr_alpha * step
        return loss

    def update(self, batch) -> dict:
        c = self.config
        self.iteration += 1
        stats = {"critic_loss": self.fit_critic(batch, self.soft_target(batch)), "actor_updated": False}
        if self.samples_seen >= c.s_warm:
            loss, tape, lp_a, lp_z = self.actor_loss(batch)
            stats["actor_grad"] = self._actor_step(loss, tape)
            stats["actor_loss"] = float(loss.data)
            stats["actor_updated"] = True
            if c.learn_alpha:
                stats["alpha_a_loss"] = self._alpha_step("a", lp_a)
                if self.d_z:
                    stats["alpha_z_loss"] = self._alpha_step("z", lp_z)
        dc.polyak_update(self.target_critic.store, self.critic.store, c.tau)
        return stats


def sac_rs_update(buffer: ReplayBuffer, agent: SACStateful, rng=None) -> dict | None:
    """One SAC iteration from replay; a no-op (``None``) until the buffer exceeds ``s_min``."""
    if len(buffer) <= agent.config.s_min:
        return None
    rng = agent.rng if rng is None else rng
    batch = buffer.sample(agent.config.batch_size, rng, agent.next_state)
    return agent.update(batch)


# ---------------------------------------------------------------------- loop


def train_offpolicy(env_factory, config: AlgoConfig, algo: str = "sac", metrics_path=None,
                    verbose: bool = False) -> TrainResult:
    """Interleave environment steps and replay updates for ``config.total_steps`` steps."""
    env = env_factory(config.n_envs)
    privileged_policy = config.policy_input == "privileged"
    x_dim = env.state_dim if privileged_policy else env.obs_dim
    if algo == "td3":
        agent = TD3Stateful(x_dim, env.state_dim, env.act_dim, config,
                            (float(np.min(env.act_low)), float(np.max(env.act_high))))
        update = td3_rs_update
    elif algo == "sac":
        agent = SACStateful(x_dim, env.state_dim, env.act_dim, config)
        update = sac_rs_update
    else:
        raise ValueError(f"unknown off-policy algorithm {algo!r}")
    buffer = ReplayBuffer(config.buffer_capacity, env.obs_dim, env.state_dim, env.act_dim, config.d_z,
                          config.refresh, config.refresh_cap, config.policy_input)
    sampler = StepSampler(env, config.d_z, seed=config.seed, privileged_input=privileged_policy)
    evaluator = make_eval(env_factory, config)
    log = MetricsLog(metrics_path)
    result = TrainResult(agent.policy, agent.critic, log, {}, agent=agent)
    next_eval = config.eval_every
    grads: list[np.ndarray] = []
    while sampler.total_steps < config.total_steps:
        rec = sampler.step(agent.explore)
        buffer.add(rec["episode"], rec["step_index"], **{k: rec[k] for k in
                   ("obs", "privileged", "z", "a", "z_next", "z_eps", "reward", "next_obs", "next_privileged",
                    "absorbing")})
        if algo == "sac":
            agent.samples_seen = sampler.total_steps
        t0 = time.perf_counter()
        for _ in range(config.updates_per_step):
            stats = update(buffer, agent)
            if stats is not None and stats.get("actor_updated"):
                grads = (grads + [stats["actor_grad"]])[-32:]
        result.update_seconds.append(time.perf_counter() - t0)
        if sampler.total_steps >= next_eval or sampler.total_steps >= config.total_steps:
            probe = float(np.var(np.stack(grads), axis=0, ddof=1).sum()) if len(grads) > 1 else float("nan")
            row = log.append(sampler.total_steps, evaluator(agent.policy), probe)
            next_eval += config.eval_every
            if verbose:
                print(f"step {row['step']:>8d}  return {row['mean_return']:9.3f}  success {row['success_rate']:.2f}")
    result.final = log.rows[-1] if log.rows else {}
    return result
