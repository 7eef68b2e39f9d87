"""Stateful policy representations.

* :class:`StatefulGaussianPolicy` samples the action and the next internal
  state jointly, ``a ~ N(f(o, z), Sigma)`` and ``z' ~ N(eta(o, z), Upsilon)``,
  with diagonal covariances. Its log-density is local to each step.
* :class:`RecurrentDeterministicPolicy` propagates ``z' = eta(o, z)`` exactly;
  its action log-density depends on the whole history and is differentiated
  by unrolling the recurrence.
* :class:`DeterministicStatefulPolicy` outputs clipped means of both heads.

Inputs are row-batched: ``obs`` is ``(B, obs_dim)``, ``z`` is ``(B, d_z)``.
1-d inputs are accepted where noted and treated as a batch of one.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

import s2pg_lab.diffcore as dc

__all__ = [
    "PolicyState",
    "StatefulGaussianPolicy",
    "RecurrentDeterministicPolicy",
    "DeterministicStatefulPolicy",
    "sample",
    "log_prob",
    "unroll_bptt",
    "act_deterministic",
]

LOG_SIGMA_A = "log_sigma_a"
LOG_SIGMA_Z = "log_sigma_z"


@dataclass
class PolicyState:
    """Internal state carried between steps; starts at zero."""

    z: np.ndarray

    @classmethod
    def initial(cls, d_z: int, batch: int | None = None) -> "PolicyState":
        return cls(np.zeros(d_z) if batch is None else np.zeros((batch, d_z)))


def _rows(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x[None, :] if x.ndim == 1 else x


def _rows_t(x):
    # tensors pass through untouched; arrays are promoted to a batch
    return x if isinstance(x, dc.Tensor) else _rows(x)


def _logpdf_np(x, mean, log_std):
    """Row-wise diagonal Gaussian log-density on plain arrays."""
    u = (x - mean) * np.exp(-log_std)
    return -0.5 * np.sum(u * u, axis=-1) - np.sum(log_std) - 0.5 * x.shape[-1] * math.log(2.0 * math.pi)


class _PolicyBase:
    """Holds a mean model and a sealed parameter store."""

    kind = "base"

    def __init__(self, means, seed: int = 0):
        self.means = means
        self.obs_dim, self.act_dim, self.d_z = means.obs_dim, means.act_dim, means.d_z
        self.store = dc.ParameterStore()
        means.init(self.store, np.random.default_rng(seed))
        self._add_extra_params()
        self.store.seal()

    def _add_extra_params(self) -> None:
        pass

    @property
    def mean_param_names(self) -> list[str]:
        return self.means.param_names()

    @property
    def frozen(self) -> list[str]:
        """Parameters the optimizer must not move."""
        return []

    def params_np(self) -> dict[str, np.ndarray]:
        return dict(self.store.items())

    def watch(self, tape: dc.Tape) -> dict[str, dc.Tensor]:
        return self.store.watch(tape)

    def snapshot(self):
        """Independent copy; later updates of ``self`` do not affect it."""
        other = copy.copy(self)
        other.store = self.store.copy()
        return other

    def initial_state(self, batch: int | None = None) -> np.ndarray:
        return PolicyState.initial(self.d_z, batch).z

    def _check(self, obs, z):
        if obs.shape[-1] != self.obs_dim:
            raise ValueError(f"obs has dimension {obs.shape[-1]}, policy expects {self.obs_dim}")
        if z.shape[-1] != self.d_z:
            raise ValueError(f"z has dimension {z.shape[-1]}, policy expects {self.d_z}")
        if obs.shape[0] != z.shape[0]:
            raise ValueError("obs and z batch sizes differ")

    def mean_np(self, obs, z) -> tuple[np.ndarray, np.ndarray]:
        obs, z = _rows(obs), _rows(z)
        self._check(obs, z)
        p = self.params_np()
        mu_a = self.means.action_mean_np(p, obs, z)
        mu_z = self.means.state_mean_np(p, obs, z)
        if not (np.isfinite(mu_a).all() and np.isfinite(mu_z).all()):
            raise dc.NumericError("policy mean is not finite")
        return mu_a, mu_z

    def state_mean_np(self, obs, z) -> np.ndarray:
        """Internal-state mean alone (skips the action head)."""
        obs, z = _rows(obs), _rows(z)
        self._check(obs, z)
        return self.means.state_mean_np(self.params_np(), obs, z)

    def architecture(self) -> dict:
        return {"policy": self.kind, "means": self.means.describe()}

    def save(self, path):
        return dc.save_checkpoint(self.store, path, self.architecture())

    def load_params(self, path) -> None:
        store, _ = dc.load_checkpoint(path)
        if store.names != self.store.names:
            raise ValueError("checkpoint parameters do not match this policy")
        self.store.load_flat(store.flatten())


class StatefulGaussianPolicy(_PolicyBase):
    """Joint Gaussian over action and next internal state (block-diagonal)."""

    kind = "stateful_gaussian"

    def __init__(self, means, log_sigma_a: float = math.log(0.5), log_sigma_z: float = math.log(0.3),
                 learn_sigma_a: bool = True, learn_sigma_z: bool = True, seed: int = 0):
        self._init_ls = (log_sigma_a, log_sigma_z)
        self.learn_sigma_a = learn_sigma_a
        self.learn_sigma_z = learn_sigma_z
        super().__init__(means, seed)

    def _add_extra_params(self) -> None:
        self.store.add(LOG_SIGMA_A, np.full(self.act_dim, self._init_ls[0]))
        if self.d_z > 0:
            self.store.add(LOG_SIGMA_Z, np.full(self.d_z, self._init_ls[1]))

    @property
    def frozen(self) -> list[str]:
        out = []
        if not self.learn_sigma_a:
            out.append(LOG_SIGMA_A)
        if not self.learn_sigma_z and self.d_z > 0:
            out.append(LOG_SIGMA_Z)
        return out

    def sigmas(self) -> tuple[np.ndarray, np.ndarray]:
        sz = np.exp(self.store[LOG_SIGMA_Z]) if self.d_z > 0 else np.zeros(0)
        return np.exp(self.store[LOG_SIGMA_A]), sz

    def sample(self, obs, z, rng: np.random.Generator):
        """Draw ``(a, z', logp)`` for a batch; deterministic given ``rng``."""
        mu_a, mu_z = self.mean_np(obs, z)
        sa, sz = self.sigmas()
        eps_a = rng.standard_normal(mu_a.shape)
        eps_z = rng.standard_normal(mu_z.shape)
        a = mu_a + sa * eps_a
        z_next = mu_z + sz * eps_z
        logp = _logpdf_np(a, mu_a, self.store[LOG_SIGMA_A])
        if self.d_z > 0:
            logp = logp + _logpdf_np(z_next, mu_z, self.store[LOG_SIGMA_Z])
        return a, z_next, logp

    def log_prob_np(self, obs, z, a, z_next) -> np.ndarray:
        """Joint log-density on plain arrays (no tape)."""
        mu_a, mu_z = self.mean_np(obs, z)
        lp = _logpdf_np(_rows(a), mu_a, self.store[LOG_SIGMA_A])
        if self.d_z > 0:
            lp = lp + _logpdf_np(_rows(z_next), mu_z, self.store[LOG_SIGMA_Z])
        return lp

    def log_prob_parts(self, obs, z, a, z_next, params: Mapping | None = None):
        """``(log pi^a, log pi^z)`` per row, differentiable through ``params``."""
        p = self.store.constants() if params is None else params
        obs, z, a = _rows_t(obs), _rows_t(z), _rows_t(a)
        mu_a = self.means.action_mean(p, obs, z)
        lp_a = dc.gaussian_logpdf_logstd(a, mu_a, p[LOG_SIGMA_A])
        if self.d_z == 0:
            return lp_a, dc.Tensor(np.zeros(lp_a.shape))
        z_next = _rows_t(z_next)
        mu_z = self.means.state_mean(p, obs, z)
        lp_z = dc.gaussian_logpdf_logstd(z_next, mu_z, p[LOG_SIGMA_Z])
        return lp_a, lp_z

    def log_prob(self, obs, z, a, z_next, params: Mapping | None = None) -> dc.Tensor:
        """Joint log-density per row: action part plus internal-state part."""
        lp_a, lp_z = self.log_prob_parts(obs, z, a, z_next, params)
        return lp_a if self.d_z == 0 else dc.add(lp_a, lp_z)

    def act_mean(self, obs, z):
        """Deterministic evaluation: both heads at their means."""
        return self.mean_np(obs, z)


class RecurrentDeterministicPolicy(_PolicyBase):
    """Gaussian action head over a deterministic recurrence ``z' = eta(o, z)``."""

    kind = "recurrent_deterministic"

    def __init__(self, means, log_sigma_a: float = math.log(0.5), learn_sigma_a: bool = True, seed: int = 0):
        self._init_ls = log_sigma_a
        self.learn_sigma_a = learn_sigma_a
        super().__init__(means, seed)

    def _add_extra_params(self) -> None:
        self.store.add(LOG_SIGMA_A, np.full(self.act_dim, self._init_ls))

    @property
    def frozen(self) -> list[str]:
        return [] if self.learn_sigma_a else [LOG_SIGMA_A]

    def sample(self, obs, z, rng: np.random.Generator):
        """Draw ``(a, z', logp_a)``; ``z'`` is the exact recurrence."""
        mu_a, mu_z = self.mean_np(obs, z)
        sa = np.exp(self.store[LOG_SIGMA_A])
        a = mu_a + sa * rng.standard_normal(mu_a.shape)
        logp = _logpdf_np(a, mu_a, self.store[LOG_SIGMA_A])
        return a, mu_z, logp

    def act_mean(self, obs, z):
        return self.mean_np(obs, z)

    def states(self, obs_seq: np.ndarray, starts: np.ndarray | None = None,
               z0: np.ndarray | None = None) -> np.ndarray:
        """Internal states ``z_0..z_T`` for an observation sequence ``(T, B, obs_dim)``."""
        return self._states_with(self.params_np(), np.asarray(obs_seq, dtype=np.float64), starts, z0)

    def unroll_bptt(self, obs_seq, act_seq, truncation: int = 0, params: Mapping | None = None,
                    starts: np.ndarray | None = None, z0: np.ndarray | None = None) -> list[dc.Tensor]:
        """Per-step action log-densities, differentiated through the recurrence.

        ``obs_seq`` is ``(T, B, obs_dim)`` (or ``(T, obs_dim)``), ``act_seq``
        likewise. ``truncation`` is the window length: step ``t`` sees
        gradient through the ``truncation - 1`` transitions preceding it and
        treats the state at the window start as a constant, so ``1`` means
        "z_t is a constant input". ``0`` keeps the full history. ``starts``
        (``(T, B)`` bools) marks episode starts where the state resets to zero
        and no gradient crosses. ``z0`` (``(B, d_z)``, default zeros) is the
        state entering the first step, treated as a constant.
        """
        obs_seq = np.asarray(obs_seq, dtype=np.float64)
        act_seq = np.asarray(act_seq, dtype=np.float64)
        if obs_seq.shape[0] == 0:
            raise ValueError("empty episode")
        if truncation < 0:
            raise ValueError("truncation must be >= 0")
        if obs_seq.ndim == 2:
            obs_seq, act_seq = obs_seq[:, None, :], act_seq[:, None, :]
            if starts is not None:
                starts = np.asarray(starts)[:, None]
            if z0 is not None:
                z0 = np.asarray(z0, dtype=np.float64).reshape(1, -1)
        T, B = obs_seq.shape[:2]
        p = self.store.constants() if params is None else params
        keep = None
        if starts is not None:
            starts = np.asarray(starts, dtype=bool)
            keep = np.repeat((~starts)[:, :, None].astype(np.float64), self.d_z, axis=2)

        def cut(z, t):
            if keep is None or not starts[t].any():
                return z
            return dc.mul(z, keep[t])

        out = []
        if truncation == 0 or truncation >= T:
            z = dc.Tensor(np.zeros((B, self.d_z)) if z0 is None else np.array(z0, dtype=np.float64))
            for t in range(T):
                z = cut(z, t)
                mu = self.means.action_mean(p, obs_seq[t], z)
                out.append(dc.gaussian_logpdf_logstd(act_seq[t], mu, p[LOG_SIGMA_A]))
                if t < T - 1:
                    z = self.means.state_mean(p, obs_seq[t], z)
            return out

        zs = self._states_with(p, obs_seq, starts, z0)
        for t in range(T):
            start = max(0, t - truncation + 1)
            z = cut(dc.Tensor(zs[start]), start)
            for k in range(start, t):
                z = cut(self.means.state_mean(p, obs_seq[k], z), k + 1)
            mu = self.means.action_mean(p, obs_seq[t], z)
            out.append(dc.gaussian_logpdf_logstd(act_seq[t], mu, p[LOG_SIGMA_A]))
        return out

    def _states_with(self, params: Mapping, obs_seq, starts, z0=None) -> np.ndarray:
        # numpy replay of the recurrence at the values held by ``params``
        vals = {k: np.asarray(getattr(v, "data", v)) for k, v in params.items()}
        T, B = obs_seq.shape[:2]
        zs = np.zeros((T + 1, B, self.d_z))
        if z0 is not None:
            zs[0] = z0
        for t in range(T):
            z = zs[t]
            if starts is not None:
                z = np.where(starts[t][:, None], 0.0, z)
                zs[t] = z
            zs[t + 1] = self.means.state_mean_np(vals, obs_seq[t], z)
        return zs


class DeterministicStatefulPolicy(_PolicyBase):
    """``mu(o, z) = [mu^a(o, z), mu^z(o, z)]`` clipped to box bounds."""

    kind = "deterministic_stateful"

    def __init__(self, means, a_bounds=(-1.0, 1.0), z_bounds=(-1.0, 1.0), seed: int = 0):
        self.a_bounds = tuple(float(b) for b in a_bounds)
        self.z_bounds = tuple(float(b) for b in z_bounds)
        super().__init__(means, seed)

    def act(self, obs, z) -> tuple[np.ndarray, np.ndarray]:
        mu_a, mu_z = self.mean_np(obs, z)
        return np.clip(mu_a, *self.a_bounds), np.clip(mu_z, *self.z_bounds)

    def act_mean(self, obs, z):
        return self.act(obs, z)

    def means_tensor(self, obs, z, params: Mapping | None = None) -> tuple[dc.Tensor, dc.Tensor]:
        """Unclipped ``(mu^a, mu^z)``, differentiable through ``params``."""
        p = self.store.constants() if params is None else params
        return self.means.action_mean(p, obs, z), self.means.state_mean(p, obs, z)


# ---------------------------------------------------------------- functional


def sample(policy, obs, z, rng: np.random.Generator):
    return policy.sample(obs, z, rng)


def log_prob(policy: StatefulGaussianPolicy, obs, z, a, z_next, params=None) -> dc.Tensor:
    return policy.log_prob(obs, z, a, z_next, params)


def unroll_bptt(policy: RecurrentDeterministicPolicy, obs_seq, act_seq, truncation: int = 0, params=None, starts=None,
                z0=None):
    return policy.unroll_bptt(obs_seq, act_seq, truncation, params, starts, z0)


def act_deterministic(policy: DeterministicStatefulPolicy, obs, z):
    return policy.act(obs, z)
