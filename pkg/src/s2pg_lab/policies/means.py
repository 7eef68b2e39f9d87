"""Mean functions of stateful policies: action mean f and internal-state mean eta.

A mean model owns no parameter values. It declares parameters into a
:class:`ParameterStore` and evaluates ``f(obs, z)`` / ``eta(obs, z)`` on
row-batched inputs, either on tape tensors or on plain arrays.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

import s2pg_lab.diffcore as dc
from s2pg_lab.policies.networks import MLP, GatedCell

__all__ = ["NeuralMeans", "ScalarLinearMeans"]


class NeuralMeans:
    """``f`` is an MLP over ``[obs, z]``; ``eta`` is a gated cell of width ``d_z``.

    ``d_z = 0`` gives a memoryless policy (``f`` sees only the observation).
    With ``state_embed > 0`` the cell reads ``tanh(obs W + b)`` of that width
    instead of the raw observation, so its gates can respond to nonlinear
    features such as "this coordinate is masked".
    """

    supports_per_sample = False

    def __init__(self, obs_dim: int, act_dim: int, d_z: int = 8, hidden: Sequence[int] = (32, 32),
                 activation: str = "tanh", action_out_scale: float = 0.01, gate_bias: float = 0.0,
                 state_embed: int = 0):
        if obs_dim < 1 or act_dim < 1 or d_z < 0:
            raise ValueError("obs_dim and act_dim must be >= 1, d_z >= 0")
        self.obs_dim, self.act_dim, self.d_z = obs_dim, act_dim, d_z
        self.hidden = tuple(hidden)
        self.activation = activation
        self.f = MLP("f", [obs_dim + d_z, *hidden, act_dim], activation, out_scale=action_out_scale)
        self.state_embed = state_embed if d_z > 0 else 0
        self.embed = MLP("eta_in", [obs_dim, self.state_embed]) if self.state_embed else None
        cell_in = self.state_embed or obs_dim
        self.eta = GatedCell("eta", cell_in, d_z, gate_bias) if d_z > 0 else None

    def init(self, store: dc.ParameterStore, rng: np.random.Generator) -> None:
        self.f.init(store, rng)
        if self.embed is not None:
            self.embed.init(store, rng)
        if self.eta is not None:
            self.eta.init(store, rng)

    def param_names(self) -> list[str]:
        names = self.f.param_names() + (self.embed.param_names() if self.embed else [])
        return names + (self.eta.param_names() if self.eta else [])

    def _fin(self, obs, z):
        return obs if self.d_z == 0 else dc.concat([obs, z], axis=-1)

    def action_mean(self, params: Mapping, obs, z) -> dc.Tensor:
        return self.f(params, self._fin(obs, z))

    def state_mean(self, params: Mapping, obs, z) -> dc.Tensor:
        if self.eta is None:
            return dc.Tensor(np.zeros(np.shape(getattr(obs, "data", obs))[:-1] + (0,)))
        if self.embed is not None:
            obs = dc.tanh(self.embed(params, obs))
        return self.eta(params, obs, z)

    def action_mean_np(self, params: Mapping, obs: np.ndarray, z: np.ndarray) -> np.ndarray:
        x = obs if self.d_z == 0 else np.concatenate([obs, z], axis=-1)
        return self.f.forward_np(params, x)

    def state_mean_np(self, params: Mapping, obs: np.ndarray, z: np.ndarray) -> np.ndarray:
        if self.eta is None:
            return np.zeros(obs.shape[:-1] + (0,))
        if self.embed is not None:
            obs = np.tanh(self.embed.forward_np(params, obs))
        return self.eta.forward_np(params, obs, z)

    def describe(self) -> dict:
        return {
            "kind": "neural",
            "obs_dim": self.obs_dim,
            "act_dim": self.act_dim,
            "d_z": self.d_z,
            "f": self.f.describe(),
            "eta": self.eta.describe() if self.eta else None,
            "state_embed": self.state_embed,
        }


class ScalarLinearMeans:
    """Scalar linear recurrence used by the diagnostic chain.

    ``f = f_s * obs + f_z * z`` and ``eta = eta_s * obs + eta_z * z``. Each
    coefficient is either learnable (listed in ``init``) or a fixed constant
    (listed in ``fixed``). Learnable coefficients are stored with shape ``(1,)``
    and tiled to the batch, which lets callers substitute one coefficient copy
    per sample to obtain per-trajectory gradients from a single backward pass.
    """

    supports_per_sample = True
    COEFFS = ("f_s", "f_z", "eta_s", "eta_z")

    def __init__(self, init: Mapping[str, float], fixed: Mapping[str, float] | None = None):
        fixed = dict(fixed or {})
        unknown = (set(init) | set(fixed)) - set(self.COEFFS)
        if unknown:
            raise ValueError(f"unknown coefficients {sorted(unknown)}")
        if set(init) & set(fixed):
            raise ValueError("a coefficient cannot be both learnable and fixed")
        self.initial = {k: float(v) for k, v in init.items()}
        self.fixed = {k: float(fixed.get(k, 0.0)) for k in self.COEFFS if k not in init}
        self.obs_dim = self.act_dim = self.d_z = 1

    def init(self, store: dc.ParameterStore, rng: np.random.Generator) -> None:
        for name in self.COEFFS:
            if name in self.initial:
                store.add(name, np.array([self.initial[name]]))

    def param_names(self) -> list[str]:
        return [n for n in self.COEFFS if n in self.initial]

    def _coef(self, params: Mapping, name: str, rows: int):
        if name in self.fixed:
            return self.fixed[name]
        w = dc.as_tensor(params[name])
        return dc.expand_rows(w, rows) if w.ndim == 1 else w

    def action_mean(self, params: Mapping, obs, z) -> dc.Tensor:
        obs, z = dc.as_tensor(obs), dc.as_tensor(z)
        rows = obs.shape[0]
        return dc.add(dc.mul(self._coef(params, "f_s", rows), obs), dc.mul(self._coef(params, "f_z", rows), z))

    def state_mean(self, params: Mapping, obs, z) -> dc.Tensor:
        obs, z = dc.as_tensor(obs), dc.as_tensor(z)
        rows = obs.shape[0]
        return dc.add(dc.mul(self._coef(params, "eta_s", rows), obs), dc.mul(self._coef(params, "eta_z", rows), z))

    def _coef_np(self, params, name):
        return self.fixed[name] if name in self.fixed else params[name]

    def action_mean_np(self, params: Mapping, obs: np.ndarray, z: np.ndarray) -> np.ndarray:
        return self._coef_np(params, "f_s") * obs + self._coef_np(params, "f_z") * z

    def state_mean_np(self, params: Mapping, obs: np.ndarray, z: np.ndarray) -> np.ndarray:
        return self._coef_np(params, "eta_s") * obs + self._coef_np(params, "eta_z") * z

    def describe(self) -> dict:
        return {"kind": "scalar_linear", "learnable": sorted(self.initial), "fixed": self.fixed}
