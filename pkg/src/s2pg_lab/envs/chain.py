"""Scalar diagnostic chain used as an exact-gradient substrate.

``s_{t+1} = s_t + a_t`` with ``s_0 ~ N(0, init_std^2)`` and reward
``r_t = -(s_t + a_t)^2``, the squared distance of the state the action leads
to. With ``clip`` set, states are clipped to ``[-clip, clip]`` (the initial
state included) and the reward is ``-s_{t+1}^2``, so it is bounded by
``clip^2``.
"""

from __future__ import annotations

import numpy as np

from s2pg_lab.envs.base import Env

__all__ = ["ChainDiagnostic"]


class ChainDiagnostic(Env):
    name = "chain"
    obs_dim = 1
    _state_fields = ("s",)
    state_dim = 1
    act_dim = 1
    horizon = 2

    def __init__(self, n=1, horizon=None, seed=None, init_std=1.0, clip=None):
        super().__init__(n, horizon, seed)
        self.init_std = float(init_std)
        self.clip = None if clip is None else float(clip)
        self.act_low = np.array([-np.inf])
        self.act_high = np.array([np.inf])
        self.reward_bound = np.inf if self.clip is None else self.clip ** 2
        self.s = np.zeros(n)

    def _bound(self, x):
        return x if self.clip is None else np.clip(x, -self.clip, self.clip)

    def _sample_initial(self, idx):
        self.s[idx] = self._bound(self.init_std * self.rng.standard_normal(idx.size))

    def _transition(self, action):
        self.s = self._bound(self.s + action[:, 0])
        return -self.s ** 2, np.zeros(self.n, bool), {}

    def _observe(self):
        return self.s[:, None].copy()

    def _privileged(self):
        return self.s[:, None].copy()
