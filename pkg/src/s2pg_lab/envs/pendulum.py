"""Torque-limited pendulum swing-up with the angular velocity hidden."""

from __future__ import annotations

import numpy as np

from s2pg_lab import kernels
from s2pg_lab.envs.base import Env

__all__ = ["MaskedPendulum"]


class MaskedPendulum(Env):
    """Classic swing-up; the observation zeroes the velocity slot.

    ``obs = (cos th, sin th, 0)`` and ``privileged_state = (cos th, sin th, th_dot)``.
    The reward ``-(th^2 + 0.1 th_dot^2 + 0.001 u^2)`` uses the angle wrapped to
    ``[-pi, pi)`` and is evaluated on the state before the step. Set
    ``mask_velocity=False`` to get the fully observed task.
    """

    name = "masked_pendulum"
    obs_dim = 3
    _state_fields = ("theta", "theta_dot")
    state_dim = 3
    act_dim = 1
    horizon = 200

    def __init__(self, n=1, horizon=None, seed=None, dt=0.05, g=9.81, mass=1.0, length=1.0,
                 max_torque=2.0, max_speed=8.0, mask_velocity=True):
        super().__init__(n, horizon, seed)
        self.dt, self.g, self.mass, self.length = float(dt), float(g), float(mass), float(length)
        self.max_torque, self.max_speed = float(max_torque), float(max_speed)
        self.mask_velocity = bool(mask_velocity)
        self.act_low = np.array([-self.max_torque])
        self.act_high = np.array([self.max_torque])
        self.reward_bound = np.pi ** 2 + 0.1 * self.max_speed ** 2 + 0.001 * self.max_torque ** 2
        self.theta = np.zeros(n)
        self.theta_dot = np.zeros(n)

    def _sample_initial(self, idx):
        self.theta[idx] = self.rng.uniform(-np.pi, np.pi, idx.size)
        self.theta_dot[idx] = self.rng.uniform(-1.0, 1.0, idx.size)

    def _transition(self, action):
        self.theta, self.theta_dot, reward = kernels.pendulum_step(
            self.theta, self.theta_dot, action[:, 0], self.dt, self.g, self.mass, self.length, self.max_speed)
        return reward, np.zeros(self.n, bool), {}

    def _observe(self):
        vel = np.zeros(self.n) if self.mask_velocity else self.theta_dot
        return np.column_stack([np.cos(self.theta), np.sin(self.theta), vel])

    def _privileged(self):
        return np.column_stack([np.cos(self.theta), np.sin(self.theta), self.theta_dot])
