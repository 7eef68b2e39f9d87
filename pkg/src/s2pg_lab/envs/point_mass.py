"""Point-mass navigation tasks whose key information is visible only at the start.

Both tasks share a damped double integrator in the box ``[-1, 1]^2``. The
observation shows the task variable (goal or door positions) only while the
mass is within ``blind_radius`` of where the episode started; afterwards those
entries read zero and the policy has to remember them.
"""

from __future__ import annotations

import numpy as np

from s2pg_lab import kernels
from s2pg_lab.envs.base import Env

__all__ = ["PointMassMemory", "PointMassDoor"]


class _PointMass(Env):
    act_dim = 2
    act_low = -np.ones(2)
    act_high = np.ones(2)

    def __init__(self, n=1, horizon=None, seed=None, dt=0.05, damping=0.95, blind_radius=0.25,
                 goal_radius=0.05, goal_reward=10.0):
        super().__init__(n, horizon, seed)
        self.dt, self.damping = float(dt), float(damping)
        self.blind_radius, self.goal_radius = float(blind_radius), float(goal_radius)
        self.goal_reward = float(goal_reward)
        self.pos = np.zeros((n, 2))
        self.vel = np.zeros((n, 2))
        self.pos0 = np.zeros((n, 2))

    def visible(self) -> np.ndarray:
        """Whether the task variable is shown (mass still inside the start area)."""
        return np.linalg.norm(self.pos - self.pos0, axis=1) < self.blind_radius

    def _move(self, action):
        return kernels.point_mass_integrate(self.pos, self.vel, action, self.dt, self.damping)


class PointMassMemory(_PointMass):
    """Reach a goal that is visible only inside the start area.

    Reward is ``-|pos - goal|`` each step. Within ``goal_radius`` of the goal the
    episode ends in an absorbing state and the step reward gains ``+10``.
    """

    name = "point_mass_memory"
    _state_fields = ("pos", "vel", "pos0", "goal")
    obs_dim = 6
    state_dim = 6
    horizon = 200
    reward_bound = 10.0

    def __init__(self, n=1, horizon=None, seed=None, start_range=0.8, min_goal_distance=0.5, **kw):
        super().__init__(n, horizon, seed, **kw)
        self.start_range = float(start_range)
        self.min_goal_distance = float(min_goal_distance)
        self.goal = np.zeros((n, 2))

    def _sample_initial(self, idx):
        m = idx.size
        lo, hi = -self.start_range, self.start_range
        start = self.rng.uniform(lo, hi, (m, 2))
        goal = self.rng.uniform(lo, hi, (m, 2))
        # resample goals that sit too close to the start (they would be solvable without memory)
        bad = np.linalg.norm(goal - start, axis=1) < self.min_goal_distance
        while bad.any():
            goal[bad] = self.rng.uniform(lo, hi, (int(bad.sum()), 2))
            bad = np.linalg.norm(goal - start, axis=1) < self.min_goal_distance
        self.pos[idx] = start
        self.pos0[idx] = start
        self.vel[idx] = 0.0
        self.goal[idx] = goal

    def _transition(self, action):
        self.pos, self.vel = self._move(action)
        dist = np.linalg.norm(self.pos - self.goal, axis=1)
        success = dist < self.goal_radius
        reward = -dist + self.goal_reward * success
        return reward, success, {"success": success}

    def _observe(self):
        shown = self.goal * self.visible()[:, None]
        return np.concatenate([self.pos, self.vel, shown], axis=1)

    def _privileged(self):
        return np.concatenate([self.pos, self.vel, self.goal], axis=1)


class PointMassDoor(_PointMass):
    """Cross a wall at ``y = 0`` through one of two doors to reach ``(0, 0.8)``.

    Door centers are visible only inside the start area. Touching the wall
    outside a door ends the episode in an absorbing state with reward ``-10``.
    """

    name = "point_mass_door"
    _state_fields = ("pos", "vel", "pos0", "doors")
    obs_dim = 6
    state_dim = 6
    horizon = 300
    reward_bound = 10.0

    def __init__(self, n=1, horizon=None, seed=None, door_width=0.2, wall_penalty=10.0,
                 goal=(0.0, 0.8), **kw):
        super().__init__(n, horizon, seed, **kw)
        self.half_width = 0.5 * float(door_width)
        self.wall_penalty = float(wall_penalty)
        self.goal = np.tile(np.asarray(goal, dtype=np.float64), (n, 1))
        self.doors = np.zeros((n, 2))

    def _sample_initial(self, idx):
        m = idx.size
        limit = 1.0 - self.half_width
        self.doors[idx] = self.rng.uniform(-limit, limit, (m, 2))
        start = np.column_stack([self.rng.uniform(-0.8, 0.8, m), self.rng.uniform(-0.8, -0.3, m)])
        self.pos[idx] = start
        self.pos0[idx] = start
        self.vel[idx] = 0.0

    def _transition(self, action):
        new_pos, new_vel = self._move(action)
        hit = kernels.wall_contact(self.pos, new_pos, self.doors, self.half_width)
        self.pos, self.vel = new_pos, new_vel
        dist = np.linalg.norm(self.pos - self.goal, axis=1)
        success = (dist < self.goal_radius) & ~hit
        reward = np.where(hit, -self.wall_penalty, -dist + self.goal_reward * success)
        return reward, hit | success, {"success": success, "wall": hit}

    def _observe(self):
        shown = self.doors * self.visible()[:, None]
        return np.concatenate([self.pos, self.vel, shown], axis=1)

    def _privileged(self):
        return np.concatenate([self.pos, self.vel, self.doors], axis=1)
