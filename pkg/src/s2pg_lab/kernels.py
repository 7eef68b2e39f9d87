"""Sequential and per-element numeric kernels.

Every public kernel exists twice: a loop version compiled by numba and a
numpy version. ``S2PG_LAB_NUMBA=0`` selects the numpy versions (see
:mod:`s2pg_lab._accel`). Both versions must agree to floating point round-off;
``tests/test_kernels.py`` and ``benchmarks/bench_kernels.py`` compare them.
"""

from __future__ import annotations

import numpy as np

from s2pg_lab._accel import njit, select

__all__ = [
    "gae",
    "reward_to_go",
    "episode_returns",
    "point_mass_integrate",
    "wall_contact",
    "pendulum_step",
    "KERNELS",
]


# --------------------------------------------------------------------------- GAE


@njit
def _gae_numba(rewards, values, next_values, absorbing, last, gamma, lam):
    n = rewards.shape[0]
    adv = np.empty(n)
    for k_rev in range(n):
        k = n - k_rev - 1
        if last[k]:
            if absorbing[k]:
                adv[k] = rewards[k] - values[k]
            else:
                adv[k] = rewards[k] + gamma * next_values[k] - values[k]
        else:
            adv[k] = rewards[k] + gamma * next_values[k] - values[k] + gamma * lam * adv[k + 1]
    return adv


def _gae_numpy(rewards, values, next_values, absorbing, last, gamma, lam):
    n = rewards.shape[0]
    next_values = np.where(absorbing & last, 0.0, next_values)
    delta = rewards + gamma * next_values - values
    adv = np.empty(n)
    carry = 0.0
    # the recurrence is sequential; numpy only vectorizes the residuals
    for k in range(n - 1, -1, -1):
        if last[k]:
            carry = delta[k]
        else:
            carry = delta[k] + gamma * lam * carry
        adv[k] = carry
    return adv


# ------------------------------------------------------------------ returns


@njit
def _reward_to_go_numba(rewards, last, gamma):
    n = rewards.shape[0]
    out = np.empty(n)
    carry = 0.0
    for k in range(n - 1, -1, -1):
        if last[k]:
            carry = 0.0
        carry = rewards[k] + gamma * carry
        out[k] = carry
    return out


def _reward_to_go_numpy(rewards, last, gamma):
    n = rewards.shape[0]
    out = np.empty(n)
    if n == 0:
        return out
    # split at episode ends and use a discount-matrix contraction per episode
    ends = np.flatnonzero(last)
    if ends.size == 0 or ends[-1] != n - 1:
        ends = np.append(ends, n - 1)
    start = 0
    for end in ends:
        seg = rewards[start:end + 1]
        m = seg.shape[0]
        # out[t] = sum_{k>=t} gamma^(k-t) r_k as an upper-triangular product
        lag = np.arange(m)[None, :] - np.arange(m)[:, None]
        weights = np.where(lag >= 0, gamma ** np.maximum(lag, 0), 0.0)
        out[start:end + 1] = weights @ seg
        start = end + 1
    return out


@njit
def _episode_returns_numba(rewards, last, gamma):
    n = rewards.shape[0]
    count = 0
    for k in range(n):
        if last[k]:
            count += 1
    if n > 0 and not last[n - 1]:
        count += 1
    out = np.zeros(count)
    ep = 0
    disc = 1.0
    for k in range(n):
        out[ep] += disc * rewards[k]
        disc *= gamma
        if last[k]:
            ep += 1
            disc = 1.0
    return out


def _episode_returns_numpy(rewards, last, gamma):
    n = rewards.shape[0]
    if n == 0:
        return np.zeros(0)
    episode = np.concatenate(([0], np.cumsum(last[:-1].astype(np.int64))))
    starts = np.flatnonzero(np.concatenate(([True], last[:-1])))
    t = np.arange(n) - starts[episode]
    return np.bincount(episode, weights=rewards * gamma ** t)


# --------------------------------------------------------------- point mass


@njit
def _point_mass_numba(pos, vel, act, dt, damping, bound):
    n, d = pos.shape
    new_pos = np.empty_like(pos)
    new_vel = np.empty_like(vel)
    for i in range(n):
        for j in range(d):
            a = min(max(act[i, j], -1.0), 1.0)
            v = min(max(damping * vel[i, j] + dt * a, -1.0), 1.0)
            p = pos[i, j] + dt * v
            if p > bound:
                p = bound
                v = 0.0
            elif p < -bound:
                p = -bound
                v = 0.0
            new_pos[i, j] = p
            new_vel[i, j] = v
    return new_pos, new_vel


def _point_mass_numpy(pos, vel, act, dt, damping, bound):
    a = np.clip(act, -1.0, 1.0)
    v = np.clip(damping * vel + dt * a, -1.0, 1.0)
    p = pos + dt * v
    hit = np.abs(p) > bound
    return np.clip(p, -bound, bound), np.where(hit, 0.0, v)


@njit
def _wall_contact_numba(pos, new_pos, doors, half_width):
    n = pos.shape[0]
    out = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        y0 = pos[i, 1]
        y1 = new_pos[i, 1]
        if (y0 < 0.0 and y1 >= 0.0) or (y0 >= 0.0 and y1 < 0.0):
            if y1 == y0:
                x = pos[i, 0]
            else:
                x = pos[i, 0] + (new_pos[i, 0] - pos[i, 0]) * (-y0) / (y1 - y0)
            through_door = False
            for j in range(doors.shape[1]):
                if abs(x - doors[i, j]) <= half_width:
                    through_door = True
            out[i] = not through_door
    return out


def _wall_contact_numpy(pos, new_pos, doors, half_width):
    y0 = pos[:, 1]
    y1 = new_pos[:, 1]
    crosses = ((y0 < 0.0) & (y1 >= 0.0)) | ((y0 >= 0.0) & (y1 < 0.0))
    dy = np.where(y1 == y0, 1.0, y1 - y0)
    x = pos[:, 0] + (new_pos[:, 0] - pos[:, 0]) * (-y0) / dy
    through = (np.abs(x[:, None] - doors) <= half_width).any(axis=1)
    return crosses & ~through


# ----------------------------------------------------------------- pendulum


@njit
def _pendulum_numba(theta, theta_dot, torque, dt, g, m, length, max_speed):
    n = theta.shape[0]
    new_theta = np.empty(n)
    new_dot = np.empty(n)
    reward = np.empty(n)
    for i in range(n):
        th = theta[i]
        wrapped = ((th + np.pi) % (2.0 * np.pi)) - np.pi
        u = torque[i]
        reward[i] = -(wrapped * wrapped + 0.1 * theta_dot[i] ** 2 + 0.001 * u * u)
        acc = 3.0 * g / (2.0 * length) * np.sin(th) + 3.0 / (m * length * length) * u
        w = theta_dot[i] + acc * dt
        w = min(max(w, -max_speed), max_speed)
        new_dot[i] = w
        new_theta[i] = th + w * dt
    return new_theta, new_dot, reward


def _pendulum_numpy(theta, theta_dot, torque, dt, g, m, length, max_speed):
    wrapped = ((theta + np.pi) % (2.0 * np.pi)) - np.pi
    reward = -(wrapped ** 2 + 0.1 * theta_dot ** 2 + 0.001 * torque ** 2)
    acc = 3.0 * g / (2.0 * length) * np.sin(theta) + 3.0 / (m * length * length) * torque
    w = np.clip(theta_dot + acc * dt, -max_speed, max_speed)
    return theta + w * dt, w, reward


# ------------------------------------------------------------- public names


def gae(rewards, values, next_values, absorbing, last, gamma: float, lam: float) -> np.ndarray:
    """Reverse GAE recursion over a flat dataset (episodes delimited by ``last``)."""
    return _gae(
        np.ascontiguousarray(rewards, dtype=np.float64),
        np.ascontiguousarray(values, dtype=np.float64),
        np.ascontiguousarray(next_values, dtype=np.float64),
        np.ascontiguousarray(absorbing, dtype=np.bool_),
        np.ascontiguousarray(last, dtype=np.bool_),
        float(gamma),
        float(lam),
    )


def reward_to_go(rewards, last, gamma: float) -> np.ndarray:
    """``out[t] = sum_{k>=t} gamma^(k-t) r_k`` within each episode."""
    return _reward_to_go(
        np.ascontiguousarray(rewards, dtype=np.float64),
        np.ascontiguousarray(last, dtype=np.bool_),
        float(gamma),
    )


def episode_returns(rewards, last, gamma: float) -> np.ndarray:
    """Discounted return of every episode in a flat dataset."""
    return _episode_returns(
        np.ascontiguousarray(rewards, dtype=np.float64),
        np.ascontiguousarray(last, dtype=np.bool_),
        float(gamma),
    )


def point_mass_integrate(pos, vel, act, dt: float, damping: float, bound: float = 1.0):
    """One damped double-integrator step with box walls; returns (pos, vel)."""
    return _point_mass(
        np.ascontiguousarray(pos, dtype=np.float64),
        np.ascontiguousarray(vel, dtype=np.float64),
        np.ascontiguousarray(act, dtype=np.float64),
        float(dt),
        float(damping),
        float(bound),
    )


def wall_contact(pos, new_pos, doors, half_width: float) -> np.ndarray:
    """True where the segment pos->new_pos crosses y=0 outside every door gap."""
    return _wall_contact(
        np.ascontiguousarray(pos, dtype=np.float64),
        np.ascontiguousarray(new_pos, dtype=np.float64),
        np.ascontiguousarray(doors, dtype=np.float64),
        float(half_width),
    )


def pendulum_step(theta, theta_dot, torque, dt, g, m, length, max_speed):
    """Torque-limited pendulum; returns (theta, theta_dot, reward of the pre-step state)."""
    return _pendulum(
        np.ascontiguousarray(theta, dtype=np.float64),
        np.ascontiguousarray(theta_dot, dtype=np.float64),
        np.ascontiguousarray(torque, dtype=np.float64),
        float(dt),
        float(g),
        float(m),
        float(length),
        float(max_speed),
    )


_gae = select(_gae_numba, _gae_numpy)
_reward_to_go = select(_reward_to_go_numba, _reward_to_go_numpy)
_episode_returns = select(_episode_returns_numba, _episode_returns_numpy)
_point_mass = select(_point_mass_numba, _point_mass_numpy)
_wall_contact = select(_wall_contact_numba, _wall_contact_numpy)
_pendulum = select(_pendulum_numba, _pendulum_numpy)

# (numba, numpy) pairs, used by the equivalence tests and the benchmark
KERNELS = {
    "gae": (_gae_numba, _gae_numpy),
    "reward_to_go": (_reward_to_go_numba, _reward_to_go_numpy),
    "episode_returns": (_episode_returns_numba, _episode_returns_numpy),
    "point_mass_integrate": (_point_mass_numba, _point_mass_numpy),
    "wall_contact": (_wall_contact_numba, _wall_contact_numpy),
    "pendulum_step": (_pendulum_numba, _pendulum_numpy),
}
