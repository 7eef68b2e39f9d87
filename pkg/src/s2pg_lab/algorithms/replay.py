"""FIFO replay buffer with optional internal-state refresh.

Each transition stores the standardized noise ``eps`` that produced its next
internal state, ``z' = next_state(x, z, eps)``. With ``refresh="on_sample"``
the sampled transitions get their ``z`` and ``z'`` regenerated by replaying
``next_state`` of the *current* policy along the stored episode prefix (at
most ``refresh_cap`` steps back; the state at the start of that window, or at
the oldest step still stored, is taken as stored). With an unchanged policy
the replay reproduces the stored states exactly.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

__all__ = ["ReplayBuffer"]

FIELDS = ("obs", "privileged", "z", "a", "z_next", "z_eps", "reward", "next_obs", "next_privileged", "absorbing")


class ReplayBuffer:
    def __init__(self, capacity: int, obs_dim: int, state_dim: int, act_dim: int, d_z: int,
                 refresh: str = "off", refresh_cap: int = 64, policy_input: str = "obs"):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        if refresh not in ("off", "on_sample"):
            raise ValueError("refresh must be 'off' or 'on_sample'")
        if policy_input not in ("obs", "privileged"):
            raise ValueError("policy_input must be 'obs' or 'privileged'")
        if refresh_cap < 0:
            raise ValueError("refresh_cap must be >= 0")
        self.capacity = capacity
        self.refresh = refresh
        self.refresh_cap = refresh_cap
        self.x_key = policy_input
        self.d_z = d_z
        shapes = {"obs": obs_dim, "privileged": state_dim, "z": d_z, "a": act_dim, "z_next": d_z, "z_eps": d_z,
                  "next_obs": obs_dim, "next_privileged": state_dim}
        self.data = {k: np.zeros((capacity, w)) for k, w in shapes.items()}
        self.data["reward"] = np.zeros(capacity)
        self.data["absorbing"] = np.zeros(capacity, bool)
        self.episode = np.full(capacity, -1, dtype=np.int64)
        self.step_index = np.zeros(capacity, dtype=np.int64)
        # slot of the same episode's previous step; checked against episode/step before use
        self.prev = np.full(capacity, -1, dtype=np.int64)
        self._newest: dict[int, tuple[int, int]] = {}   # episode -> (slot, step) of its latest transition
        self.ptr = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add(self, episode_id, step_index, **fields) -> None:
        """Append a batch of transitions (leading axis = batch)."""
        ep = np.atleast_1d(np.asarray(episode_id, dtype=np.int64))
        k = np.atleast_1d(np.asarray(step_index, dtype=np.int64))
        missing = set(FIELDS) - set(fields)
        if missing:
            raise ValueError(f"missing fields {sorted(missing)}")
        n = ep.shape[0]
        if n > self.capacity:
            raise ValueError("batch larger than the buffer capacity")
        slots = (self.ptr + np.arange(n)) % self.capacity
        for key in FIELDS:
            self.data[key][slots] = np.asarray(fields[key]).reshape(self.data[key][slots].shape)
        self.episode[slots] = ep
        self.step_index[slots] = k
        for s, e, t in zip(slots.tolist(), ep.tolist(), k.tolist()):
            prior = self._newest.get(e)
            self.prev[s] = prior[0] if prior is not None and prior[1] == t - 1 else -1
            self._newest[e] = (s, t)
        if len(self._newest) > 4 * n + 64:
            # drop episodes whose newest transition has been overwritten or that ended long ago
            self._newest = {e: v for e, v in self._newest.items()
                            if self.episode[v[0]] == e and (self.ptr - v[0]) % self.capacity < 4 * n + 64}
        self.ptr = int((self.ptr + n) % self.capacity)
        self.size = min(self.size + n, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator,
               next_state: Callable | None = None) -> dict[str, np.ndarray]:
        """Uniform minibatch; refreshed when enabled and ``next_state`` is given."""
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, self.size, batch_size)
        batch = {k: v[idx].copy() for k, v in self.data.items()}
        batch["slot"] = idx
        batch["episode"] = self.episode[idx].copy()
        batch["step_index"] = self.step_index[idx].copy()
        if self.refresh == "on_sample" and next_state is not None and self.d_z > 0:
            batch["z"], batch["z_next"] = self.refreshed_states(idx, next_state)
        return batch

    def _predecessor(self, slots: np.ndarray) -> np.ndarray:
        """Previous-step slot of each entry, or -1 when absent or overwritten."""
        have = slots >= 0
        cur = np.where(have, slots, 0)
        p = np.where(have, self.prev[cur], -1)
        safe = np.maximum(p, 0)
        ok = (p >= 0) & (self.episode[safe] == self.episode[cur]) & (self.step_index[safe] == self.step_index[cur] - 1)
        return np.where(ok, p, -1)

    def refreshed_states(self, idx: np.ndarray, next_state: Callable):
        """Replay ``next_state`` from the oldest reachable step up to each sampled one."""
        idx = np.asarray(idx)
        chain = [idx]
        for _ in range(self.refresh_cap):
            back = self._predecessor(chain[-1])
            if (back < 0).all():
                break
            chain.append(back)
        x = self.data[self.x_key]
        z = np.zeros((idx.shape[0], self.d_z))
        started = np.zeros(idx.shape[0], bool)
        # chain[j] is j steps back; seed each row at its deepest ancestor, then step forward
        for j in range(len(chain) - 1, 0, -1):
            s = chain[j]
            fresh = (s >= 0) & ~started
            z[fresh] = self.data["z"][s[fresh]]
            started |= fresh
            rows = np.flatnonzero(started)
            if rows.size:
                z[rows] = next_state(x[s[rows]], z[rows], self.data["z_eps"][s[rows]])
        fresh = ~started
        z[fresh] = self.data["z"][idx[fresh]]
        z_next = next_state(x[idx], z, self.data["z_eps"][idx])
        return z, z_next
