"""Batched environment interface.

Every environment simulates ``n`` independent copies in lock step. ``reset``
and ``step`` return an :class:`EnvStep` whose arrays carry a leading batch
axis. Once a copy emits ``last`` (absorbing or horizon reached) it must be
reset, either all at once with :meth:`Env.reset` or selectively with
:meth:`Env.reset_done`; stepping it again raises :class:`EnvUsageError`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Any

import numpy as np

__all__ = ["EnvStep", "EnvConfig", "Env", "EnvUsageError", "dump_trajectory_csv"]


class EnvUsageError(RuntimeError):
    """Raised when an environment is driven outside its protocol."""


@dataclass
class EnvStep:
    obs: np.ndarray               # (n, obs_dim), masked view
    privileged_state: np.ndarray  # (n, state_dim), full state
    reward: np.ndarray            # (n,)
    absorbing: np.ndarray         # (n,) bool
    last: np.ndarray              # (n,) bool, absorbing or horizon reached
    info: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class EnvConfig:
    name: str
    horizon: int | None = None
    dt: float | None = None
    seed: int = 0
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.horizon is not None and int(self.horizon) < 1:
            raise ValueError("horizon must be >= 1")
        if self.dt is not None and not float(self.dt) > 0:
            raise ValueError("dt must be > 0")


class Env:
    """Shared bookkeeping: time counters, done flags, seeding.

    Subclasses implement ``_sample_initial(idx)``, ``_transition(action)`` and
    the two views ``_observe()`` / ``_privileged()``.
    """

    name = "env"
    obs_dim: int
    state_dim: int
    act_dim: int
    act_low: np.ndarray
    act_high: np.ndarray
    reward_bound: float
    horizon: int
    # per-copy state arrays (leading axis n), restored for frozen copies in step_partial
    _state_fields: tuple[str, ...] = ()

    def __init__(self, n: int = 1, horizon: int | None = None, seed: int | None = None):
        if n < 1:
            raise ValueError("n must be >= 1")
        if horizon is not None:
            if horizon < 1:
                raise ValueError("horizon must be >= 1")
            self.horizon = int(horizon)
        self.n = n
        self.rng = np.random.default_rng(seed)
        self.t = np.zeros(n, dtype=np.int64)
        self.done = np.ones(n, dtype=bool)

    # ------------------------------------------------------------ protocol

    def reset(self, seed: int | None = None) -> EnvStep:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        idx = np.arange(self.n)
        self._sample_initial(idx)
        self.t[:] = 0
        self.done[:] = False
        return self._emit(np.zeros(self.n), np.zeros(self.n, bool), np.zeros(self.n, bool))

    def reset_done(self) -> EnvStep:
        """Reset only the copies that finished; returns the current view of all copies."""
        idx = np.flatnonzero(self.done)
        if idx.size:
            self._sample_initial(idx)
            self.t[idx] = 0
            self.done[idx] = False
        return self._emit(np.zeros(self.n), np.zeros(self.n, bool), np.zeros(self.n, bool))

    def step(self, action) -> EnvStep:
        if self.done.any():
            raise EnvUsageError("step called on a finished episode; reset it first")
        action = np.asarray(action, dtype=np.float64).reshape(self.n, self.act_dim)
        if not np.isfinite(action).all():
            raise ValueError("non-finite action")
        action = np.clip(action, self.act_low, self.act_high)
        reward, absorbing, info = self._transition(action)
        self.t += 1
        last = absorbing | (self.t >= self.horizon)
        self.done = last.copy()
        return self._emit(reward, absorbing, last, info)

    def step_partial(self, action) -> EnvStep:
        """Advance only the unfinished copies; finished ones keep their state.

        Rows of finished copies in the returned step repeat their frozen view
        with zero reward and ``last=True``.
        """
        frozen = self.done.copy()
        if frozen.all():
            raise EnvUsageError("every copy has finished; reset first")
        saved = {k: getattr(self, k)[frozen].copy() for k in self._state_fields}
        self.done[:] = False
        t_saved = self.t[frozen].copy()
        out = self.step(action)
        for k, v in saved.items():
            getattr(self, k)[frozen] = v
        self.t[frozen] = t_saved
        self.done[frozen] = True
        view = self._emit(np.where(frozen, 0.0, out.reward), out.absorbing & ~frozen, out.last | frozen)
        view.info = {k: np.where(frozen, False, v) if v.dtype == bool else v for k, v in out.info.items()}
        return view

    def _emit(self, reward, absorbing, last, info=None) -> EnvStep:
        return EnvStep(self._observe(), self._privileged(), np.asarray(reward, dtype=np.float64),
                       np.asarray(absorbing, bool).copy(), np.asarray(last, bool).copy(), info or {})

    # ---------------------------------------------------------- subclasses

    def _sample_initial(self, idx: np.ndarray) -> None:
        raise NotImplementedError

    def _transition(self, action: np.ndarray):
        raise NotImplementedError

    def _observe(self) -> np.ndarray:
        raise NotImplementedError

    def _privileged(self) -> np.ndarray:
        raise NotImplementedError

    def spec(self) -> dict:
        return {
            "name": self.name,
            "obs_dim": self.obs_dim,
            "state_dim": self.state_dim,
            "act_dim": self.act_dim,
            "horizon": self.horizon,
            "reward_bound": self.reward_bound,
        }


def dump_trajectory_csv(path, steps) -> None:
    """Write one row per step: t, s..., o..., z..., a..., r, absorbing.

    ``steps`` is an iterable of mappings with keys ``t``, ``s``, ``o``, ``z``,
    ``a``, ``r`` and ``absorbing`` for a single episode.
    """
    steps = list(steps)
    if not steps:
        raise ValueError("no steps to write")
    widths = {k: np.size(steps[0][k]) for k in ("s", "o", "z", "a")}
    header = ["t"] + [f"{k}{i}" for k in ("s", "o", "z", "a") for i in range(widths[k])] + ["r", "absorbing"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in steps:
            vals = [int(row["t"])]
            for k in ("s", "o", "z", "a"):
                vals.extend(repr(float(x)) for x in np.ravel(row[k]))
            vals.extend([repr(float(row["r"])), int(bool(row["absorbing"]))])
            w.writerow(vals)
