"""Value and action-value critics.

A critic owns a parameter store with one or two heads (``q0``/``q1`` or
``v0``). Its input is ``[x, z]`` for state values and ``[x, z, a, z']`` for
action values, where ``x`` is the privileged state or the observation
depending on ``input_mode``.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

import s2pg_lab.diffcore as dc
from s2pg_lab.policies.networks import MLP

__all__ = ["Critic", "critic_input"]


def critic_input(batch: Mapping[str, np.ndarray], input_mode: str, next_step: bool = False) -> np.ndarray:
    """Pick the critic's view of a batch: privileged state or observation, never both."""
    if input_mode == "privileged":
        return batch["next_privileged" if next_step else "privileged"]
    if input_mode == "observation":
        return batch["next_obs" if next_step else "obs"]
    raise ValueError(f"unknown input_mode {input_mode!r}")


class Critic:
    def __init__(self, x_dim: int, d_z: int, act_dim: int = 0, kind: str = "q", twin: bool = True,
                 hidden: Sequence[int] = (64, 64), activation: str = "relu", input_mode: str = "privileged",
                 use_z: bool = True, seed: int = 0):
        if kind not in ("q", "v"):
            raise ValueError("kind must be 'q' or 'v'")
        if input_mode not in ("privileged", "observation"):
            raise ValueError("input_mode must be 'privileged' or 'observation'")
        self.kind, self.twin, self.input_mode, self.use_z = kind, twin, input_mode, use_z
        self.x_dim, self.d_z, self.act_dim = x_dim, d_z, act_dim
        width = x_dim + (d_z if use_z else 0)
        if kind == "q":
            width += act_dim + (d_z if use_z else 0)
        self.in_dim = width
        n_heads = 2 if twin else 1
        self.heads = [MLP(f"{kind}{i}", [width, *hidden, 1], activation) for i in range(n_heads)]
        self.store = dc.ParameterStore()
        rng = np.random.default_rng(seed)
        for h in self.heads:
            h.init(self.store, rng)
        self.store.seal()

    def features(self, x, z, a=None, z_next=None) -> np.ndarray:
        parts = [np.asarray(x, dtype=np.float64)]
        if self.use_z:
            parts.append(np.asarray(z, dtype=np.float64))
        if self.kind == "q":
            parts.append(np.asarray(a, dtype=np.float64))
            if self.use_z:
                parts.append(np.asarray(z_next, dtype=np.float64))
        feats = np.concatenate(parts, axis=-1)
        if feats.shape[-1] != self.in_dim:
            raise ValueError(f"critic input has width {feats.shape[-1]}, expected {self.in_dim}")
        return feats

    def heads_tensor(self, params: Mapping, x, z, a=None, z_next=None) -> list[dc.Tensor]:
        """Per-head values ``(B,)``; ``a``/``z_next`` may be tensors (actor gradients)."""
        if any(isinstance(v, dc.Tensor) for v in (a, z_next)):
            parts = [dc.Tensor(np.asarray(x, dtype=np.float64))]
            if self.use_z:
                parts.append(dc.as_tensor(z))
            parts.append(dc.as_tensor(a))
            if self.use_z:
                parts.append(dc.as_tensor(z_next))
            feats = dc.concat(parts, axis=-1)
        else:
            feats = dc.Tensor(self.features(x, z, a, z_next))
        return [dc.reshape(h(params, feats), (-1,)) for h in self.heads]

    def values_np(self, x, z, a=None, z_next=None, store: dc.ParameterStore | None = None) -> np.ndarray:
        """``(n_heads, B)`` values at ``store`` (default: the live parameters)."""
        p = dict((store or self.store).items())
        feats = self.features(x, z, a, z_next)
        return np.stack([h.forward_np(p, feats)[:, 0] for h in self.heads])

    def fit_step(self, optimizer, x, z, target, a=None, z_next=None) -> float:
        """One gradient step on the squared error of every head; returns the loss."""
        tape = dc.Tape()
        p = self.store.watch(tape)
        tgt = dc.Tensor(np.asarray(target, dtype=np.float64))
        loss = None
        for q in self.heads_tensor(p, x, z, a, z_next):
            err = dc.mean(dc.square(dc.sub(q, tgt)))
            loss = err if loss is None else dc.add(loss, err)
        grads = tape.backward(loss)
        optimizer.step(self.store.flatten_map(grads))
        return float(loss.data)
