"""Adam and Polyak averaging over a :class:`ParameterStore`'s flat buffer."""

from __future__ import annotations

import numpy as np

from s2pg_lab.diffcore.params import ParameterStore
from s2pg_lab.diffcore.tensor import NumericError

__all__ = ["Adam", "polyak_update"]


class Adam:
    """Adam on the flat buffer; ``step`` takes a flat gradient of the loss."""

    def __init__(self, store: ParameterStore, lr: float = 3e-4, betas=(0.9, 0.999),
                 eps: float = 1e-8, max_grad_norm: float | None = None, frozen=()):
        self.store = store
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.max_grad_norm = max_grad_norm
        self.m = np.zeros(store.size)
        self.v = np.zeros(store.size)
        self.t = 0
        self.mask = np.ones(store.size)
        for name in frozen:
            self.mask[store.slice_of(name)] = 0.0

    def step(self, grad) -> None:
        g = np.asarray(grad, dtype=np.float64) * self.mask
        if not np.isfinite(g).all():
            raise NumericError("non-finite gradient passed to Adam")
        if self.max_grad_norm is not None:
            norm = np.linalg.norm(g)
            if norm > self.max_grad_norm:
                g = g * (self.max_grad_norm / norm)
        self.t += 1
        self.m = self.b1 * self.m + (1.0 - self.b1) * g
        self.v = self.b2 * self.v + (1.0 - self.b2) * g * g
        m_hat = self.m / (1.0 - self.b1 ** self.t)
        v_hat = self.v / (1.0 - self.b2 ** self.t)
        self.store.flat[:] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state(self) -> dict:
        return {"m": self.m.copy(), "v": self.v.copy(), "t": self.t}


def polyak_update(target: ParameterStore, source: ParameterStore, tau: float) -> None:
    """``target <- tau * source + (1 - tau) * target`` in place."""
    if target.size != source.size:
        raise ValueError("Polyak update between stores of different size")
    target.flat[:] = tau * source.flat + (1.0 - tau) * target.flat
