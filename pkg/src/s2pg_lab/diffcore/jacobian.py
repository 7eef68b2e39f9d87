"""Jacobians assembled one output row at a time from non-consuming pullbacks."""

from __future__ import annotations

from typing import Callable

import numpy as np

from s2pg_lab.diffcore.tensor import NumericError, Tape, Tensor

__all__ = ["jacobian", "jacobian_frobenius"]


def jacobian(fn: Callable[[Tensor], Tensor], at) -> np.ndarray:
    """Dense Jacobian of ``fn`` at ``at``, shape ``(out.size, at.size)``."""
    tape = Tape()
    x = tape.watch(at.data if isinstance(at, Tensor) else at, "x")
    y = fn(x)
    if not isinstance(y, Tensor) or y.tape is not tape:
        # output does not depend on the input at all
        out_size = np.asarray(getattr(y, "data", y)).size
        return np.zeros((out_size, x.size))
    rows = np.zeros((y.size, x.size))
    for i in range(y.size):
        cot = np.zeros(y.size)
        cot[i] = 1.0
        rows[i] = tape.vjp(y, cot.reshape(y.shape))["x"].ravel()
    if not np.isfinite(rows).all():
        raise NumericError("non-finite Jacobian entries")
    return rows


def jacobian_frobenius(fn: Callable[[Tensor], Tensor], at) -> float:
    """Frobenius norm of the Jacobian of ``fn`` at ``at``."""
    return float(np.linalg.norm(jacobian(fn, at)))
