"""Independent oracles shared by the test modules."""

from __future__ import annotations

import numpy as np


def central_diff(fn, x, h=1e-5):
    """Central finite-difference gradient (or Jacobian) of a numpy function."""
    x = np.array(x, dtype=np.float64)
    y0 = np.asarray(fn(x), dtype=np.float64)
    jac = np.zeros(y0.shape + x.shape)
    for idx in np.ndindex(x.shape):
        xp = x.copy()
        xm = x.copy()
        xp[idx] += h
        xm[idx] -= h
        jac[(...,) + idx] = (np.asarray(fn(xp)) - np.asarray(fn(xm))) / (2 * h)
    return jac


def rel_err(a, b, floor=1e-12):
    """Norm-wise relative error ``|a - b| / max(|a|, |b|)``."""
    a = np.ravel(np.asarray(a, dtype=np.float64))
    b = np.ravel(np.asarray(b, dtype=np.float64))
    scale = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / scale)
