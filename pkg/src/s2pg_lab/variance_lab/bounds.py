"""Closed-form variance bounds for score-function gradients of stateful policies.

Notation follows the Jacobian constants of :mod:`s2pg_lab.policies.constants`:
``F, H`` bound the parameter Jacobians of the action and state means, ``K, Z``
their Jacobians with respect to the internal state. ``sigma_inv_fro`` and
``upsilon_inv_fro`` are Frobenius norms of the inverse action and state
covariances; the ``*_trace`` fields are their traces (diagonal variant).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

__all__ = ["BoundInputs", "z_tilde", "z_bar", "z_tilde_sum", "z_bar_sum", "bound_bptt", "bound_s2pg",
           "bound_s2pg_diag", "empirical_variance"]

_LIMIT_TOL = 1e-9


@dataclass(frozen=True)
class BoundInputs:
    R: float
    T: int
    gamma: float
    N: int
    F: float
    H: float
    K: float
    Z: float
    sigma_inv_fro: float
    upsilon_inv_fro: float
    sigma_inv_trace: float = 0.0
    upsilon_inv_trace: float = 0.0
    F_d: float = 0.0
    H_d: float = 0.0

    def __post_init__(self):
        for name, v in asdict(self).items():
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and nonnegative, got {v}")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.T < 1 or self.N < 1:
            raise ValueError("T and N must be >= 1")

    def as_dict(self) -> dict:
        return asdict(self)


def _check(Z, T):
    if Z < 0 or T < 1:
        raise ValueError("need Z >= 0 and T >= 1")


def z_tilde(Z: float, T: int) -> float:
    """sum_{t<T} sum_{i<t} Z^(t-i-1) in closed form."""
    _check(Z, T)
    if T == 1:
        return 0.0  # empty inner sum; avoids cancellation noise in the closed form
    if abs(Z - 1.0) < _LIMIT_TOL:
        return T * (T - 1) / 2.0
    return T / (1.0 - Z) + (Z ** T - 1.0) / (1.0 - Z) ** 2


def z_bar(Z: float, T: int) -> float:
    """sum_{t<T} (sum_{i<t} Z^(t-i-1))^2 in closed form."""
    _check(Z, T)
    if T == 1:
        return 0.0
    if abs(Z - 1.0) < _LIMIT_TOL:
        return (T - 1) * T * (2 * T - 1) / 6.0
    zt = Z ** T
    return T / (1.0 - Z) ** 2 + (zt - 1.0) * (zt - 2.0 * Z - 1.0) / ((Z - 1.0) ** 3 * (1.0 + Z))


def z_tilde_sum(Z: float, T: int) -> float:
    """Direct double summation; reference for :func:`z_tilde`."""
    return math.fsum(Z ** (t - i - 1) for t in range(T) for i in range(t))


def z_bar_sum(Z: float, T: int) -> float:
    """Direct summation; reference for :func:`z_bar`."""
    return math.fsum(math.fsum(Z ** (t - i - 1) for i in range(t)) ** 2 for t in range(T))


def _prefactor(b: BoundInputs) -> float:
    return b.R ** 2 * (1.0 - b.gamma ** b.T) ** 2 / (b.N * (1.0 - b.gamma) ** 2)


def bound_bptt(b: BoundInputs) -> float:
    """Upper bound on the trace variance of the BPTT score-function estimate."""
    inner = (b.T * b.F ** 2 + 2.0 * b.F * b.H * b.K * z_tilde(b.Z, b.T)
             + b.H ** 2 * b.K ** 2 * z_bar(b.Z, b.T))
    return _prefactor(b) * b.sigma_inv_fro * inner


def bound_s2pg(b: BoundInputs) -> float:
    """Upper bound on the trace variance of the S2PG score-function estimate."""
    ratio = b.upsilon_inv_fro / b.sigma_inv_fro if b.sigma_inv_fro > 0 else 0.0
    return _prefactor(b) * b.sigma_inv_fro * (b.T * b.F ** 2 + b.T * b.H ** 2 * ratio)


def bound_s2pg_diag(b: BoundInputs) -> float:
    """Tighter S2PG bound for diagonal covariances, from per-row constants."""
    ratio = b.upsilon_inv_trace / b.sigma_inv_trace if b.sigma_inv_trace > 0 else 0.0
    return _prefactor(b) * b.sigma_inv_trace * b.T * (b.F_d ** 2 + b.H_d ** 2 * ratio)


def empirical_variance(samples) -> float:
    """Trace of the unbiased sample covariance of gradient vectors.

    ``samples`` is a sequence of gradient vectors (or objects with a ``grad``
    attribute) or a 2-D array with one sample per row.
    """
    if isinstance(samples, np.ndarray):
        G = np.atleast_2d(samples.astype(np.float64))
    else:
        G = [np.ravel(getattr(s, "grad", s)).astype(np.float64) for s in samples]
        if len({g.shape for g in G}) > 1:
            raise ValueError("gradient samples differ in length")
        G = np.array(G)
    if G.ndim != 2 or G.shape[0] < 2:
        raise ValueError("need at least 2 gradient samples")
    dev = G - G.mean(axis=0)
    return float((dev ** 2).sum() / (G.shape[0] - 1))
