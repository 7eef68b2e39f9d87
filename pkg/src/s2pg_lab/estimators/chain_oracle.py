"""Reference gradients of the diagnostic chain's objective.

These evaluate the chain in closed form with plain numpy, independent of the
autodiff engine, the policy classes and the environment code:

    s_0 ~ N(0, init_std^2),  z_0 = 0
    a_t = f_s s_t + f_z z_t + sigma_a eps_t
    z_{t+1} = eta_s s_t + eta_z z_t + sigma_z xi_t      (sigma_z = 0: exact recurrence)
    s_{t+1} = s_t + a_t,  r_t = -s_{t+1}^2,  J = sum_t gamma^t r_t

:func:`finite_difference_gradient` differentiates ``E[J]`` by central
differences with common random numbers; :func:`one_step_gradient` is exact
for a horizon of one.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

__all__ = ["chain_returns", "finite_difference_gradient", "one_step_gradient", "z_scores", "COEFFS"]

COEFFS = ("f_s", "f_z", "eta_s", "eta_z")


def chain_returns(coeffs: Mapping[str, float], sigma_a: float, sigma_z: float, gamma: float,
                  s0: np.ndarray, eps_a: np.ndarray, eps_z: np.ndarray, clip: float | None = None) -> np.ndarray:
    """Per-rollout returns for fixed noise; ``eps_*`` have shape ``(T, n)``."""
    c = {k: float(coeffs.get(k, 0.0)) for k in COEFFS}
    bound = (lambda x: x) if clip is None else (lambda x: np.clip(x, -clip, clip))
    s = bound(np.array(s0, dtype=np.float64))
    z = np.zeros_like(s)
    J = np.zeros_like(s)
    for t in range(eps_a.shape[0]):
        a = c["f_s"] * s + c["f_z"] * z + sigma_a * eps_a[t]
        z = c["eta_s"] * s + c["eta_z"] * z + sigma_z * eps_z[t]
        s = bound(s + a)
        J += gamma ** t * -(s * s)
    return J


def finite_difference_gradient(coeffs: Mapping[str, float], learnable: Sequence[str], sigma_a: float,
                               sigma_z: float, horizon: int, gamma: float, n: int = 1_000_000, h: float = 1e-2,
                               seed: int = 0, init_std: float = 1.0, clip: float | None = None,
                               chunk: int = 250_000):
    """Central-difference gradient of ``E[J]`` and its standard error.

    Both sides of every difference reuse the same noise, so the per-rollout
    differences have small variance; the standard error is that of their mean.
    """
    rng = np.random.default_rng(seed)
    sums = np.zeros(len(learnable))
    sq = np.zeros(len(learnable))
    done = 0
    while done < n:
        m = min(chunk, n - done)
        s0 = init_std * rng.standard_normal(m)
        ea = rng.standard_normal((horizon, m))
        ez = rng.standard_normal((horizon, m))
        for j, name in enumerate(learnable):
            up = dict(coeffs)
            dn = dict(coeffs)
            up[name] = coeffs[name] + h
            dn[name] = coeffs[name] - h
            d = (chain_returns(up, sigma_a, sigma_z, gamma, s0, ea, ez, clip)
                 - chain_returns(dn, sigma_a, sigma_z, gamma, s0, ea, ez, clip)) / (2 * h)
            sums[j] += d.sum()
            sq[j] += (d * d).sum()
        done += m
    mean = sums / n
    var = np.maximum(sq / n - mean ** 2, 0.0) * n / (n - 1)
    return mean, np.sqrt(var / n)


def one_step_gradient(coeffs: Mapping[str, float], learnable: Sequence[str], init_std: float = 1.0) -> np.ndarray:
    """Exact gradient for horizon one: ``E[J] = -(1 + f_s)^2 init_std^2 - sigma_a^2``.

    With ``z_0 = 0`` only ``f_s`` matters; every other coefficient has zero gradient.
    """
    f_s = float(coeffs.get("f_s", 0.0))
    return np.array([-2.0 * (1.0 + f_s) * init_std ** 2 if k == "f_s" else 0.0 for k in learnable])


def z_scores(estimate, se_estimate, reference, se_reference, atol: float = 1e-12) -> np.ndarray:
    """``|estimate - reference|`` in combined standard errors.

    Coordinates where both standard errors vanish score 0 when the values
    agree to ``atol`` and infinity otherwise.
    """
    diff = np.abs(np.asarray(estimate, dtype=np.float64) - np.asarray(reference, dtype=np.float64))
    se = np.sqrt(np.asarray(se_estimate, dtype=np.float64) ** 2 + np.asarray(se_reference, dtype=np.float64) ** 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = diff / se
    return np.where(se > 0, z, np.where(diff <= atol, 0.0, np.inf))
