"""Generalized advantage estimation over extended trajectories."""

from __future__ import annotations

import numpy as np

from s2pg_lab import kernels
from s2pg_lab.estimators.trajectory import ExtendedTrajectory

__all__ = ["compute_gae", "gae_flat"]


def gae_flat(rewards, values, next_values, absorbing, last, gamma: float, lam: float):
    """Advantages and value targets ``A + v`` over a flat, episode-ordered dataset.

    The final step of the dataset is treated as ``last`` whether flagged or not.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    last = np.array(last, dtype=bool, copy=True)
    if last.size:
        last[-1] = True
    adv = kernels.gae(rewards, values, next_values, absorbing, last, gamma, lam)
    return adv, adv + np.asarray(values, dtype=np.float64)


def compute_gae(traj: ExtendedTrajectory, value_fn, gamma: float | None = None, lam: float = 0.95,
                privileged_input: bool = False):
    """Advantages and value targets, both ``(T, N)`` with zeros on padding.

    ``value_fn(x, z)`` maps ``(M, d_x)`` inputs and ``(M, d_z)`` internal
    states to ``(M,)`` values; ``x`` is the observation or, with
    ``privileged_input``, the full state.
    """
    gamma = traj.gamma if gamma is None else gamma
    T, N = traj.reward.shape
    x = traj.inputs(privileged_input)
    nx = traj.next_privileged if privileged_input else traj.next_obs
    # episode-major flattening so each column is a contiguous episode
    order = np.transpose(traj.valid).ravel()
    em = lambda arr: np.swapaxes(arr, 0, 1).reshape(T * N, *arr.shape[2:])[order]  # noqa: E731
    v = np.asarray(value_fn(em(x), em(traj.z)), dtype=np.float64).reshape(-1)
    vn = np.asarray(value_fn(em(nx), em(traj.z_next)), dtype=np.float64).reshape(-1)
    # a column's final valid step closes its episode even if it was not flagged
    end = traj.valid & ~np.vstack([traj.valid[1:], np.zeros((1, N), bool)])
    adv, targets = gae_flat(em(traj.reward), v, vn, em(traj.absorbing), em(traj.last | end), gamma, lam)
    A = np.zeros(T * N)
    V = np.zeros(T * N)
    A[order] = adv
    V[order] = targets
    return A.reshape(N, T).T, V.reshape(N, T).T
