"""Empirical Jacobian-norm constants of a policy's mean functions.

For a set of ``(obs, z)`` samples this returns the maxima of

* ``F = |df/dtheta|_F``, ``H = |deta/dtheta|_F``,
* ``K = |df/dz|_F``, ``Z = |deta/dz|_F``,
* ``F_d``, ``H_d``: the largest Euclidean norm of a single output row of
  ``df/dtheta`` and ``deta/dtheta`` (used by the diagonal-covariance bound).

``theta`` covers the mean parameters only; log-std parameters are excluded.
Jacobians are assembled row by row from pullbacks of each output component.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

import s2pg_lab.diffcore as dc

__all__ = ["JacobianConstants", "estimate_constants", "jacobian_norms"]

_Z_LEAF = "__z__"


class JacobianConstants(NamedTuple):
    F: float
    H: float
    K: float
    Z: float
    F_d: float
    H_d: float


def _rows_of(tape, out, names, n_out):
    """Pull back every output component; returns (theta rows, z rows)."""
    theta_rows, z_rows = [], []
    for j in range(n_out):
        cot = np.zeros(out.shape)
        cot[..., j] = 1.0
        g = tape.vjp(out, cot)
        theta_rows.append(np.concatenate([g[n].reshape(g[n].shape[0], -1) for n in names], axis=1)
                          if names else np.zeros((out.shape[0], 0)))
        z_rows.append(g[_Z_LEAF])
    # each entry is (B, width); stack to (B, n_out, width)
    return np.stack(theta_rows, axis=1), np.stack(z_rows, axis=1)


def _per_sample_norms(policy, obs, z):
    """Per-sample norms in one pass, using one parameter copy per sample."""
    B = obs.shape[0]
    names = policy.mean_param_names
    out = {}
    for head in ("f", "eta"):
        tape = dc.Tape()
        p = {n: tape.watch(np.tile(policy.store[n], (B, 1)), n) for n in names}
        zt = tape.watch(z, _Z_LEAF)
        y = policy.means.action_mean(p, obs, zt) if head == "f" else policy.means.state_mean(p, obs, zt)
        th, zz = _rows_of(tape, y, names, y.shape[-1])
        out[head] = (th, zz)
    return out


def _looped_norms(policy, obs, z):
    names = policy.mean_param_names
    acc = {"f": ([], []), "eta": ([], [])}
    for i in range(obs.shape[0]):
        for head in ("f", "eta"):
            if head == "eta" and policy.d_z == 0:
                continue
            tape = dc.Tape()
            p = {n: tape.watch(policy.store[n], n) for n in names}
            zt = tape.watch(z[i:i + 1], _Z_LEAF)
            o = obs[i:i + 1]
            y = policy.means.action_mean(p, o, zt) if head == "f" else policy.means.state_mean(p, o, zt)
            th = []
            zz = []
            for j in range(y.shape[-1]):
                cot = np.zeros(y.shape)
                cot[0, j] = 1.0
                g = tape.vjp(y, cot)
                th.append(np.concatenate([g[n].ravel() for n in names]))
                zz.append(g[_Z_LEAF].ravel())
            acc[head][0].append(np.array(th))
            acc[head][1].append(np.array(zz))
    out = {}
    for head, (th, zz) in acc.items():
        out[head] = (np.array(th), np.array(zz)) if th else None
    return out


def jacobian_norms(policy, obs, z) -> dict[str, np.ndarray]:
    """Per-sample Frobenius norms and max row norms of the four Jacobians."""
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    z = np.asarray(z, dtype=np.float64).reshape(obs.shape[0], policy.d_z)
    if obs.shape[0] == 0:
        raise ValueError("empty sample set")
    if getattr(policy.means, "supports_per_sample", False):
        raw = _per_sample_norms(policy, obs, z)
    else:
        raw = _looped_norms(policy, obs, z)
    B = obs.shape[0]
    res = {}
    for head, key_theta, key_z, key_row in (("f", "F", "K", "F_d"), ("eta", "H", "Z", "H_d")):
        if raw.get(head) is None:
            res[key_theta] = res[key_z] = res[key_row] = np.zeros(B)
            continue
        th, zz = raw[head]  # (B, n_out, n_theta), (B, n_out, d_z)
        res[key_theta] = np.sqrt((th ** 2).sum(axis=(1, 2)))
        res[key_z] = np.sqrt((zz ** 2).sum(axis=(1, 2)))
        res[key_row] = np.sqrt((th ** 2).sum(axis=2)).max(axis=1) if th.shape[1] else np.zeros(B)
    if not all(np.isfinite(v).all() for v in res.values()):
        raise dc.NumericError("non-finite Jacobian entries")
    return res


def estimate_constants(policy, obs, z) -> JacobianConstants:
    """Maxima over the sample set of the Jacobian norms (see module docstring)."""
    norms = jacobian_norms(policy, obs, z)
    return JacobianConstants(*(float(norms[k].max()) for k in JacobianConstants._fields))
