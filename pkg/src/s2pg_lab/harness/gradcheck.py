"""Finite-difference check of every differentiable path used for training.

Each case is a scalar function of named float64 arrays, written against
diffcore. Its tape gradient is compared with central differences of the same
function evaluated on constant tensors; the error is norm-wise relative,
``|g_tape - g_fd| / max(|g_tape|, |g_fd|, floor)``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

import s2pg_lab.diffcore as dc
from s2pg_lab.policies import NeuralMeans, RecurrentDeterministicPolicy, StatefulGaussianPolicy

__all__ = ["CheckResult", "check_case", "default_cases", "run_gradcheck", "TOLERANCE"]

TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    rel_error: float

    @property
    def passed(self) -> bool:
        return self.rel_error < TOLERANCE


def _tape_grad(fn, inputs):
    tape = dc.Tape()
    leaves = {k: tape.watch(v, k) for k, v in inputs.items()}
    out = fn(leaves)
    grads = tape.backward(out)
    return np.concatenate([np.ravel(grads.get(k, np.zeros_like(v))) for k, v in inputs.items()])


def _fd_grad(fn, inputs, h):
    def value(arrs):
        return float(fn({k: dc.as_tensor(v) for k, v in arrs.items()}).data)

    out = []
    for key, base in inputs.items():
        g = np.zeros(base.size)
        for i in range(base.size):
            up = {k: v.copy() for k, v in inputs.items()}
            dn = {k: v.copy() for k, v in inputs.items()}
            up[key].flat[i] += h
            dn[key].flat[i] -= h
            g[i] = (value(up) - value(dn)) / (2 * h)
        out.append(g)
    return np.concatenate(out)


def check_case(name: str, fn: Callable, inputs: Mapping[str, np.ndarray], h: float = 1e-6,
               floor: float = 1e-8) -> CheckResult:
    inputs = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
    ga = _tape_grad(fn, inputs)
    gn = _fd_grad(fn, inputs, h)
    scale = max(np.linalg.norm(ga), np.linalg.norm(gn), floor)
    return CheckResult(name, float(np.linalg.norm(ga - gn) / scale))


def _project(t, w):
    """Scalar ``sum(t * w)`` so vector-valued ops get a full random cotangent."""
    return dc.sum(dc.mul(t, dc.as_tensor(w)))


def _op_cases(rng):
    A = rng.normal(size=(3, 4))
    B = rng.normal(size=(3, 4))
    P = rng.uniform(0.5, 2.0, size=(3, 4))
    W = rng.normal(size=(3, 4))
    M = rng.normal(size=(4, 2))
    v = rng.normal(size=4)
    bias = rng.normal(size=2)
    away = A + np.sign(A) * 0.2    # keeps relu/clip/minimum off their kinks
    cases = [
        ("add", lambda p: _project(dc.add(p["a"], p["b"]), W), {"a": A, "b": B}),
        ("sub", lambda p: _project(dc.sub(p["a"], p["b"]), W), {"a": A, "b": B}),
        ("mul", lambda p: _project(dc.mul(p["a"], p["b"]), W), {"a": A, "b": B}),
        ("div", lambda p: _project(dc.div(p["a"], p["b"]), W), {"a": A, "b": P}),
        ("scalar_mul", lambda p: _project(dc.mul(p["s"], p["a"]), W), {"s": np.array(1.7), "a": A}),
        ("neg", lambda p: _project(dc.neg(p["a"]), W), {"a": A}),
        ("tanh", lambda p: _project(dc.tanh(p["a"]), W), {"a": A}),
        ("sigmoid", lambda p: _project(dc.sigmoid(p["a"]), W), {"a": A}),
        ("relu", lambda p: _project(dc.relu(p["a"]), W), {"a": away}),
        ("softplus", lambda p: _project(dc.softplus(p["a"]), W), {"a": A}),
        ("exp", lambda p: _project(dc.exp(p["a"]), W), {"a": A}),
        ("log", lambda p: _project(dc.log(p["a"]), W), {"a": P}),
        ("square", lambda p: _project(dc.square(p["a"]), W), {"a": A}),
        ("minimum", lambda p: _project(dc.minimum(p["a"], p["b"]), W), {"a": away, "b": away + 0.3 * np.sign(W)}),
        ("clip", lambda p: _project(dc.clip(p["a"], -0.5, 0.5), W), {"a": np.where(abs(A) < 0.5, A * 0.8, A + np.sign(A) * 0.1)}),
        ("matmul", lambda p: _project(dc.matmul(p["a"], p["m"]), W[:, :2]), {"a": A, "m": M}),
        ("linear", lambda p: _project(dc.linear(p["a"], p["m"], p["b"]), W[:, :2]), {"a": A, "m": M, "b": bias}),
        ("sum_axis", lambda p: _project(dc.sum(p["a"], axis=1), W[:, 0]), {"a": A}),
        ("mean", lambda p: _project(dc.mean(p["a"], axis=0), v), {"a": A}),
        ("concat", lambda p: _project(dc.concat([p["a"], p["b"]], axis=1), np.concatenate([W, W], axis=1)),
         {"a": A, "b": B}),
        ("slice", lambda p: _project(dc.slice_(p["a"], (slice(None), slice(1, 3))), W[:, 1:3]), {"a": A}),
        ("reshape", lambda p: _project(dc.reshape(p["a"], (4, 3)), W.reshape(4, 3)), {"a": A}),
        ("expand_rows", lambda p: _project(dc.expand_rows(p["v"], 3), W), {"v": v}),
        ("gaussian_logpdf", lambda p: _project(dc.gaussian_logpdf(p["x"], p["m"], p["c"]), W[:, 0]),
         {"x": A, "m": B, "c": P}),
        ("gaussian_logpdf_logstd", lambda p: _project(dc.gaussian_logpdf_logstd(p["x"], p["m"], p["s"]), W[:, 0]),
         {"x": A, "m": B, "s": 0.3 * v}),
    ]
    return cases


def _param_fn(policy, body):
    names = policy.store.names

    def fn(p):
        return body({n: p[n] for n in names})
    return fn, {n: policy.store[n].copy() for n in names}


def _policy_cases(rng):
    obs = rng.normal(size=(5, 3))
    z = rng.normal(size=(5, 2))
    a = rng.normal(size=(5, 2))
    zn = rng.normal(size=(5, 2))
    pol = StatefulGaussianPolicy(NeuralMeans(3, 2, d_z=2, hidden=(6,)), seed=int(rng.integers(1 << 30)))
    lp_fn, lp_in = _param_fn(pol, lambda p: dc.sum(pol.log_prob(obs, z, a, zn, p)))

    rec = RecurrentDeterministicPolicy(NeuralMeans(3, 2, d_z=2, hidden=(6,)), seed=int(rng.integers(1 << 30)))
    obs_seq = rng.normal(size=(3, 4, 3))
    act_seq = rng.normal(size=(3, 4, 2))
    weights = rng.normal(size=(3, 4))

    def unrolled(p):
        lps = rec.unroll_bptt(obs_seq, act_seq, 0, p)
        total = None
        for t, lp in enumerate(lps):
            term = dc.sum(dc.mul(lp, dc.as_tensor(weights[t])))
            total = term if total is None else dc.add(total, term)
        return total
    bptt_fn, bptt_in = _param_fn(rec, unrolled)
    return [("policy_log_prob", lp_fn, lp_in), ("bptt_unroll_3_steps", bptt_fn, bptt_in)]


def default_cases(seed: int = 0):
    rng = np.random.default_rng(seed)
    return _op_cases(rng) + _policy_cases(rng)


def run_gradcheck(seed: int = 0, verbose: bool = False) -> tuple[list[CheckResult], float, float]:
    """Run every case; returns (results, max relative error, seconds)."""
    t0 = time.perf_counter()
    results = []
    for name, fn, inputs in default_cases(seed):
        r = check_case(name, fn, inputs)
        results.append(r)
        if verbose:
            print(f"{'ok  ' if r.passed else 'FAIL'} {name:<24s} rel_err={r.rel_error:.2e}")
    worst = max((r.rel_error for r in results), default=0.0)
    return results, worst if math.isfinite(worst) else math.inf, time.perf_counter() - t0
