#!/usr/bin/env python3
"""Compare the numba and numpy versions of every kernel.

Run with ``python3 benchmarks/bench_kernels.py [--repeat N] [--size N]``.
The first numba call (compilation) is timed separately and excluded from
the steady-state numbers.
"""

import argparse
import time

import numpy as np

from s2pg_lab.kernels import KERNELS


def make_args(name, n, rng):
    if name == "gae":
        last = rng.random(n) < 0.005
        last[-1] = True
        return (rng.normal(size=n), rng.normal(size=n), rng.normal(size=n),
                last & (rng.random(n) < 0.5), last, 0.99, 0.95)
    if name in ("reward_to_go", "episode_returns"):
        last = np.zeros(n, bool)
        last[199::200] = True
        last[-1] = True
        return rng.normal(size=n), last, 0.99
    if name == "point_mass_integrate":
        return (rng.uniform(-1, 1, (n, 2)), rng.uniform(-1, 1, (n, 2)), rng.normal(size=(n, 2)),
                0.05, 0.95, 1.0)
    if name == "wall_contact":
        pos = rng.uniform(-0.1, 0.1, (n, 2))
        return pos, pos + rng.normal(0, 0.05, (n, 2)), rng.uniform(-0.9, 0.9, (n, 2)), 0.1
    if name == "pendulum_step":
        return (rng.uniform(-4, 4, n), rng.uniform(-8, 8, n), rng.uniform(-2, 2, n),
                0.05, 9.81, 1.0, 1.0, 8.0)
    raise KeyError(name)


def best_of(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--size", type=int, default=100_000)
    opts = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':<22}{'compile s':>11}{'numba ms':>11}{'numpy ms':>11}{'speedup':>9}")
    for name, (fast, slow) in KERNELS.items():
        args = make_args(name, opts.size, rng)
        t0 = time.perf_counter()
        fast(*args)
        compile_s = time.perf_counter() - t0
        t_fast = best_of(fast, args, opts.repeat)
        t_slow = best_of(slow, args, opts.repeat)
        print(f"{name:<22}{compile_s:>11.3f}{1e3 * t_fast:>11.3f}{1e3 * t_slow:>11.3f}"
              f"{t_slow / t_fast:>8.1f}x")


if __name__ == "__main__":
    main()
