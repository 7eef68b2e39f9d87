"""Experiment execution: training sweeps over seeds, variance sweeps, gradient and oracle checks.

Every kind writes into ``out_dir`` and finishes with ``manifest.json`` listing
the files produced. A numeric failure during training leaves the metrics rows
written so far on disk, marks the manifest as failed and raises
:class:`RunFailed`.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

import s2pg_lab.diffcore as dc
from s2pg_lab.algorithms import evaluate, train_offpolicy, train_ppo
from s2pg_lab.envs import ChainDiagnostic, make_env
from s2pg_lab.estimators import (collect_episodes, finite_difference_gradient, reinforce_bptt, reinforce_s2pg,
                                 z_scores)
from s2pg_lab.harness.config import ALGORITHMS, ExperimentConfig
from s2pg_lab.harness.gradcheck import TOLERANCE, run_gradcheck
from s2pg_lab.harness.plots import plot_curves_svg
from s2pg_lab.harness.summary import NORMALIZER_NOTE, RunSummary, aggregate_curves, normalize_returns
from s2pg_lab.policies import RecurrentDeterministicPolicy, ScalarLinearMeans, StatefulGaussianPolicy
from s2pg_lab.variance_lab import RegimeSetup, plot_report_svg, regime_experiment, write_report_csv

__all__ = ["RunFailed", "run", "random_policy_return", "train_seed"]

CURVE_COLUMNS = ("step", "mean_return", "std_return", "success_rate", "wallclock_s", "grad_variance_probe")


class RunFailed(RuntimeError):
    def __init__(self, message: str, summary: RunSummary | None = None):
        super().__init__(message)
        self.summary = summary


class _UniformRandomPolicy:
    """Memoryless uniform actions inside the action bounds (standard normal if unbounded)."""

    d_z = 0

    def __init__(self, low, high, seed: int):
        self.low, self.high = np.asarray(low, float), np.asarray(high, float)
        self.rng = np.random.default_rng(seed)

    def initial_state(self, batch=None):
        return np.zeros((batch, 0))

    def act_mean(self, obs, z):
        n = obs.shape[0]
        if np.isfinite(self.low).all() and np.isfinite(self.high).all():
            a = self.rng.uniform(self.low, self.high, size=(n, self.low.size))
        else:
            a = self.rng.standard_normal((n, self.low.size))
        return a, np.zeros((n, 0))


def random_policy_return(config: ExperimentConfig, episodes: int = 10, seed: int = 0) -> float:
    env = make_env(config.env_config(seed), n=episodes, seed=seed)
    return evaluate(env, _UniformRandomPolicy(env.act_low, env.act_high, seed), seed=seed)["mean_return"]


def _write_manifest(out: Path, summary: RunSummary, status: str, config: ExperimentConfig, error: str = ""):
    manifest = {"status": status, "kind": summary.kind, "files": sorted(summary.files), "error": error,
                "wallclock_s": summary.wallclock, "normalizer": summary.normalizer, "config": config.to_dict()}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=float))


# ----------------------------------------------------------------- training


def train_seed(config_doc: dict, seed: int) -> dict:
    """Train one seed; returns its metrics rows, timings, file names and status."""
    cfg = ExperimentConfig(**config_doc)
    out = Path(cfg.out_dir)
    algo = cfg.algo_config(seed)
    learner, variant, _ = ALGORITHMS[cfg.algorithm]
    env_cfg = cfg.env_config(seed)

    def env_factory(n):
        return make_env(env_cfg, n=n, seed=seed)

    metrics = out / f"metrics_seed{seed}.csv"
    files = [metrics.name]
    t0 = time.perf_counter()
    try:
        if learner == "ppo":
            result = train_ppo(env_factory, algo, variant, metrics_path=metrics)
        else:
            result = train_offpolicy(env_factory, algo, variant, metrics_path=metrics)
    except (dc.NumericError, FloatingPointError) as err:
        return {"seed": seed, "status": "failed", "error": f"seed {seed}: {err}", "files": files,
                "rows": [], "seconds": time.perf_counter() - t0}
    seconds = time.perf_counter() - t0
    ckpt = result.policy.save(out / f"policy_seed{seed}.npz")
    files.append(Path(ckpt).name)
    return {"seed": seed, "status": "ok", "error": "", "files": files, "rows": result.log.rows,
            "seconds": seconds}


def _run_train(cfg: ExperimentConfig, out: Path, verbose: bool) -> RunSummary:
    summary = RunSummary("train")
    doc = cfg.to_dict()
    t0 = time.perf_counter()
    if cfg.jobs > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.jobs, len(cfg.seeds))) as pool:
            results = list(pool.map(train_seed, [doc] * len(cfg.seeds), cfg.seeds))
    else:
        results = [train_seed(doc, s) for s in cfg.seeds]
    summary.wallclock["train"] = time.perf_counter() - t0
    for r in results:
        summary.files.extend(r["files"])
        summary.wallclock[f"train_seed{r['seed']}"] = r["seconds"]
        if verbose:
            print(f"seed {r['seed']}: {r['status']} in {r['seconds']:.1f}s")
    failed = [r for r in results if r["status"] != "ok"]
    if failed:
        _write_manifest(out, summary, "failed", cfg, "; ".join(r["error"] for r in failed))
        raise RunFailed("; ".join(r["error"] for r in failed), summary)

    length = min(len(r["rows"]) for r in results)
    for r in results:
        summary.curves[r["seed"]] = {c: np.array([row[c] for row in r["rows"][:length]]) for c in CURVE_COLUMNS}
    summary.steps = summary.curves[cfg.seeds[0]]["step"]
    for col in ("mean_return", "success_rate"):
        summary.aggregate[col] = aggregate_curves({s: c[col] for s, c in summary.curves.items()})

    t1 = time.perf_counter()
    low = cfg.normalizer.get("low")
    low = random_policy_return(cfg, seed=cfg.seeds[0]) if low is None else float(low)
    high = cfg.normalizer.get("high")
    high = summary.final() if high is None else float(high)
    summary.normalizer = {"high": high, "low": low, "definition": NORMALIZER_NOTE}
    if high > low:
        summary.normalized = aggregate_curves({s: normalize_returns(c["mean_return"], high, low)
                                               for s, c in summary.curves.items()})
    else:
        summary.normalizer["skipped"] = "high <= low"
    summary.wallclock["normalizer"] = time.perf_counter() - t1

    summary.write_aggregate_csv(out / "aggregate.csv")
    summary.files.append("aggregate.csv")
    panels = {"return": summary.aggregate["mean_return"], "success rate": summary.aggregate["success_rate"]}
    if summary.normalized is not None:
        panels["normalized return"] = summary.normalized
    note = f"{NORMALIZER_NOTE}; high={high:.6g}, low={low:.6g}"
    plot_curves_svg(out / "curves.svg", summary.steps, panels,
                    title=f"{cfg.algorithm} on {cfg.env['name']} ({len(cfg.seeds)} seeds)", note=note)
    summary.files.append("curves.svg")
    if verbose:
        print(f"final mean return {summary.final():.3f}, success {summary.final('success_rate'):.2f}")
    return summary


# ---------------------------------------------------------------- variance


def _run_variance(cfg: ExperimentConfig, out: Path, verbose: bool) -> RunSummary:
    v = cfg.variance
    t0 = time.perf_counter()
    reports = regime_experiment(Z_values=tuple(v.get("Z_values", (0.5, 1.5))),
                                T_values=tuple(v.get("T_values", (5, 10, 20))), samples=int(v.get("samples", 2000)),
                                seeds=tuple(cfg.seeds), N=int(v.get("N", 1)), setup=RegimeSetup(**v.get("setup", {})))
    summary = RunSummary("variance", wallclock={"variance": time.perf_counter() - t0})
    write_report_csv(out / "variance.csv", reports)
    plot_report_svg(out / "variance.svg", reports)
    summary.files += ["variance.csv", "variance.svg"]
    summary.details["reports"] = reports
    if verbose:
        print(f"{'estimator':<9s} {'Z':>4s} {'T':>3s} {'empirical':>12s} {'bound':>12s} {'ratio':>8s}")
        for r in reports:
            print(f"{r.estimator:<9s} {r.Z_target:>4g} {r.T:>3d} {r.empirical_variance:>12.4g} {r.bound:>12.4g} "
                  f"{r.ratio:>8.2f}")
    return summary


# --------------------------------------------------------------- gradcheck


def _run_gradcheck(cfg: ExperimentConfig, out: Path, verbose: bool) -> RunSummary:
    results, worst, seconds = run_gradcheck(seed=cfg.seeds[0], verbose=verbose)
    summary = RunSummary("gradcheck", wallclock={"gradcheck": seconds}, details={"max_rel_error": worst})
    with open(out / "gradcheck.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["case", "rel_error", "passed"])
        for r in results:
            w.writerow([r.name, r.rel_error, r.passed])
    summary.files.append("gradcheck.csv")
    print(f"max relative error {worst:.3e} over {len(results)} cases ({seconds:.2f}s)")
    if not worst < TOLERANCE:
        _write_manifest(out, summary, "failed", cfg, f"max relative error {worst:.3e} >= {TOLERANCE}")
        raise RunFailed(f"gradient check failed: max relative error {worst:.3e}", summary)
    return summary


# ------------------------------------------------------------------ oracle

_ORACLE_DEFAULTS = {"coeffs": {"f_s": -0.3, "f_z": 0.5, "eta_s": 0.4, "eta_z": 0.6}, "horizon": 2, "gamma": 0.9,
                    "sigma_a": 0.5, "sigma_z": 0.3, "samples": 20_000, "fd_samples": 200_000, "truncation": 0,
                    "estimator": "s2pg"}


def _run_oracle(cfg: ExperimentConfig, out: Path, verbose: bool) -> RunSummary:
    o = {**_ORACLE_DEFAULTS, **cfg.oracle}
    coeffs = {k: float(v) for k, v in o["coeffs"].items()}
    learnable = list(o.get("learnable", coeffs))
    fixed = {k: v for k, v in coeffs.items() if k not in learnable}
    means = ScalarLinearMeans({k: coeffs[k] for k in learnable}, fixed=fixed)
    seed = cfg.seeds[0]
    t0 = time.perf_counter()
    if o["estimator"] == "s2pg":
        pol = StatefulGaussianPolicy(means, log_sigma_a=np.log(o["sigma_a"]), log_sigma_z=np.log(o["sigma_z"]),
                                     learn_sigma_a=False, learn_sigma_z=False)
        sigma_z = o["sigma_z"]
    elif o["estimator"] == "bptt":
        pol = RecurrentDeterministicPolicy(means, log_sigma_a=np.log(o["sigma_a"]), learn_sigma_a=False)
        sigma_z = 0.0
    else:
        raise RunFailed(f"oracle.estimator must be 's2pg' or 'bptt', got {o['estimator']!r}")
    env = ChainDiagnostic(n=int(o["samples"]), horizon=int(o["horizon"]))
    traj = collect_episodes(env, pol, rng=np.random.default_rng(seed), gamma=o["gamma"], seed=seed + 1)
    if o["estimator"] == "s2pg":
        g = reinforce_s2pg(traj, pol, per_sample=True)
    else:
        g = reinforce_bptt(traj, pol, truncation=int(o["truncation"]), per_sample=True)
    cols = [pol.store.names.index(k) for k in pol.mean_param_names]
    est, se = g.grad[cols], g.standard_error()[cols]
    ref, ref_se = finite_difference_gradient(coeffs, pol.mean_param_names, o["sigma_a"], sigma_z, int(o["horizon"]),
                                             o["gamma"], n=int(o["fd_samples"]), seed=seed + 7)
    z = z_scores(est, se, ref, ref_se)
    summary = RunSummary("oracle", wallclock={"oracle": time.perf_counter() - t0},
                         details={"names": pol.mean_param_names, "estimate": est, "se": se, "oracle": ref,
                                  "oracle_se": ref_se, "z": z})
    with open(out / "oracle.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["coefficient", "estimate", "estimate_se", "oracle", "oracle_se", "z_score"])
        for row in zip(pol.mean_param_names, est, se, ref, ref_se, z):
            w.writerow(row)
    summary.files.append("oracle.csv")
    print(f"{'coef':<6s} {'estimate':>11s} {'oracle':>11s} {'z':>6s}")
    for name, e, r, zz in zip(pol.mean_param_names, est, ref, z):
        print(f"{name:<6s} {e:>11.5f} {r:>11.5f} {zz:>6.2f}")
    return summary


_KINDS = {"train": _run_train, "variance": _run_variance, "gradcheck": _run_gradcheck, "oracle": _run_oracle}


def run(config: ExperimentConfig, verbose: bool = False) -> RunSummary:
    """Execute ``config`` and write its artifacts plus ``manifest.json`` into ``config.out_dir``."""
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = _KINDS[config.kind](config, out, verbose)
    missing = [f for f in summary.files if not (out / f).is_file() or (out / f).stat().st_size == 0]
    if missing:
        _write_manifest(out, summary, "failed", config, f"missing outputs {missing}")
        raise RunFailed(f"missing outputs {missing}", summary)
    _write_manifest(out, summary, "ok", config)
    return summary
