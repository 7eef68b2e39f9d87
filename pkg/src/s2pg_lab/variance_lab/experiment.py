"""Growth-regime sweep: empirical gradient variance against the analytic bounds.

A scalar linear stateful policy runs on the clipped diagnostic chain
(rewards in ``[-1, 0]``). The state-transition gain ``eta_z`` is fixed to the
target ``Z`` and the state-to-action gain ``f_z`` to ``K``; ``f_s`` and
``eta_s`` are learnable. Each cell draws single-trajectory gradients
(N = 1 in the estimator), measures their trace variance, divides by ``N``
analytically, and evaluates the matching bound with constants taken as maxima
over the visited ``(obs, z)`` pairs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from s2pg_lab.envs import ChainDiagnostic
from s2pg_lab.estimators import collect_episodes, reinforce_bptt, reinforce_s2pg
from s2pg_lab.policies import RecurrentDeterministicPolicy, ScalarLinearMeans, StatefulGaussianPolicy
from s2pg_lab.policies.constants import estimate_constants
from s2pg_lab.variance_lab.bounds import (BoundInputs, bound_bptt, bound_s2pg, bound_s2pg_diag,
                                          empirical_variance)

__all__ = ["RegimeSetup", "VarianceReport", "REPORT_COLUMNS", "growth_factor", "measure_cell", "regime_experiment",
           "write_report_csv", "plot_report_svg"]

REPORT_COLUMNS = ("estimator", "T", "Z_target", "N", "empirical_var", "bound", "ratio", "F", "H", "K", "Z", "seed")


@dataclass(frozen=True)
class RegimeSetup:
    f_s: float = -0.5
    eta_s: float = 0.5
    K: float = 0.3
    sigma_a: float = 0.5
    sigma_z: float = 0.5
    gamma: float = 0.8
    clip: float = 1.0
    init_std: float = 0.5


@dataclass
class VarianceReport:
    estimator: str
    T: int
    Z_target: float
    N: int
    seed: int
    empirical_variance: float
    bound: float
    bound_bptt: float
    bound_s2pg: float
    bound_s2pg_diag: float
    constants: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.empirical_variance < 0:
            raise ValueError("variance cannot be negative")

    @property
    def ratio(self) -> float:
        return self.bound / self.empirical_variance if self.empirical_variance > 0 else math.inf

    def row(self) -> dict:
        c = self.constants
        return {"estimator": self.estimator, "T": self.T, "Z_target": self.Z_target, "N": self.N,
                "empirical_var": self.empirical_variance, "bound": self.bound, "ratio": self.ratio,
                "F": c["F"], "H": c["H"], "K": c["K"], "Z": c["Z"], "seed": self.seed}


def _policy(estimator: str, Z: float, setup: RegimeSetup):
    means = ScalarLinearMeans({"f_s": setup.f_s, "eta_s": setup.eta_s}, fixed={"f_z": setup.K, "eta_z": Z})
    if estimator == "s2pg":
        return StatefulGaussianPolicy(means, log_sigma_a=math.log(setup.sigma_a),
                                      log_sigma_z=math.log(setup.sigma_z),
                                      learn_sigma_a=False, learn_sigma_z=False)
    if estimator == "bptt":
        return RecurrentDeterministicPolicy(means, log_sigma_a=math.log(setup.sigma_a), learn_sigma_a=False)
    raise ValueError(f"unknown estimator {estimator!r}")


def measure_cell(estimator: str, Z: float, T: int, samples: int, seed: int = 0, N: int = 1,
                 setup: RegimeSetup = RegimeSetup()) -> VarianceReport:
    """One (estimator, Z, T) cell of the sweep."""
    if samples < 2:
        raise ValueError("need at least 2 gradient samples")
    policy = _policy(estimator, Z, setup)
    env = ChainDiagnostic(n=samples, horizon=T, clip=setup.clip, init_std=setup.init_std)
    traj = collect_episodes(env, policy, rng=np.random.default_rng(seed), gamma=setup.gamma, seed=seed + 1)
    if estimator == "s2pg":
        g = reinforce_s2pg(traj, policy, per_sample=True)
    else:
        g = reinforce_bptt(traj, policy, truncation=0, per_sample=True)
    cols = [policy.store.names.index(n) for n in policy.mean_param_names]
    var = empirical_variance(g.per_sample[:, cols]) / N
    rows = traj.valid.ravel()
    const = estimate_constants(policy, traj.obs.reshape(-1, 1)[rows], traj.z.reshape(-1, 1)[rows])
    inv_a = 1.0 / setup.sigma_a ** 2
    inv_z = 1.0 / setup.sigma_z ** 2
    inputs = BoundInputs(R=env.reward_bound, T=T, gamma=setup.gamma, N=N, F=const.F, H=const.H, K=const.K,
                         Z=const.Z, sigma_inv_fro=inv_a, upsilon_inv_fro=inv_z, sigma_inv_trace=inv_a,
                         upsilon_inv_trace=inv_z, F_d=const.F_d, H_d=const.H_d)
    b_bptt, b_s2pg, b_diag = bound_bptt(inputs), bound_s2pg(inputs), bound_s2pg_diag(inputs)
    return VarianceReport(estimator, T, float(Z), N, seed, var, b_s2pg if estimator == "s2pg" else b_bptt,
                          b_bptt, b_s2pg, b_diag, const._asdict() | {"R": env.reward_bound})


def regime_experiment(Z_values=(0.5, 1.5), T_values=(5, 10, 20), samples: int = 2000, seeds=(0,), N: int = 1,
                      estimators=("bptt", "s2pg"), setup: RegimeSetup = RegimeSetup()) -> list[VarianceReport]:
    """Every (estimator, Z, T, seed) cell; cells are independent."""
    return [measure_cell(est, Z, T, samples, seed, N, setup)
            for seed in seeds for Z in Z_values for est in estimators for T in T_values]


def growth_factor(reports, estimator: str, Z: float, T_from: int, T_to: int, seed: int = 0) -> float:
    pick = {r.T: r.empirical_variance for r in reports
            if r.estimator == estimator and r.Z_target == Z and r.seed == seed}
    return pick[T_to] / pick[T_from]




def write_report_csv(path, reports) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        w.writeheader()
        for r in reports:
            w.writerow(r.row())


def plot_report_svg(path, reports) -> None:
    """Log-scale variance (markers) and bounds (dashed) against T."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    keys = sorted({(r.estimator, r.Z_target) for r in reports})
    for est, Z in keys:
        rs = sorted((r for r in reports if r.estimator == est and r.Z_target == Z and r.seed == reports[0].seed),
                    key=lambda r: r.T)
        Ts = [r.T for r in rs]
        line, = ax.plot(Ts, [r.empirical_variance for r in rs], "o-", label=f"{est} Z={Z:g}")
        ax.plot(Ts, [r.bound for r in rs], "--", color=line.get_color(), alpha=0.6)
    ax.set_yscale("log")
    ax.set_xlabel("horizon T")
    ax.set_ylabel("trace variance (dashed: bound)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(Path(path), format="svg")
    plt.close(fig)
