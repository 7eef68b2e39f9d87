"""Aggregation of per-seed learning curves and return normalization."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

__all__ = ["RunSummary", "aggregate_curves", "normalize_returns", "NORMALIZER_NOTE"]

NORMALIZER_NOTE = ("normalized return = (x - low) / (high - low); high = best mean final return across the "
                   "methods compared, low = uniform-random-policy return over 10 episodes")


def normalize_returns(curves, reference_high: float, reference_low: float, clip: bool = True):
    """Map returns to ``(x - low) / (high - low)``, clipped to [-0.1, 1.1] for plotting."""
    if not np.isfinite(reference_high) or not np.isfinite(reference_low) or not reference_high > reference_low:
        raise ValueError("need finite references with reference_high > reference_low")
    x = (np.asarray(curves, dtype=np.float64) - reference_low) / (reference_high - reference_low)
    return np.clip(x, -0.1, 1.1) if clip else x


def aggregate_curves(curves: dict, level: float = 0.95) -> dict:
    """Mean and t-interval across seeds at each evaluation point.

    ``curves`` maps seed -> 1-D array (equal lengths). The interval is omitted
    (``None``) with fewer than two seeds.
    """
    if not curves:
        raise ValueError("no curves to aggregate")
    Y = np.array([np.asarray(c, dtype=np.float64) for c in curves.values()])
    mean = Y.mean(axis=0)
    if Y.shape[0] < 2:
        return {"mean": mean, "ci_low": None, "ci_high": None, "n": 1}
    half = stats.t.ppf(0.5 + level / 2, Y.shape[0] - 1) * Y.std(axis=0, ddof=1) / np.sqrt(Y.shape[0])
    return {"mean": mean, "ci_low": mean - half, "ci_high": mean + half, "n": Y.shape[0]}


@dataclass
class RunSummary:
    kind: str
    steps: np.ndarray | None = None
    curves: dict = field(default_factory=dict)          # seed -> {column: array}
    aggregate: dict = field(default_factory=dict)       # column -> aggregate_curves output
    wallclock: dict = field(default_factory=dict)       # phase -> seconds
    normalized: dict | None = None                      # aggregate of normalized returns
    normalizer: dict | None = None
    files: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def final(self, column: str = "mean_return") -> float:
        return float(self.aggregate[column]["mean"][-1])

    def write_aggregate_csv(self, path, columns=("mean_return", "success_rate")) -> None:
        header = ["step", "n_seeds"]
        for c in columns:
            header += [f"{c}_mean", f"{c}_ci_low", f"{c}_ci_high"]
        if self.normalized is not None:
            header += ["normalized_mean", "normalized_ci_low", "normalized_ci_high"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i, step in enumerate(self.steps):
                row = [int(step), self.aggregate[columns[0]]["n"]]
                blocks = [self.aggregate[c] for c in columns]
                if self.normalized is not None:
                    blocks.append(self.normalized)
                for agg in blocks:
                    lo, hi = agg["ci_low"], agg["ci_high"]
                    row += [agg["mean"][i], "" if lo is None else lo[i], "" if hi is None else hi[i]]
                w.writerow(row)
