"""Pieces shared by the learners: metrics logging, evaluation schedule, input views."""

from __future__ import annotations

import csv
import time
from pathlib import Path

import numpy as np

from s2pg_lab.algorithms.config import AlgoConfig
from s2pg_lab.algorithms.rollout import evaluate

__all__ = ["METRIC_COLUMNS", "MetricsLog", "policy_x", "make_eval"]

METRIC_COLUMNS = ("step", "mean_return", "std_return", "success_rate", "wallclock_s", "grad_variance_probe")


class MetricsLog:
    """Rows of :data:`METRIC_COLUMNS`, kept in memory and optionally appended to a CSV."""

    def __init__(self, path=None):
        self.rows: list[dict] = []
        self.path = Path(path) if path is not None else None
        self.t0 = time.perf_counter()
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("w", newline="") as fh:
                csv.writer(fh).writerow(METRIC_COLUMNS)

    def append(self, step: int, result, grad_variance_probe: float = float("nan")) -> dict:
        row = {"step": int(step), "mean_return": result["mean_return"], "std_return": result["std_return"],
               "success_rate": result["success_rate"], "wallclock_s": time.perf_counter() - self.t0,
               "grad_variance_probe": float(grad_variance_probe)}
        self.rows.append(row)
        if self.path is not None:
            with self.path.open("a", newline="") as fh:
                csv.writer(fh).writerow([row[c] for c in METRIC_COLUMNS])
        return row

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows])


def policy_x(config: AlgoConfig, obs: np.ndarray, privileged: np.ndarray) -> np.ndarray:
    """The policy's input: the observation, or the full state for oracle baselines."""
    return privileged if config.policy_input == "privileged" else obs


def make_eval(env_factory, config: AlgoConfig):
    """Evaluation closure over fresh environment copies, seeded apart from training."""
    counter = [0]

    def run(policy):
        env = env_factory(config.eval_episodes)
        counter[0] += 1
        return evaluate(env, policy, seed=10_000 + 1000 * config.seed + counter[0],
                        privileged_input=config.policy_input == "privileged")
    return run
