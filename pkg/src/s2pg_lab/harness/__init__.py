"""Experiment runner: configuration, seeded runs, aggregation and SVG/CSV output."""

from s2pg_lab.harness.config import ALGORITHMS, KINDS, ConfigError, ExperimentConfig, apply_overrides, load_config
from s2pg_lab.harness.gradcheck import TOLERANCE, CheckResult, check_case, run_gradcheck
from s2pg_lab.harness.runner import RunFailed, random_policy_return, run
from s2pg_lab.harness.summary import RunSummary, aggregate_curves, normalize_returns

__all__ = [
    "ALGORITHMS",
    "KINDS",
    "TOLERANCE",
    "CheckResult",
    "ConfigError",
    "ExperimentConfig",
    "RunFailed",
    "RunSummary",
    "aggregate_curves",
    "apply_overrides",
    "check_case",
    "load_config",
    "normalize_returns",
    "random_policy_return",
    "run",
    "run_gradcheck",
]
