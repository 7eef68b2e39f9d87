"""Analytic variance bounds and empirical variance of stateful gradient estimators."""

from s2pg_lab.variance_lab.bounds import (BoundInputs, bound_bptt, bound_s2pg, bound_s2pg_diag,
                                          empirical_variance, z_bar, z_bar_sum, z_tilde, z_tilde_sum)
from s2pg_lab.variance_lab.experiment import (REPORT_COLUMNS, RegimeSetup, VarianceReport, growth_factor,
                                              measure_cell, plot_report_svg, regime_experiment,
                                              write_report_csv)

__all__ = [
    "REPORT_COLUMNS",
    "BoundInputs",
    "RegimeSetup",
    "VarianceReport",
    "bound_bptt",
    "bound_s2pg",
    "bound_s2pg_diag",
    "empirical_variance",
    "growth_factor",
    "measure_cell",
    "plot_report_svg",
    "regime_experiment",
    "write_report_csv",
    "z_bar",
    "z_bar_sum",
    "z_tilde",
    "z_tilde_sum",
]
