"""Monte-Carlo policy-gradient estimators (S2PG and BPTT) and GAE."""

from s2pg_lab.estimators.chain_oracle import (chain_returns, finite_difference_gradient, one_step_gradient,
                                              z_scores)
from s2pg_lab.estimators.gae import compute_gae, gae_flat
from s2pg_lab.estimators.reinforce import (BASELINE_MODES, GradientSample, dump_gradients_csv, reinforce_bptt,
                                           reinforce_s2pg, step_targets)
from s2pg_lab.estimators.trajectory import (ExtendedTrajectory, collect_episodes, discounted_return,
                                            dump_trajectories_csv)

__all__ = [
    "BASELINE_MODES",
    "ExtendedTrajectory",
    "GradientSample",
    "chain_returns",
    "collect_episodes",
    "compute_gae",
    "discounted_return",
    "dump_gradients_csv",
    "dump_trajectories_csv",
    "finite_difference_gradient",
    "gae_flat",
    "one_step_gradient",
    "reinforce_bptt",
    "reinforce_s2pg",
    "step_targets",
    "z_scores",
]
