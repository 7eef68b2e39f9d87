"""Stochastic stateful, recurrent-deterministic and deterministic stateful policies."""

from s2pg_lab.policies.constants import JacobianConstants, estimate_constants, jacobian_norms
from s2pg_lab.policies.means import NeuralMeans, ScalarLinearMeans
from s2pg_lab.policies.networks import MLP, GatedCell
from s2pg_lab.policies.stateful import (
    LOG_SIGMA_A,
    LOG_SIGMA_Z,
    DeterministicStatefulPolicy,
    PolicyState,
    RecurrentDeterministicPolicy,
    StatefulGaussianPolicy,
    act_deterministic,
    log_prob,
    sample,
    unroll_bptt,
)

__all__ = [
    "LOG_SIGMA_A",
    "LOG_SIGMA_Z",
    "DeterministicStatefulPolicy",
    "GatedCell",
    "JacobianConstants",
    "MLP",
    "NeuralMeans",
    "PolicyState",
    "RecurrentDeterministicPolicy",
    "ScalarLinearMeans",
    "StatefulGaussianPolicy",
    "act_deterministic",
    "estimate_constants",
    "jacobian_norms",
    "log_prob",
    "sample",
    "unroll_bptt",
]
