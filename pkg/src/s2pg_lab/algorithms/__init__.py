"""Actor-critic learners for stateful policies: PPO, TD3 and SAC variants."""

from s2pg_lab.algorithms.common import METRIC_COLUMNS, MetricsLog
from s2pg_lab.algorithms.config import AlgoConfig
from s2pg_lab.algorithms.critics import Critic, critic_input
from s2pg_lab.algorithms.offpolicy import (
    SACStateful,
    TD3Stateful,
    sac_rs_update,
    td3_rs_update,
    temperature_loss,
    train_offpolicy,
)
from s2pg_lab.algorithms.ppo import (
    PPOOptimizers,
    TrainResult,
    make_ppo,
    ppo_bptt_update,
    ppo_rs_update,
    segment_advantages,
    train_ppo,
)
from s2pg_lab.algorithms.replay import ReplayBuffer
from s2pg_lab.algorithms.rollout import EvalResult, StepSampler, evaluate, policy_actor, rollout

__all__ = [
    "METRIC_COLUMNS",
    "AlgoConfig",
    "Critic",
    "EvalResult",
    "MetricsLog",
    "PPOOptimizers",
    "ReplayBuffer",
    "SACStateful",
    "StepSampler",
    "TD3Stateful",
    "TrainResult",
    "critic_input",
    "evaluate",
    "make_ppo",
    "policy_actor",
    "ppo_bptt_update",
    "ppo_rs_update",
    "rollout",
    "sac_rs_update",
    "segment_advantages",
    "td3_rs_update",
    "temperature_loss",
    "train_offpolicy",
    "train_ppo",
]
