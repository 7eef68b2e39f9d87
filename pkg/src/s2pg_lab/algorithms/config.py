"""Hyperparameters shared by the actor-critic algorithms."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

__all__ = ["AlgoConfig"]


@dataclass
class AlgoConfig:
    # common
    gamma: float = 0.99
    lr_actor: float = 3e-4
    lr_critic: float = 3e-4
    max_grad_norm: float | None = 0.5
    total_steps: int = 100_000
    n_envs: int = 8
    seed: int = 0
    privileged_critic: bool = True
    policy_input: str = "obs"          # "obs" or "privileged" (oracle baselines)
    reward_scale: float = 1.0
    d_z: int = 8
    policy_hidden: tuple = (64, 64)
    critic_hidden: tuple = (64, 64)
    activation: str = "tanh"
    log_sigma_a: float = -0.5
    log_sigma_z: float = -1.0
    learn_sigma_z: bool = True
    gate_bias: float = 0.0
    state_embed: int = 0
    # off-policy
    tau: float = 5e-3
    batch_size: int = 256
    s_min: int = 1000
    s_warm: int = 1000
    buffer_capacity: int = 100_000
    refresh: str = "on_sample"         # "off" or "on_sample"
    refresh_cap: int = 64
    updates_per_step: int = 1
    # TD3
    policy_delay: int = 2
    target_noise: float = 0.2
    target_noise_clip: float = 0.5
    explore_noise: float = 0.1
    z_bound: float = 1.0
    # SAC
    alpha_a: float = 0.2
    alpha_z: float = 0.2
    target_entropy_a: float | None = None   # None: -act_dim
    target_entropy_z: float | None = None   # None: -d_z
    lr_alpha: float = 3e-4
    learn_alpha: bool = True
    # PPO
    clip_eps: float = 0.2
    epochs: int = 10
    minibatches: int = 4
    lam: float = 0.95
    rollout_steps: int = 256
    value_epochs: int = 10
    normalize_advantages: bool = True
    truncation: int = 32               # PPO-BPTT window
    # evaluation
    eval_every: int = 10_000
    eval_episodes: int = 20
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not self.clip_eps > 0.0:
            raise ValueError("clip_eps must be > 0")
        if self.policy_delay < 1:
            raise ValueError("policy_delay must be >= 1")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must lie in [0, 1]")
        if self.refresh not in ("off", "on_sample"):
            raise ValueError("refresh must be 'off' or 'on_sample'")
        if self.policy_input not in ("obs", "privileged"):
            raise ValueError("policy_input must be 'obs' or 'privileged'")
        for name in ("batch_size", "n_envs", "epochs", "minibatches", "rollout_steps", "buffer_capacity"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.truncation < 0:
            raise ValueError("truncation must be >= 0")

    def replace(self, **changes) -> "AlgoConfig":
        return dataclasses.replace(self, **changes)
