"""Batched desk-scale environments with masked observations and privileged state."""

from s2pg_lab.envs.base import Env, EnvConfig, EnvStep, EnvUsageError, dump_trajectory_csv
from s2pg_lab.envs.chain import ChainDiagnostic
from s2pg_lab.envs.pendulum import MaskedPendulum
from s2pg_lab.envs.point_mass import PointMassDoor, PointMassMemory

REGISTRY = {
    "point_mass_memory": PointMassMemory,
    "point_mass_door": PointMassDoor,
    "masked_pendulum": MaskedPendulum,
    "chain": ChainDiagnostic,
}


def make_env(config: EnvConfig, n: int = 1, seed: int | None = None) -> Env:
    """Instantiate ``n`` copies of the environment named in ``config``."""
    try:
        cls = REGISTRY[config.name]
    except KeyError:
        raise ValueError(f"unknown env {config.name!r}; known: {sorted(REGISTRY)}") from None
    kw = dict(config.params)
    if config.dt is not None:
        kw["dt"] = config.dt
    return cls(n=n, horizon=config.horizon, seed=config.seed if seed is None else seed, **kw)


def reset(env: Env, seed: int | None = None) -> EnvStep:
    return env.reset(seed)


def step(env: Env, action) -> EnvStep:
    return env.step(action)


__all__ = [
    "Env",
    "EnvConfig",
    "EnvStep",
    "EnvUsageError",
    "dump_trajectory_csv",
    "ChainDiagnostic",
    "MaskedPendulum",
    "PointMassDoor",
    "PointMassMemory",
    "REGISTRY",
    "make_env",
    "reset",
    "step",
]
