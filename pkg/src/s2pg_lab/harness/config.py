"""Experiment configuration: one JSON document per experiment.

Unknown keys and ill-typed values raise :class:`ConfigError` naming the field
path (``algo.lr_actor``). Command-line overrides are ``dotted.path=value``
strings whose value is parsed as JSON when possible and kept as text
otherwise.
"""

from __future__ import annotations

import copy
import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from s2pg_lab.algorithms import AlgoConfig
from s2pg_lab.envs import REGISTRY, EnvConfig

__all__ = ["ConfigError", "ExperimentConfig", "KINDS", "ALGORITHMS", "load_config", "parse_config",
           "apply_overrides"]

KINDS = ("train", "variance", "gradcheck", "oracle")
# name -> (learner, PPO kind or off-policy algo, overrides forced on the AlgoConfig)
ALGORITHMS = {
    "ppo_rs": ("ppo", "s2pg", {}),
    "ppo_bptt": ("ppo", "bptt", {}),
    "ppo_stateless": ("ppo", "s2pg", {"d_z": 0}),
    "ppo_oracle": ("ppo", "s2pg", {"d_z": 0, "policy_input": "privileged"}),
    "td3_rs": ("offpolicy", "td3", {}),
    "sac_rs": ("offpolicy", "sac", {}),
}
POLICY_KEYS = ("d_z", "policy_hidden", "activation", "log_sigma_a", "log_sigma_z", "learn_sigma_z", "gate_bias",
               "state_embed")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class ExperimentConfig:
    kind: str = "train"
    env: dict = field(default_factory=lambda: {"name": "point_mass_memory"})
    algorithm: str = "ppo_rs"
    algo: dict = field(default_factory=dict)
    policy: dict = field(default_factory=dict)
    seeds: list = field(default_factory=lambda: [0])
    eval_every: int | None = None
    out_dir: str = "runs/experiment"
    jobs: int = 1
    variance: dict = field(default_factory=dict)
    oracle: dict = field(default_factory=dict)
    normalizer: dict = field(default_factory=dict)

    def env_config(self, seed: int = 0) -> EnvConfig:
        e = dict(self.env)
        return EnvConfig(name=e["name"], horizon=e.get("horizon"), dt=e.get("dt"), seed=seed,
                         params=dict(e.get("params", {})))

    def algo_config(self, seed: int) -> AlgoConfig:
        """AlgoConfig for one seed: algo block, then the policy block, then forced variant fields."""
        kw = dict(self.algo)
        kw.update(self.policy)
        if self.eval_every is not None:
            kw["eval_every"] = self.eval_every
        kw.update(ALGORITHMS[self.algorithm][2])
        kw["seed"] = int(seed)
        if "policy_hidden" in kw:
            kw["policy_hidden"] = tuple(kw["policy_hidden"])
        if "critic_hidden" in kw:
            kw["critic_hidden"] = tuple(kw["critic_hidden"])
        return AlgoConfig(**kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_ALGO_FIELDS = {f.name: f for f in dataclasses.fields(AlgoConfig)}
_ENV_KEYS = {"name", "horizon", "dt", "params"}


def _type_ok(value, default) -> bool:
    if default is None:
        return True
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, (tuple, list)):
        return isinstance(value, (tuple, list))
    return isinstance(value, type(default))


def _algo_default(name):
    f = _ALGO_FIELDS[name]
    return f.default_factory() if f.default is dataclasses.MISSING else f.default


def _check_block(path: str, block, allowed) -> None:
    if not isinstance(block, dict):
        raise ConfigError(path, "expected an object")
    for key in block:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}", "unknown field")


def _validate(cfg: ExperimentConfig) -> None:
    if cfg.kind not in KINDS:
        raise ConfigError("kind", f"must be one of {list(KINDS)}, got {cfg.kind!r}")
    if cfg.algorithm not in ALGORITHMS:
        raise ConfigError("algorithm", f"must be one of {sorted(ALGORITHMS)}, got {cfg.algorithm!r}")
    _check_block("env", cfg.env, _ENV_KEYS)
    if cfg.env.get("name") not in REGISTRY:
        raise ConfigError("env.name", f"must be one of {sorted(REGISTRY)}")
    try:
        cfg.env_config()
    except ValueError as err:
        raise ConfigError("env", str(err)) from None
    _check_block("algo", cfg.algo, _ALGO_FIELDS)
    _check_block("policy", cfg.policy, POLICY_KEYS)
    for block in ("algo", "policy"):
        for key, value in getattr(cfg, block).items():
            default = _algo_default(key)
            if not _type_ok(value, default):
                raise ConfigError(f"{block}.{key}", f"expected {type(default).__name__}, got {value!r}")
    if not isinstance(cfg.seeds, list) or not cfg.seeds:
        raise ConfigError("seeds", "need at least one seed")
    for i, s in enumerate(cfg.seeds):
        if not isinstance(s, int) or isinstance(s, bool) or s < 0:
            raise ConfigError(f"seeds[{i}]", f"expected a nonnegative integer, got {s!r}")
    if cfg.eval_every is not None and (not isinstance(cfg.eval_every, int) or cfg.eval_every < 1):
        raise ConfigError("eval_every", "expected a positive integer")
    if not isinstance(cfg.jobs, int) or cfg.jobs < 1:
        raise ConfigError("jobs", "expected a positive integer")
    _check_block("variance", cfg.variance, {"Z_values", "T_values", "samples", "N", "setup"})
    _check_block("oracle", cfg.oracle, {"coeffs", "learnable", "horizon", "gamma", "sigma_a", "sigma_z",
                                        "samples", "fd_samples", "truncation", "estimator"})
    _check_block("normalizer", cfg.normalizer, {"high", "low"})
    try:
        cfg.algo_config(cfg.seeds[0])
    except (TypeError, ValueError) as err:
        raise ConfigError("algo", str(err)) from None
    out = Path(cfg.out_dir)
    probe = out if out.exists() else next((p for p in out.parents if p.exists()), Path("."))
    if not os.access(probe, os.W_OK):
        raise ConfigError("out_dir", f"{cfg.out_dir} is not writable")


def _set_path(doc: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = doc
    for i, k in enumerate(keys[:-1]):
        nxt = node.get(k)
        if nxt is None:
            nxt = node[k] = {}
        if not isinstance(nxt, dict):
            raise ConfigError(".".join(keys[:i + 1]), "cannot override inside a non-object field")
        node = nxt
    node[keys[-1]] = value


def apply_overrides(doc: dict, overrides) -> dict:
    """Copy of ``doc`` with every ``key.path=value`` override applied."""
    doc = copy.deepcopy(doc)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(item, "override must look like key.path=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        _set_path(doc, key.strip(), value)
    return doc


def parse_config(doc: dict, overrides=None) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "expected a JSON object")
    doc = apply_overrides(doc, overrides)
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    for key in doc:
        if key not in known:
            raise ConfigError(key, "unknown field")
    cfg = ExperimentConfig(**doc)
    _validate(cfg)
    return cfg


def load_config(source, overrides=None) -> ExperimentConfig:
    """Parse a JSON file path, JSON text or an already-decoded dict."""
    if isinstance(source, dict):
        return parse_config(source, overrides)
    if isinstance(source, str) and source.lstrip().startswith("{"):
        text = source
    else:
        try:
            text = Path(source).read_text()
        except OSError as err:
            raise ConfigError("<root>", f"cannot read config: {err}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError("<root>", f"invalid JSON at line {err.lineno} column {err.colno}: {err.msg}") from None
    return parse_config(doc, overrides)
