"""Run configuration: YAML file, CLI overrides, output-directory env var."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Optional

import yaml

from .ctcs import BETA, DEFAULT_ALPHA, GAMMA, N_C, TAU
from .nn.params import SubstrateConfig
from .ppo import RlConfig

OUTPUT_ENV = "SKILLCALC_OUTPUT_DIR"


class ConfigError(ValueError):
    pass


@dataclass
class TeacherKnobs:
    tau: float = TAU
    beta: float = BETA
    gamma: float = GAMMA
    n_c: int = N_C
    fixed_alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        if self.beta <= 0 or self.gamma <= 0 or self.tau <= 0:
            raise ConfigError("tau, beta and gamma must be positive")


@dataclass
class Ablation:
    no_difficulty_sampling: bool = False
    no_parameter_adjustment: bool = False
    no_curriculum: bool = False


@dataclass
class RunConfig:
    seed: int = 0
    curriculum: Optional[str] = None
    output_dir: str = "runs/default"
    substrate: SubstrateConfig = field(default_factory=SubstrateConfig)
    rl: RlConfig = field(default_factory=RlConfig)
    teacher: TeacherKnobs = field(default_factory=TeacherKnobs)
    ablation: Ablation = field(default_factory=Ablation)
    attention_size: int = 32
    monitor_size: int = 200
    monitor_every: int = 10
    checkpoint_every: int = 50

    def validate(self) -> "RunConfig":
        if self.curriculum is not None and not Path(self.curriculum).exists():
            raise ConfigError(f"curriculum file {self.curriculum} does not exist")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


def _build(cls, data):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"expected a mapping for {cls.__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        sub = _SECTIONS.get(name) if cls is RunConfig else None
        kwargs[name] = _build(sub, value) if sub is not None else value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


_SECTIONS = {"substrate": SubstrateConfig, "rl": RlConfig, "teacher": TeacherKnobs,
             "ablation": Ablation}


def load_config(path=None, overrides: Optional[dict] = None) -> RunConfig:
    data = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
    cfg = _build(RunConfig, data)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key in ("no_difficulty_sampling", "no_parameter_adjustment", "no_curriculum"):
            setattr(cfg.ablation, key, bool(value) or getattr(cfg.ablation, key))
        else:
            setattr(cfg, key, value)
    env = os.environ.get(OUTPUT_ENV)
    if env:
        cfg.output_dir = env
    return cfg.validate()
