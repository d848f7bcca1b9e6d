"""Scenario configuration: the four experimental cases and all tunable knobs."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class Case(Enum):
    """Experimental condition.

    1: benign baseline (no adversary, no defense)
    2: adversarial amplification, no protection
    3: adversary plus post-hoc fact-check moderation
    4: adversary plus the coordinated intervention team
    """

    CASE1 = 1
    CASE2 = 2
    CASE3 = 3
    CASE4 = 4

    @property
    def has_adversary(self) -> bool:
        return self is not Case.CASE1

    @property
    def has_team(self) -> bool:
        return self is Case.CASE4

    @property
    def has_moderation(self) -> bool:
        return self is Case.CASE3


class Ablation(str, Enum):
    """Single-role removals, applicable to Case 4 only."""

    NO_ANALYST = "analyst"
    NO_STRATEGIST = "strategist"
    NO_LEADER = "leader"
    NO_AMPLIFIERS = "amplifiers"


class BackendKind(str, Enum):
    SCRIPTED = "scripted"
    REMOTE = "remote"


DEFAULT_SNAPSHOT_STEPS = (1, 5, 10, 20, 30)


class ConfigError(ValueError):
    """Raised when a scenario configuration violates its invariants."""


@dataclass
class ScenarioConfig:
    case: Case = Case.CASE1
    horizon: int = 30
    population_size: int = 50
    seed: int = 0
    lambda1: float = 1.0
    lambda2: float = 1.0
    eta: float = 0.01
    delta: float = 0.2
    epsilon_mem: float = 0.05
    clarification_delay: int = 4
    factcheck_delay: int = 3
    ablations: frozenset[Ablation] = frozenset()
    backend: BackendKind = BackendKind.SCRIPTED
    snapshot_steps: tuple[int, ...] = DEFAULT_SNAPSHOT_STEPS

    # Environment tuning (fixed across cases; not part of the case contrast)
    adversarial_fraction: float = 0.25
    boost_likes: int = 5
    feed_top_k: int = 10
    feed_window: int = 3
    influence_rate: float = 0.5
    opinion_noise: float = 0.02
    attack_squad_size: int = 15
    lexicon_alert_threshold: float = 0.3

    def validate(self) -> None:
        if self.horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {self.horizon}")
        if self.population_size < 1:
            raise ConfigError(f"population_size must be >= 1, got {self.population_size}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("lambda1 and lambda2 must be nonnegative")
        if not 0 < self.delta < 1:
            raise ConfigError(f"delta must be in (0,1), got {self.delta}")
        if not 0 < self.epsilon_mem < 1:
            raise ConfigError(f"epsilon_mem must be in (0,1), got {self.epsilon_mem}")
        if self.clarification_delay < 1:
            raise ConfigError("clarification_delay must be >= 1")
        if self.factcheck_delay < 1:
            raise ConfigError("factcheck_delay must be >= 1")
        if self.ablations and self.case is not Case.CASE4:
            raise ConfigError("ablations are only meaningful for Case 4")
        if not 0 <= self.adversarial_fraction <= 1:
            raise ConfigError("adversarial_fraction must be in [0,1]")
        if self.attack_squad_size < 1:
            raise ConfigError("attack_squad_size must be >= 1")


_TOML_KEYS = {
    "case": lambda v: Case(int(v)),
    "horizon": int,
    "population_size": int,
    "seed": int,
    "lambda1": float,
    "lambda2": float,
    "eta": float,
    "delta": float,
    "epsilon_mem": float,
    "clarification_delay": int,
    "factcheck_delay": int,
    "ablations": lambda v: frozenset(Ablation(a) for a in v),
    "backend": BackendKind,
    "snapshot_steps": lambda v: tuple(int(s) for s in v),
    "adversarial_fraction": float,
    "boost_likes": int,
    "feed_top_k": int,
    "feed_window": int,
    "influence_rate": float,
    "opinion_noise": float,
    "attack_squad_size": int,
    "lexicon_alert_threshold": float,
}


def load_config(path: str | Path) -> ScenarioConfig:
    """Read a ScenarioConfig from a TOML file; unknown keys are rejected."""
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    kwargs = {}
    for key, value in raw.items():
        if key not in _TOML_KEYS:
            raise ConfigError(f"unknown config key: {key!r}")
        kwargs[key] = _TOML_KEYS[key](value)
    cfg = ScenarioConfig(**kwargs)
    cfg.validate()
    return cfg
