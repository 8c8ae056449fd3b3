"""Run configuration: a flat INI-style file with sections, overridable from
the command line. Unknown sections or keys are rejected."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, fields

from .encoder import EncoderConfig
from .env import EpisodeConfig, RewardConstants
from .planner import PlannerConfig
from .training import TrainConfig


@dataclass(frozen=True)
class RunConfig:
    episode: EpisodeConfig = EpisodeConfig()
    planner: PlannerConfig = PlannerConfig()
    training: TrainConfig = TrainConfig()
    encoder: EncoderConfig = EncoderConfig()
    seed: int = 0
    split_seed: int = 7
    eval_episodes_per_user: int = 3

    def with_section(self, section: str, **kw) -> "RunConfig":
        if section == "run":
            return dataclasses.replace(self, **kw)
        current = getattr(self, section)
        return dataclasses.replace(
            self, **{section: dataclasses.replace(current, **kw)}
        )


_SECTION_TYPES = {
    "run": None,  # scalar fields on RunConfig itself
    "episode": EpisodeConfig,
    "rewards": RewardConstants,
    "planner": PlannerConfig,
    "training": TrainConfig,
    "encoder": EncoderConfig,
}

_RUN_FIELDS = {"seed", "split_seed", "eval_episodes_per_user"}


def _coerce(raw: str, target_type) -> object:
    if target_type is bool:
        low = raw.strip().lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if target_type is int:
        return int(raw)
    if target_type is float:
        return float(raw)
    return raw


def load_config(path) -> RunConfig:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise FileNotFoundError(f"config file not found: {path}")
    cfg = RunConfig()
    for section in parser.sections():
        if section not in _SECTION_TYPES:
            raise ValueError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            cfg = _apply(cfg, section, key, raw)
    return cfg


def _apply(cfg: RunConfig, section: str, key: str, raw: str) -> RunConfig:
    if section == "run":
        if key not in _RUN_FIELDS:
            raise ValueError(f"unknown key {key!r} in section [run]")
        return cfg.with_section("run", **{key: _coerce(raw, int)})
    cls = _SECTION_TYPES[section]
    valid = {f.name for f in fields(cls)} - {"rewards"}
    if key not in valid:
        raise ValueError(f"unknown key {key!r} in section [{section}]")
    if section == "rewards":
        rewards = dataclasses.replace(cfg.episode.rewards, **{key: _coerce(raw, float)})
        return cfg.with_section("episode", rewards=rewards)
    current = getattr(getattr(cfg, section), key)
    target_type = type(current) if current is not None else str
    return cfg.with_section(section, **{key: _coerce(raw, target_type)})


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply ``section.key=value`` strings from the command line."""
    for item in overrides:
        head, sep, raw = item.partition("=")
        if not sep:
            raise ValueError(f"override must look like section.key=value: {item!r}")
        section, dot, key = head.strip().partition(".")
        if not dot:
            raise ValueError(f"override key must be section.key: {head!r}")
        if section not in _SECTION_TYPES:
            raise ValueError(f"unknown config section {section!r}")
        cfg = _apply(cfg, section, key.strip(), raw.strip())
    return cfg
