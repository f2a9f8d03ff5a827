"""Run configuration: scenario presets and the TOML run-file format.

A run file has an optional top-level ``preset`` and ``output_dir`` plus
``[world]``, ``[rewards]`` and ``[training]`` tables. Preset values are
applied first, then the file's keys. Unknown keys are errors.
"""

from dataclasses import dataclass, field, fields, asdict
from enum import Enum
from pathlib import Path

import tomli
import tomli_w

from .env import WorldConfig
from .maddpg import TrainConfig
from .rewards import RewardConfig

PRESETS = {
    # 5 pursuers tracking 2 targets among 3 obstacles, no scouts
    "multi-target": {"world": {"n_pursuers": 5, "n_scouts": 0, "n_evaders": 2, "n_obstacles": 3}},
    "role-based": {"world": {"n_pursuers": 5, "n_scouts": 5, "n_evaders": 2, "n_obstacles": 3}},
    "drone-demo": {"world": {"n_pursuers": 2, "n_scouts": 3, "n_evaders": 1, "n_obstacles": 3}},
}

_SECTIONS = {"world": WorldConfig, "rewards": RewardConfig, "training": TrainConfig}
_TOP_LEVEL = {"preset", "output_dir"}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    rewards: RewardConfig = field(default_factory=RewardConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    output_dir: str = "runs/default"
    preset: str = ""

    def to_dict(self):
        d = {}
        if self.preset:
            d["preset"] = self.preset
        d["output_dir"] = self.output_dir
        d.update(snapshot(self.world, self.rewards, self.training))
        return d

    def dumps(self):
        return tomli_w.dumps(self.to_dict())

    def save(self, path):
        Path(path).write_text(self.dumps())


def _plain(v):
    if isinstance(v, Enum):
        return v.value
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    return v


def snapshot(world, rewards, training):
    return {name: {k: _plain(v) for k, v in asdict(obj).items()}
            for name, obj in (("world", world), ("rewards", rewards), ("training", training))}


def _build(section, cls, values):
    known = {f.name for f in fields(cls)}
    for key in values:
        if key not in known:
            raise ConfigError(f"unknown key '{section}.{key}'")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{section}] section: {exc}") from None


def parse_snapshot(d):
    return tuple(_build(name, cls, dict(d.get(name, {}))) for name, cls in _SECTIONS.items())


def from_dict(d):
    for key, value in d.items():
        if key not in _TOP_LEVEL and key not in _SECTIONS:
            raise ConfigError(f"unknown key '{key}'")
        if key in _SECTIONS and not isinstance(value, dict):
            raise ConfigError(f"'{key}' must be a table")
    preset = d.get("preset", "")
    merged = {name: {} for name in _SECTIONS}
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset '{preset}' (choose from {', '.join(PRESETS)})")
        for name, values in PRESETS[preset].items():
            merged[name].update(values)
    for name in _SECTIONS:
        merged[name].update(d.get(name, {}))
    world, rewards, training = parse_snapshot(merged)
    return RunConfig(world, rewards, training, str(d.get("output_dir", "runs/default")), preset)


def loads(text):
    try:
        return from_dict(tomli.loads(text))
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from None


def load(path):
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return loads(p.read_text())


def preset(name, **sections):
    """RunConfig for a named preset with optional per-section overrides."""
    d = {"preset": name}
    d.update({k: v for k, v in sections.items() if v})
    return from_dict(d)
