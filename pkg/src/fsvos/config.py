"""Run configuration: schedules, loss weights, and YAML round-tripping.

A run config nests four sections: ``data`` (synthetic generator), ``arch``
(model architecture), ``phase1`` (episodic image training), and ``phase2``
(video consistency adaptation). Unknown keys fail loudly so typos cannot
silently fall back to defaults. Learning rates may be exactly 0 (frozen-run
test mode) but never negative.
"""

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .data import SynthConfig
from .errors import ConfigurationError
from .model import ArchConfig

__all__ = ["Phase1Config", "Phase2Config", "RunConfig", "load_config",
           "config_from_dict", "config_to_dict", "resolve_output_root",
           "OUTPUT_ROOT_ENV"]

OUTPUT_ROOT_ENV = "FSVOS_OUTPUT_ROOT"


def _require_non_negative(value, name):
    if not (value >= 0):
        raise ConfigurationError(f"{name} must be >= 0, got {value}")


def _require_positive(value, name):
    if not (value >= 1):
        raise ConfigurationError(f"{name} must be >= 1, got {value}")


@dataclass(frozen=True)
class Phase1Config:
    """Episodic image-training schedule.

    The optimizer starts as Adam at ``adam_lr`` and switches to SGD at
    ``sgd_lr`` after ``adam_iterations`` steps; runs shorter than that use
    Adam throughout.
    """

    iterations: int = 2000
    batch_episodes: int = 8
    adam_lr: float = 1e-4
    sgd_lr: float = 1e-5
    adam_iterations: int = 5000
    n_shot: int = 1
    k_query: int = 1
    dice_weight: float = 0.0

    def __post_init__(self):
        _require_non_negative(self.iterations, "phase1.iterations")
        _require_positive(self.batch_episodes, "phase1.batch_episodes")
        _require_non_negative(self.adam_lr, "phase1.adam_lr")
        _require_non_negative(self.sgd_lr, "phase1.sgd_lr")
        _require_non_negative(self.adam_iterations, "phase1.adam_iterations")
        _require_positive(self.n_shot, "phase1.n_shot")
        _require_positive(self.k_query, "phase1.k_query")
        _require_non_negative(self.dice_weight, "phase1.dice_weight")


@dataclass(frozen=True)
class Phase2Config:
    """Video adaptation schedule and consistency-loss weights."""

    lr: float = 1e-5
    batch_size: int = 4
    epochs: int = 20
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    window: int = 4
    early_stop_total: float = 1e-5
    max_iterations: int = 0

    def __post_init__(self):
        _require_non_negative(self.lr, "phase2.lr")
        _require_positive(self.batch_size, "phase2.batch_size")
        _require_non_negative(self.epochs, "phase2.epochs")
        for name in ("lambda1", "lambda2", "lambda3"):
            _require_non_negative(getattr(self, name), f"phase2.{name}")
        _require_positive(self.window, "phase2.window")
        _require_non_negative(self.early_stop_total, "phase2.early_stop_total")
        _require_non_negative(self.max_iterations, "phase2.max_iterations")


@dataclass(frozen=True)
class RunConfig:
    """Top-level configuration for every command."""

    seed: int = 0
    output_root: str = None
    data: SynthConfig = field(default_factory=SynthConfig)
    arch: ArchConfig = field(default_factory=ArchConfig)
    phase1: Phase1Config = field(default_factory=Phase1Config)
    phase2: Phase2Config = field(default_factory=Phase2Config)


_SECTIONS = {"data": SynthConfig, "arch": ArchConfig,
             "phase1": Phase1Config, "phase2": Phase2Config}
_TUPLE_KEYS = {"image_size", "base_classes", "novel_classes",
               "channels", "stage_strides"}


def _section_from_dict(cls, raw: dict, section: str):
    if not isinstance(raw, dict):
        raise ConfigurationError(f"config section {section!r} must be a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigurationError(
            f"unknown keys in config section {section!r}: {sorted(unknown)}")
    kwargs = {}
    for key, value in raw.items():
        if key in _TUPLE_KEYS and isinstance(value, (list, tuple)):
            value = tuple(value)
        kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(raw: dict) -> RunConfig:
    """Build a validated RunConfig from a nested plain dict."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigurationError("config root must be a mapping")
    unknown = set(raw) - ({"seed", "output_root"} | set(_SECTIONS))
    if unknown:
        raise ConfigurationError(f"unknown top-level config keys: {sorted(unknown)}")
    kwargs = {}
    if "seed" in raw:
        kwargs["seed"] = int(raw["seed"])
    if "output_root" in raw and raw["output_root"] is not None:
        kwargs["output_root"] = str(raw["output_root"])
    for name, cls in _SECTIONS.items():
        if name in raw:
            kwargs[name] = _section_from_dict(cls, raw[name], name)
    return RunConfig(**kwargs)


def _plain(value):
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    return value


def config_to_dict(cfg: RunConfig) -> dict:
    out = {"seed": cfg.seed}
    if cfg.output_root is not None:
        out["output_root"] = cfg.output_root
    for name in _SECTIONS:
        section = getattr(cfg, name)
        out[name] = {f.name: _plain(getattr(section, f.name))
                     for f in dataclasses.fields(section)}
    return out


def load_config(path) -> RunConfig:
    """Parse a YAML config file into a validated RunConfig."""
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise ConfigurationError(f"invalid YAML in {path}: {e}") from e
    return config_from_dict(raw)


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=False))


def resolve_output_root(cfg: RunConfig = None, override: str = None) -> Path:
    """Output directory precedence: CLI flag, config, environment, ./runs."""
    if override:
        return Path(override)
    if cfg is not None and cfg.output_root:
        return Path(cfg.output_root)
    env = os.environ.get(OUTPUT_ROOT_ENV)
    if env:
        return Path(env)
    return Path("runs")
