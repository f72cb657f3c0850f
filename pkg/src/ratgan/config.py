"""Experiment configuration and its flat ``key = value`` file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .generator import GeneratorConfig
from .losses import LossHyperparams


@dataclass
class TrainConfig:
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    loss: LossHyperparams = field(default_factory=LossHyperparams)
    lr_g: float = 1e-4
    lr_d: float = 4e-4
    beta1: float = 0.0
    beta2: float = 0.9
    batch_size: int = 16
    steps: int = 2000
    d_steps: int = 1  # critic updates per generator update
    seed: int = 0
    encoder_seed: int = 0  # frozen image/text encoders; shared by every run
    eval_interval: int = 200
    image_interval: int = 1000
    checkpoint_interval: int = 500
    n_eval: int = 128
    disc_width: int = 32
    run_id: str = "run"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.lr_g < 0 or self.lr_d < 0:
            raise ConfigError("learning rates must be non-negative")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError(f"adam betas must lie in [0, 1), got ({self.beta1}, {self.beta2})")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.steps < 0 or self.d_steps < 1:
            raise ConfigError("steps must be >= 0 and d_steps >= 1")
        for name in ("eval_interval", "image_interval", "checkpoint_interval"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.n_eval < 2:
            raise ConfigError(f"n_eval must be >= 2, got {self.n_eval}")
        if not self.run_id or any(c in self.run_id for c in ",\n/"):
            raise ConfigError(f"run_id {self.run_id!r} must be non-empty without ',', '/' or newlines")

    @property
    def betas(self) -> tuple[float, float]:
        return (self.beta1, self.beta2)

    @property
    def conditioning_mode(self) -> str:
        return self.generator.conditioning_mode

    @property
    def hidden_dim(self) -> int:
        return self.generator.hidden_dim

    def replace(self, **changes) -> "TrainConfig":
        """Copy with flat-key overrides (generator/loss keys included)."""
        flat = to_flat(self)
        for key, value in changes.items():
            if key not in flat:
                raise ConfigError(f"unknown config key {key!r}")
            flat[key] = value
        return from_flat(flat)


_LOSS_KEYS = {"k": "k", "p": "p", "lambda": "lam"}


def _field_types(cls) -> dict:
    return {f.name: f.type for f in dataclasses.fields(cls)}


def to_flat(cfg: TrainConfig) -> dict:
    flat = {}
    for f in dataclasses.fields(GeneratorConfig):
        flat[f.name] = getattr(cfg.generator, f.name)
    for key, attr in _LOSS_KEYS.items():
        flat[key] = getattr(cfg.loss, attr)
    for f in dataclasses.fields(TrainConfig):
        if f.name not in ("generator", "loss"):
            flat[f.name] = getattr(cfg, f.name)
    return flat


def _coerce(key: str, value, default):
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        if str(value).lower() in ("1", "true", "yes"):
            return True
        if str(value).lower() in ("0", "false", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    try:
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if isinstance(default, float):
            return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected {type(default).__name__}, got {value!r}") from None
    return str(value)


def from_flat(values: dict) -> TrainConfig:
    defaults = to_flat(TrainConfig())
    unknown = sorted(set(values) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    merged = {k: _coerce(k, values[k], v) if k in values else v for k, v in defaults.items()}
    gen = GeneratorConfig(**{f.name: merged[f.name] for f in dataclasses.fields(GeneratorConfig)})
    loss = LossHyperparams(**{attr: merged[key] for key, attr in _LOSS_KEYS.items()})
    rest = {f.name: merged[f.name] for f in dataclasses.fields(TrainConfig) if f.name not in ("generator", "loss")}
    return TrainConfig(generator=gen, loss=loss, **rest)


def parse_config(text: str) -> TrainConfig:
    """Parse UTF-8 ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = value
    return from_flat(values)


def load_config(path) -> TrainConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def format_config(cfg: TrainConfig) -> str:
    return "".join(f"{k} = {v!r}\n" if isinstance(v, float) else f"{k} = {v}\n" for k, v in to_flat(cfg).items())
