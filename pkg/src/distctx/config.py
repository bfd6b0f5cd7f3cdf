"""Experiment configuration and its flat ``key = value`` file format."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields
from pathlib import Path

from distctx.errors import ConfigError
from distctx.protocol import EVENT_TRIGGERED, IMMEDIATE_SHARING, NO_COMMUNICATION

MODES = ("hidden", "observed", "exact")
ENVS = ("synthetic", "movielens")
PROTOCOL_ALIASES = {
    "sync": EVENT_TRIGGERED,
    "event_triggered": EVENT_TRIGGERED,
    "immediate": IMMEDIATE_SHARING,
    "immediate_sharing": IMMEDIATE_SHARING,
    "none": NO_COMMUNICATION,
    "no_communication": NO_COMMUNICATION,
}
# Config keys that are not valid Python identifiers.
_RENAMED = {"lambda": "lam"}


@dataclass
class ExperimentConfig:
    env: str = "synthetic"
    M: int = 3
    T: int = 1000
    trials: int = 1
    mode: str = "hidden"
    protocol: str = EVENT_TRIGGERED
    delta: float | None = None
    lam: float = 1.0
    S: float | None = None
    rho_override: float | None = None
    B_override: float | None = None
    seed: int = 0
    sigma: float = 1e-3
    # synthetic environment
    n_actions: int = 20
    context_dim: int = 5
    context_var: float = 1.0
    context_mean_scale: float = 1.0
    # movielens environment
    ratings: str | None = None
    factors: str | None = None
    rank: int = 6
    noise_level: float = 0.1
    als_iterations: int = 25
    als_reg: float = 0.1
    # per-step diagnostics in the trace
    diagnostics: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        self.protocol = PROTOCOL_ALIASES.get(self.protocol, self.protocol)
        if self.env not in ENVS:
            raise ConfigError(f"env must be one of {ENVS}, got {self.env!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.protocol not in PROTOCOL_ALIASES.values():
            raise ConfigError(f"unknown protocol {self.protocol!r}")
        for key in ("T", "M", "trials", "n_actions", "context_dim", "rank"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1")
        if self.delta is not None and not 0 < self.delta < 1:
            raise ConfigError("delta must lie in (0, 1)")
        if self.lam <= 0:
            raise ConfigError("lambda must be positive")
        if self.sigma < 0 or self.context_var < 0 or self.noise_level < 0:
            raise ConfigError("sigma, context_var and noise_level must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.B_override is not None and not self.B_override > 0:
            raise ConfigError("B_override must be positive")
        if self.env == "movielens" and not (self.ratings or self.factors):
            raise ConfigError("movielens env needs `ratings` or `factors`")

    @property
    def effective_delta(self) -> float:
        """Default ``1 / (M^2 T)``."""
        return self.delta if self.delta is not None else 1.0 / (self.M**2 * self.T)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def _coerce(name: str, raw: str, annotation: str):
    raw = raw.strip()
    optional = "None" in annotation
    if optional and raw.lower() in ("", "none"):
        return None
    try:
        if annotation.startswith("int"):
            return int(raw)
        if annotation.startswith("float"):
            value = float(raw)
            if math.isnan(value):
                raise ValueError("nan")
            return value
        if annotation.startswith("bool"):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None
    return raw


_FIELD_TYPES = {f.name: str(f.type) for f in fields(ExperimentConfig)}


def config_from_mapping(values: dict[str, str]) -> ExperimentConfig:
    kwargs = {}
    for key, raw in values.items():
        name = _RENAMED.get(key, key)
        if name not in _FIELD_TYPES or key in _RENAMED.values():
            raise ConfigError(f"unknown config key {key!r}")
        kwargs[name] = _coerce(key, raw, _FIELD_TYPES[name]) if isinstance(raw, str) else raw
    return ExperimentConfig(**kwargs)


def parse_config(text: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected `key = value`, got {line!r}")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def load_config(path: str | Path, **overrides) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    values: dict = parse_config(text)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_mapping(values)


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        key = "lambda" if f.name == "lam" else f.name
        lines.append(f"{key} = {'none' if value is None else value}")
    return "\n".join(lines) + "\n"
