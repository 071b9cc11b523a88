"""Run configuration: a JSON file with optional ``section.key=value`` overrides.

Every command reads the same file so an experiment is pinned down by one
config plus its seed. Unknown sections or keys are errors, so a typo never
silently falls back to a default.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .codec import DEFAULT_REFERENCE_VELOCITY, WEBER_SMOOTHING, NoteToken
from .model import TrainConfig
from .screen import DEFAULT_LAMBDA, DEFAULT_WINDOW, ScreeningConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PathSettings:
    corpus_dir: str = "corpus"
    output_dir: str = "out"
    checkpoint_dir: str = "checkpoints"


@dataclass(frozen=True)
class CodecSettings:
    reference_velocity: int = DEFAULT_REFERENCE_VELOCITY
    smoothing: int = WEBER_SMOOTHING

    def check(self):
        if not 1 <= self.reference_velocity <= 127:
            raise ConfigError("codec.reference_velocity must be in 1..127")
        if not 0 <= self.smoothing <= 50:
            raise ConfigError("codec.smoothing must be in 0..50")


@dataclass(frozen=True)
class ModelSettings:
    layers: int = 2
    hidden: int = 150
    segment: int = 128
    learning_rate: float = 1e-3
    lr_decay: float = 1.0
    epochs: int = 20
    batch_size: int = 16
    clip: float = 5.0

    def check(self):
        if not 1 <= self.layers <= 8:
            raise ConfigError("model.layers must be in 1..8")
        if not 1 <= self.hidden <= 4096:
            raise ConfigError("model.hidden must be in 1..4096")
        if self.segment < 1 or self.batch_size < 1:
            raise ConfigError("model.segment and model.batch_size must be positive")
        if not 0 < self.learning_rate <= 1:
            raise ConfigError("model.learning_rate must be in (0, 1]")
        if not 0 < self.lr_decay <= 1:
            raise ConfigError("model.lr_decay must be in (0, 1]")
        if self.epochs < 0:
            raise ConfigError("model.epochs must be non-negative")
        if self.clip <= 0:
            raise ConfigError("model.clip must be positive")

    def train_config(self, seed: int, conditioned: bool = True) -> TrainConfig:
        return TrainConfig(hidden=self.hidden, layers=self.layers, segment=self.segment,
                           learning_rate=self.learning_rate, lr_decay=self.lr_decay,
                           epochs=self.epochs, batch_size=self.batch_size, clip=self.clip,
                           seed=seed, conditioned=conditioned)


@dataclass(frozen=True)
class GenerationSettings:
    length: int = 200         # N notes per candidate
    candidates: int = 50      # M
    temperature: float = 1.0
    seed_token: tuple[int, ...] | None = None  # default: first note of the reference corpus

    def check(self):
        if self.length < 1 or self.candidates < 1:
            raise ConfigError("generation.length and generation.candidates must be positive")
        if not 0 < self.temperature <= 100:
            raise ConfigError("generation.temperature must be in (0, 100]")
        if self.seed_token is not None:
            try:
                NoteToken(*self.seed_token).validate()
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"generation.seed_token: {exc}") from None


@dataclass(frozen=True)
class ScreeningSettings:
    regulation: float = DEFAULT_LAMBDA
    window: int = DEFAULT_WINDOW
    aesthetic_weight: float = 1.0

    def check(self):
        if self.regulation < 0 or self.aesthetic_weight < 0:
            raise ConfigError("screening.regulation and screening.aesthetic_weight must be >= 0")
        if self.window < 1:
            raise ConfigError("screening.window must be positive")

    def screening_config(self) -> ScreeningConfig:
        return ScreeningConfig(self.regulation, self.window, self.aesthetic_weight)


_SECTIONS = {
    "paths": PathSettings,
    "codec": CodecSettings,
    "model": ModelSettings,
    "generation": GenerationSettings,
    "screening": ScreeningSettings,
}


@dataclass(frozen=True)
class RunConfig:
    paths: PathSettings = field(default_factory=PathSettings)
    codec: CodecSettings = field(default_factory=CodecSettings)
    model: ModelSettings = field(default_factory=ModelSettings)
    generation: GenerationSettings = field(default_factory=GenerationSettings)
    screening: ScreeningSettings = field(default_factory=ScreeningSettings)
    seed: int = 0

    def __post_init__(self):
        for name in _SECTIONS:
            section = getattr(self, name)
            if hasattr(section, "check"):
                section.check()
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        kwargs = {}
        for key, value in data.items():
            if key == "seed":
                kwargs["seed"] = value
                continue
            if key not in _SECTIONS:
                raise ConfigError(f"unknown config section {key!r}")
            kwargs[key] = _build_section(key, value)
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(data)

    def with_overrides(self, overrides: list[str]) -> "RunConfig":
        """Apply ``section.key=value`` strings; values are parsed as JSON when possible."""
        data = self.to_dict()
        for item in overrides:
            key, sep, raw = item.partition("=")
            if not sep:
                raise ConfigError(f"override {item!r} is not key=value")
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            parts = key.strip().split(".")
            if parts == ["seed"]:
                data["seed"] = value
            elif len(parts) == 2 and parts[0] in _SECTIONS:
                data[parts[0]][parts[1]] = value
            else:
                raise ConfigError(f"unknown config key {key!r}")
        return RunConfig.from_dict(data)


def _build_section(name: str, value):
    cls = _SECTIONS[name]
    if not isinstance(value, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(value) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in {name!r}: {', '.join(unknown)}")
    out = cls()
    updates = {}
    for key, v in value.items():
        default = getattr(out, key)
        updates[key] = _coerce(f"{name}.{key}", v, default, known[key].type)
    return replace(out, **updates)


def _coerce(key: str, value, default, annotation: str):
    if "tuple" in str(annotation):
        if value is None:
            return None
        if not isinstance(value, (list, tuple)) or not all(
                isinstance(x, int) and not isinstance(x, bool) for x in value):
            raise ConfigError(f"{key} must be a list of integers or null")
        return tuple(value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{key} must be a string")
    return value
