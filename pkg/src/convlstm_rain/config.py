"""``key=value`` run configuration files.

Blank lines and ``#`` comments are ignored. Unknown keys and malformed values
are rejected before any work starts.
"""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .convlstm import NetworkSpec
from .datapipe import WindowSpec
from .training import TrainConfig


class ConfigError(ValueError):
    pass


def _bool(text):
    low = text.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _pair(text):
    parts = [int(p) for p in text.replace("x", ",").split(",")]
    if len(parts) == 1:
        parts = parts * 2
    if len(parts) != 2:
        raise ValueError(f"expected two integers, got {text!r}")
    return tuple(parts)


def _optional_float(text):
    return None if text.lower() in ("", "none", "off") else float(text)


@dataclass(frozen=True)
class RunConfig:
    data: str | None = None
    out: str = "out"
    seed: int = 0
    lead: int = 6
    input_length: int = 24
    layer1_filters: int = 128
    layer2_filters: int = 64
    kernel: tuple = (2, 2)
    activation: str = "relu"
    peepholes: bool = True
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 100
    early_stop_patience: int = 10
    clip_norm: float | None = None

    def network_spec(self):
        return NetworkSpec(
            layer1_filters=self.layer1_filters,
            layer2_filters=self.layer2_filters,
            kernel=tuple(self.kernel),
            activation=self.activation,
            peepholes=self.peepholes,
        )

    def window_spec(self):
        return WindowSpec(self.input_length, self.lead)

    def train_config(self):
        return TrainConfig(
            learning_rate=self.learning_rate,
            beta1=self.beta1,
            beta2=self.beta2,
            epsilon=self.epsilon,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            early_stop_patience=self.early_stop_patience,
            seed=self.seed,
            clip_norm=self.clip_norm,
        )

    def validate(self):
        """Construct every derived object so bad values surface immediately."""
        try:
            self.network_spec()
            self.window_spec()
            self.train_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self

    def to_text(self):
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                # unset optional fields fall back to their defaults on re-read
                continue
            if isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{f.name}={value}")
        return "\n".join(lines) + "\n"


_PARSERS = {
    "data": str,
    "out": str,
    "seed": int,
    "lead": int,
    "input_length": int,
    "layer1_filters": int,
    "layer2_filters": int,
    "kernel": _pair,
    "activation": str,
    "peepholes": _bool,
    "learning_rate": float,
    "beta1": float,
    "beta2": float,
    "epsilon": float,
    "batch_size": int,
    "max_epochs": int,
    "early_stop_patience": int,
    "clip_norm": _optional_float,
}


def parse_config(text, source="<config>"):
    values = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise ConfigError(f"{source}:{n}: expected key=value")
        if key not in _PARSERS:
            raise ConfigError(f"{source}:{n}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{n}: duplicate key {key!r}")
        try:
            values[key] = _PARSERS[key](value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{n}: bad value for {key}: {exc}") from None
    return RunConfig(**values).validate()


def load_config(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(), str(path))


def override(cfg, **changes):
    changes = {k: v for k, v in changes.items() if v is not None}
    return replace(cfg, **changes).validate() if changes else cfg
