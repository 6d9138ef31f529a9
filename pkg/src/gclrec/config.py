"""Run configuration: every tunable knob with its default, plus a flat
key=value file format whose parse -> serialize -> parse round trip is the
identity."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .errors import ConfigError


@dataclass
class TrainConfig:
    dim: int = 32
    learning_rate: float = 0.005
    weight_decay: float = 1e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    p_augment: float = 0.01
    augment_mode: str = "mixed"  # mixed (remove+add views) | remove | add
    epsilon_hard: float = 0.3
    alpha: float = 0.6
    beta: float = 0.8
    mu: float = 0.6
    gamma: float = 0.7
    eta: float = 0.01
    gcn_layers: int = 2
    activation: str = "softmax"  # softmax | relu
    per_label_h0: bool = False
    temperature: float = 1.0
    cross_loss_sign: str = "attract"  # attract | repel
    agg_method: str = "attention"  # attention | mlp | mean
    k_top: int = 10
    epochs_main: int = 100
    epochs_subtask: int = 50
    epochs_validation: int = 50
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    label_mode: str = "multi"  # multi | binary
    ablation: str = "full"  # full | no_main | no_subtask | no_validation

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.dim < 1:
            raise ConfigError(f"dim {self.dim} must be >= 1")
        for name in ("learning_rate", "temperature"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        for name in ("weight_decay", "adam_epsilon", "alpha", "beta", "mu", "gamma", "eta"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("adam_beta1", "adam_beta2"):
            if not 0 <= getattr(self, name) < 1:
                raise ConfigError(f"{name} must be in [0, 1)")
        if not 0 <= self.p_augment <= 0.5:
            raise ConfigError(f"p_augment {self.p_augment} outside [0, 0.5]")
        if not 0 < self.epsilon_hard <= 1:
            raise ConfigError(f"epsilon_hard {self.epsilon_hard} outside (0, 1]")
        if not 1 <= self.gcn_layers <= 4:
            raise ConfigError(f"gcn_layers {self.gcn_layers} outside 1..4")
        if self.k_top < 1:
            raise ConfigError(f"k_top {self.k_top} must be >= 1")
        for name in ("epochs_main", "epochs_subtask", "epochs_validation"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        choices = {
            "augment_mode": ("mixed", "remove", "add"),
            "activation": ("softmax", "relu"),
            "cross_loss_sign": ("attract", "repel"),
            "agg_method": ("attention", "mlp", "mean"),
            "label_mode": ("multi", "binary"),
            "ablation": ("full", "no_main", "no_subtask", "no_validation"),
        }
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")

    def to_kv_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if f.name == "seeds":
                value = ",".join(str(s) for s in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(TrainConfig)}


def _parse_value(name: str, text: str):
    if name == "seeds":
        try:
            return tuple(int(s) for s in text.split(",") if s.strip())
        except ValueError:
            raise ConfigError(f"seeds must be comma-separated integers, got {text!r}")
    kind = _FIELD_TYPES.get(name)
    if kind is None:
        raise ConfigError(f"unknown config key {name!r}")
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "bool":
            if text.lower() in ("true", "1", "yes"):
                return True
            if text.lower() in ("false", "0", "no"):
                return False
            raise ValueError(text)
        return text
    except ValueError:
        raise ConfigError(f"cannot parse {name} = {text!r}")


def from_kv_text(text: str, base: TrainConfig | None = None) -> TrainConfig:
    values = dataclasses.asdict(base) if base else {}
    if base:
        values["seeds"] = base.seeds
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, _, raw = line.partition("=")
        values[key.strip()] = _parse_value(key.strip(), raw.strip())
    return TrainConfig(**values)


def load_config(path: str, base: TrainConfig | None = None) -> TrainConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return from_kv_text(fh.read(), base=base)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
