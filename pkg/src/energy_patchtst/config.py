"""
Experiment configuration: a TOML (or JSON) document with one table per section.

Parsing is strict. Unknown keys anywhere are rejected, and every field has a
default, so an empty file is a valid configuration.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


@dataclass
class SyntheticSection:
    daily_amp: float = 1.0
    weekly_amp: float = 0.5
    driver_coef: float = 0.0
    noise_std: float = 0.05
    driver_phi: float = 0.9
    offset: float = 0.0
    n_targets: int = 1
    start: str = "2020-01-01T00:00:00"


@dataclass
class DatasetSection:
    """One data source: a CSV file or the synthetic generator."""

    name: str = "synthetic"
    source: str = "synthetic"
    path: str = ""
    targets: list = field(default_factory=list)
    future: list = field(default_factory=list)
    n_steps: int = 1344
    seed_offset: int = 0
    weight: float = 1.0
    synthetic: SyntheticSection = field(default_factory=SyntheticSection)


@dataclass
class DataSection(DatasetSection):
    lookback: int = 336
    horizon: int = 96
    stride: int = 1
    split: list = field(default_factory=lambda: [0.7, 0.1, 0.2])
    purge: bool = True
    instance_norm: bool = True


@dataclass
class ModelSection:
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 128
    dropout: float = 0.1
    loss_weight: float = 0.5
    var_floor: float = 1e-6
    windows: list = field(default_factory=lambda: [1, 24, 168])
    max_patch: int = 16


@dataclass
class TrainingSection:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 5
    freeze_encoder: bool = False
    pretrain_max_epochs: int = 100


@dataclass
class UncertaintySection:
    mc_samples: int = 50
    level: float = 0.95
    interval: str = "gaussian"
    crps: str = "gaussian"
    units: str = "normalized"


@dataclass
class AblationSection:
    multi_scale: bool = True
    future_variables: bool = True
    mc_dropout: bool = True
    pretraining: bool = True


@dataclass
class EvaluateSection:
    horizons: list = field(default_factory=list)
    baseline: bool = False


@dataclass
class ExperimentConfig:
    seed: int = 0
    data: DataSection = field(default_factory=DataSection)
    corpus: list = field(default_factory=list)  # of DatasetSection
    model: ModelSection = field(default_factory=ModelSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    uncertainty: UncertaintySection = field(default_factory=UncertaintySection)
    ablation: AblationSection = field(default_factory=AblationSection)
    evaluate: EvaluateSection = field(default_factory=EvaluateSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def eval_horizons(self) -> list[int]:
        return [int(h) for h in self.evaluate.horizons] or [self.data.horizon]


_NESTED = {
    (DatasetSection, "synthetic"): SyntheticSection,
    (DataSection, "synthetic"): SyntheticSection,
    (ExperimentConfig, "data"): DataSection,
    (ExperimentConfig, "model"): ModelSection,
    (ExperimentConfig, "training"): TrainingSection,
    (ExperimentConfig, "uncertainty"): UncertaintySection,
    (ExperimentConfig, "ablation"): AblationSection,
    (ExperimentConfig, "evaluate"): EvaluateSection,
}

_CHOICES = {
    "source": ("synthetic", "csv"),
    "interval": ("gaussian", "empirical"),
    "crps": ("gaussian", "mixture"),
    "units": ("normalized", "original"),
}


def _coerce(value, default, where):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return list(value)
    return value


def _build(cls, raw, where: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where or 'config'}: expected a table, got {type(raw).__name__}")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(names))
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown key(s) {unknown}")
    obj = cls()
    for key, value in raw.items():
        path = f"{where}.{key}" if where else key
        nested = _NESTED.get((cls, key))
        if nested is not None:
            value = _build(nested, value, path)
        elif cls is ExperimentConfig and key == "corpus":
            if not isinstance(value, list):
                raise ConfigError(f"corpus: expected a list of tables, got {value!r}")
            value = [_build(DatasetSection, item, f"corpus[{i}]") for i, item in enumerate(value)]
        else:
            value = _coerce(value, getattr(obj, key), path)
            if key in _CHOICES and value not in _CHOICES[key]:
                raise ConfigError(f"{path}: must be one of {_CHOICES[key]}, got {value!r}")
        setattr(obj, key, value)
    return obj


def parse_config(raw: dict) -> ExperimentConfig:
    cfg = _build(ExperimentConfig, raw, "")
    d = cfg.data
    if d.lookback < 1 or d.horizon < 1 or d.stride < 1:
        raise ConfigError("data.lookback, data.horizon and data.stride must be positive")
    if cfg.uncertainty.mc_samples < 2:
        raise ConfigError("uncertainty.mc_samples must be >= 2")
    if not 0 < cfg.uncertainty.level < 1:
        raise ConfigError("uncertainty.level must lie in (0, 1)")
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        raw = json.loads(text) if path.suffix == ".json" else tomllib.loads(text.decode())
    except (ValueError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    return parse_config(raw)
