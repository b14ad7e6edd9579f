from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

from ..groundtruth import SIGMA_CHOICES
from ..losses import GC_LOSSES, MAIN_LOSSES
from ..metrics import DEFAULT_BINS
from ..synthgen import ALLOWED_BIAS


class ConfigError(ValueError):
    pass


def parse_sigma(value):
    if value in ("gt", "matched"):
        return "gt"
    try:
        s = int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"sigma must be one of {SIGMA_CHOICES}, got {value!r}") from None
    if s not in SIGMA_CHOICES:
        raise ConfigError(f"sigma must be one of {SIGMA_CHOICES}, got {value!r}")
    return s


@dataclass
class DataConfig:
    num_train: int = 200
    num_test: int = 200
    partial_objects: bool = False
    dot_bias: int = 0
    sigma: object = "gt"
    use_biased_dots: bool = True
    seed: int = 0
    bias_mode: str = "two_point"


@dataclass
class PartitionConfig:
    scheme: str = "linear"
    n_intervals: int = 20
    eps0: float = 0.05


@dataclass
class LossConfig:
    main: str = "reg"
    gc: str = "none"
    w_gc: float = 1.0


@dataclass
class TrainConfig:
    epochs: int = 30
    lr: float = 1e-3
    batch_size: int = 6
    seed: int = 0
    # "step": lr x0.1 after 60% and again after 85% of the epochs; "fixed": constant
    lr_schedule: str = "step"


@dataclass
class EvalConfig:
    bins: list = field(default_factory=lambda: [list(b) for b in DEFAULT_BINS])
    # "true" scores against the size-matched reference map, "observed" against the noisy one
    target: str = "true"


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> "ExperimentConfig":
        d, p, l, t = self.data, self.partition, self.loss, self.training
        if d.num_train < 1 or d.num_test < 0:
            raise ConfigError("num_train must be >= 1 and num_test >= 0")
        if d.dot_bias not in ALLOWED_BIAS:
            raise ConfigError(f"dot_bias must be one of {ALLOWED_BIAS}, got {d.dot_bias}")
        d.sigma = parse_sigma(d.sigma)
        if d.bias_mode not in ("two_point", "range"):
            raise ConfigError(f"unknown bias_mode {d.bias_mode!r}")
        if l.main not in MAIN_LOSSES:
            raise ConfigError(f"loss.main must be one of {MAIN_LOSSES}, got {l.main!r}")
        if l.gc not in GC_LOSSES:
            raise ConfigError(f"loss.gc must be one of {GC_LOSSES}, got {l.gc!r}")
        if l.gc != "none" and l.main == "cls":
            raise ConfigError("a global count loss cannot be paired with the classification head")
        if l.w_gc < 0:
            raise ConfigError("w_gc must be non-negative")
        if l.main in ("cls", "dc"):
            if p.scheme not in ("linear", "log"):
                raise ConfigError(f"partition scheme must be linear or log, got {p.scheme!r}")
            if p.n_intervals < 1:
                raise ConfigError("n_intervals must be >= 1")
            if p.eps0 <= 0:
                raise ConfigError("eps0 must be positive")
        if t.epochs < 1 or t.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if t.lr_schedule not in ("step", "fixed"):
            raise ConfigError(f"unknown lr_schedule {t.lr_schedule!r}")
        if t.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.eval.target not in ("true", "observed"):
            raise ConfigError(f"eval.target must be 'true' or 'observed', got {self.eval.target!r}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        parts = {}
        for f in fields(cls):
            sub = d.get(f.name, {})
            klass = {"data": DataConfig, "partition": PartitionConfig, "loss": LossConfig,
                     "training": TrainConfig, "eval": EvalConfig}[f.name]
            known = {g.name for g in fields(klass)}
            unknown = set(sub) - known
            if unknown:
                raise ConfigError(f"unknown keys in {f.name}: {sorted(unknown)}")
            parts[f.name] = klass(**sub)
        return cls(**parts).validate()

    def digest(self) -> str:
        return config_digest(self.to_dict())

    def data_digest(self) -> str:
        return config_digest(asdict(self.data))

    def with_overrides(self, overrides: dict) -> "ExperimentConfig":
        """Apply dotted-key overrides such as {"loss.main": "dc"}."""
        d = self.to_dict()
        for key, value in overrides.items():
            section, _, name = key.partition(".")
            if section not in d or name not in d[section]:
                raise ConfigError(f"unknown config key {key!r}")
            d[section][name] = value
        return ExperimentConfig.from_dict(d)


def config_digest(d: dict) -> str:
    return hashlib.sha256(json.dumps(d, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def load_config(path: str) -> ExperimentConfig:
    with open(path) as f:
        return ExperimentConfig.from_dict(json.load(f))
