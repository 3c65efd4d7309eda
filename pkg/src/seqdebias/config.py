"""Configuration dataclasses shared across the package."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

BACKBONES = ("recurrent", "dilated_conv", "self_attention")

# "dcr" is the full disentangled counterfactual model; var0/var1/var2 are its
# ablations; the rest are single-tower baselines.
MODEL_MODES = (
    "dcr",
    "var0",
    "var1",
    "var2",
    "base_bce",
    "base_bpr",
    "bias_tower",
    "ipw_bce",
    "ipw_bpr",
    "macr",
)

DISENTANGLED_MODES = ("dcr", "var0", "var1", "var2")


class ConfigError(ValueError):
    """Raised for invalid or inconsistent configuration values."""


@dataclass
class ModelConfig:
    mode: str = "dcr"
    backbone: str = "self_attention"
    embedding_dim: int = 50
    max_len: int = 200
    dropout: float = 0.2
    num_heads: int = 1
    num_layers: int = 2
    kernel_size: int = 3
    dilations: tuple = (1, 2, 4, 8, 1, 2, 4, 8)
    use_user_embedding: bool = False
    user_dim: int = 0
    merge_mode: str = "identity"  # "identity" or "mlp"
    inference_c: float = 0.0

    def validate(self):
        if self.mode not in MODEL_MODES:
            raise ConfigError(f"unknown model mode {self.mode!r}")
        if self.backbone not in BACKBONES:
            raise ConfigError(f"unknown backbone {self.backbone!r}")
        if self.merge_mode not in ("identity", "mlp"):
            raise ConfigError(f"unknown merge mode {self.merge_mode!r}")
        if self.merge_mode == "mlp" and not self.use_user_embedding:
            raise ConfigError("merge_mode='mlp' requires use_user_embedding")
        if self.inference_c < 0:
            raise ConfigError("inference_c must be >= 0")
        return self

    @property
    def is_disentangled(self) -> bool:
        return self.mode in DISENTANGLED_MODES


@dataclass
class LossWeights:
    alpha: float = 2e-2
    beta: float = 2e-2
    gamma: float = 5e-1

    def validate(self):
        for name in ("alpha", "beta", "gamma"):
            v = getattr(self, name)
            if not (v >= 0 and v == v and v != float("inf")):
                raise ConfigError(f"loss weight {name} must be finite and >= 0")
        return self


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 128
    max_epochs: int = 200
    patience: int = 40
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    grad_clip_norm: float = 0.0  # 0 disables clipping
    num_negatives: int = 1
    omega: float = 0.5
    rho: float = 0.5
    propensity_eps: float = 1e-3

    def validate(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        self.weights.validate()
        return self


@dataclass
class EvalProtocol:
    k: int = 10
    num_negatives: int = 100
    reweighting: str = "ipw"  # "ipw" or "none"
    ipw_raw_counts: bool = False  # 1/n_i instead of 1/theta_plus
    seed: int = 0

    def validate(self):
        if self.k < 1 or self.num_negatives < 1:
            raise ConfigError("k and num_negatives must be >= 1")
        if self.reweighting not in ("ipw", "none"):
            raise ConfigError(f"unknown reweighting {self.reweighting!r}")
        return self


@dataclass
class ExperimentSpec:
    dataset: str = ""
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalProtocol = field(default_factory=EvalProtocol)
    sweep: dict = field(default_factory=dict)  # param path -> list of values
    repeats: int = 10
    reference_mode: str = ""
    output_dir: str = "runs"

    def validate(self):
        if not self.dataset:
            raise ConfigError("dataset must be set")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        self.model.validate()
        self.train.validate()
        self.eval.validate()
        for path in self.sweep:
            try:
                _resolve_field(self, path)
            except (AttributeError, KeyError):
                raise ConfigError(f"sweep axis {path!r} does not name a config field")
        return self


def _resolve_field(spec, path):
    obj = spec
    parts = path.split(".")
    for p in parts[:-1]:
        obj = getattr(obj, p)
    if not hasattr(obj, parts[-1]):
        raise AttributeError(path)
    return obj, parts[-1]


def set_field(spec: ExperimentSpec, path: str, value):
    obj, leaf = _resolve_field(spec, path)
    setattr(obj, leaf, value)


def _from_dict(cls, data: dict):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"unknown config keys for {cls.__name__}: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        ftype = fields[name].type
        if name == "model":
            value = _from_dict(ModelConfig, value)
        elif name == "train":
            value = _from_dict(TrainConfig, value)
        elif name == "eval":
            value = _from_dict(EvalProtocol, value)
        elif name == "weights":
            value = _from_dict(LossWeights, value)
        elif name == "dilations":
            value = tuple(value)
        kwargs[name] = value
    return cls(**kwargs)


def spec_from_dict(data: dict) -> ExperimentSpec:
    return _from_dict(ExperimentSpec, data).validate()


def spec_to_dict(spec) -> dict:
    return dataclasses.asdict(spec)


def config_hash(spec) -> str:
    """Stable hash identifying one experiment configuration."""
    payload = json.dumps(spec_to_dict(spec), sort_keys=True, default=str)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]
