"""Training hyperparameters. Defaults are the published WN18RR settings."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Optional

from .errors import ConfigurationError


@dataclass
class TrainConfig:
    dim: int = 256
    learning_rate: float = 5e-3
    l2_lambda: float = 1e-7
    batch_size: int = 512
    max_epochs: int = 20
    num_layers: int = 2
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    exclude_self: bool = False
    neighbor_cap: Optional[int] = None
    strict_determinism: bool = False
    lazy_adam: bool = True
    patience: Optional[int] = None
    wide_precision: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.dim < 1:
            raise ConfigurationError("dim must be positive")
        if self.learning_rate <= 0 or self.adam_eps <= 0:
            raise ConfigurationError("learning_rate and adam_eps must be positive")
        if self.l2_lambda < 0:
            raise ConfigurationError("l2_lambda must be non-negative")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ConfigurationError("Adam betas must lie in [0, 1)")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be at least 1")
        if self.num_layers < 0 or self.max_epochs < 0:
            raise ConfigurationError("num_layers and max_epochs must be non-negative")
        if self.neighbor_cap is not None and self.neighbor_cap < 1:
            raise ConfigurationError("neighbor_cap must be at least 1")
        if not 0 <= self.seed < 2**32:
            raise ConfigurationError("seed must fit in 32 bits")

    @property
    def dtype(self):
        import numpy as np
        return np.float64 if self.wide_precision else np.float32

    def as_dict(self):
        return asdict(self)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]
