"""Training configuration."""

from __future__ import annotations

from dataclasses import dataclass, field

from .model import ABLATIONS

__all__ = ["TrainConfig"]


@dataclass
class TrainConfig:
    """Model plus optimizer settings.

    The numeric defaults (32 channels, batch 32, Adam at 1e-5, 24-month
    window, 3-month forecast) are the deployment-scale settings; experiments
    on small synthetic universes typically override the learning rate and
    epoch count. ``k_groups`` controls the dyadic kernel group (widths
    2..2^K) and must divide the channel count.
    """

    c: int = 32
    batch_size: int = 32
    learning_rate: float = 1e-5
    epochs: int = 50
    k_groups: int = 4
    n_layers: int = 2
    t_max: int = 24
    t_pred: int = 3
    seed: int = 0
    ablation: frozenset = field(default_factory=frozenset)
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    normalization: str = "log1p"
    early_stop_patience: int = 10
    hops: int | None = None          # ego radius; defaults to n_layers
    max_neighbors: int = 10
    share_cau: bool = False
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)

    def __post_init__(self):
        self.ablation = frozenset(self.ablation)
        unknown = self.ablation - ABLATIONS
        if unknown:
            raise ValueError(f"unknown ablation name(s): {sorted(unknown)}")
        if self.c < 1 or self.batch_size < 1 or self.epochs < 1 or self.t_pred < 1:
            raise ValueError("c, batch_size, epochs and t_pred must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if "no_tel" not in self.ablation:
            if self.c % self.k_groups != 0:
                raise ValueError(f"c ({self.c}) must be divisible by k_groups ({self.k_groups})")
            if 2**self.k_groups > self.t_max:
                raise ValueError(f"largest kernel width 2^{self.k_groups} exceeds t_max={self.t_max}")
        if self.normalization not in ("log1p", "none"):
            raise ValueError(f"normalization must be 'log1p' or 'none', got {self.normalization!r}")
        if self.hops is not None and self.hops < 1:
            raise ValueError("hops must be >= 1")
        self.split_ratios = tuple(self.split_ratios)

    @property
    def ego_hops(self) -> int:
        return self.hops if self.hops is not None else self.n_layers

    def to_json_dict(self) -> dict:
        return {
            "c": self.c,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "k_groups": self.k_groups,
            "n_layers": self.n_layers,
            "t_max": self.t_max,
            "t_pred": self.t_pred,
            "seed": self.seed,
            "ablation": sorted(self.ablation),
            "beta1": self.beta1,
            "beta2": self.beta2,
            "adam_eps": self.adam_eps,
            "normalization": self.normalization,
            "early_stop_patience": self.early_stop_patience,
            "hops": self.hops,
            "max_neighbors": self.max_neighbors,
            "share_cau": self.share_cau,
            "split_ratios": list(self.split_ratios),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "TrainConfig":
        kwargs = dict(d)
        if "ablation" in kwargs:
            kwargs["ablation"] = frozenset(kwargs["ablation"])
        if "split_ratios" in kwargs:
            kwargs["split_ratios"] = tuple(kwargs["split_ratios"])
        known = set(cls.__dataclass_fields__)
        unknown = set(kwargs) - known
        if unknown:
            raise ValueError(f"unknown config option(s): {sorted(unknown)}")
        return cls(**kwargs)
