"""Experiment configuration and the published dataset presets."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .errors import ConfigError


@dataclass
class TrainConfig:
    """Every knob of model construction and optimization, JSON round-trippable."""

    # optimization
    base_lr: float = 0.025
    lr_decay_rate: float = 0.1
    milestones: list = field(default_factory=lambda: [75, 85])
    warmup_epochs: int = 5
    weight_decay: float = 1e-4
    momentum: float = 0.9
    nesterov: bool = True
    epochs: int = 90
    batch_size_train: int = 64
    batch_size_eval: int = 512
    repeat_augmentation: int = 1
    # data
    window_T: int = 64
    # model
    depth_l: int = 10
    channels_C: int = 216
    mamba_D: int = 20
    ssm_W: int = 16
    partitions_enabled: bool = True
    with_imamba: bool = True
    temporal_shift_radius: int = 1
    conv_kernel: int = 4
    norm_placement: str = "post"
    scan_chunk: int = 16  # 0 or 1 falls back to the sequential scan
    # run
    seed: int = 1
    precision: str = "float32"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.base_lr <= 0:
            raise ConfigError(f"base_lr must be positive, got {self.base_lr}")
        if self.warmup_epochs < 0:
            raise ConfigError("warmup_epochs must be >= 0")
        ms = list(self.milestones)
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise ConfigError(f"milestones must be strictly increasing, got {ms}")
        if any(m >= self.epochs or m < 0 for m in ms):
            raise ConfigError(f"milestones must lie in [0, epochs), got {ms}")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.channels_C % 4 != 0:
            raise ConfigError(f"channels_C must be divisible by 4, got {self.channels_C}")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"precision must be float32 or float64, got {self.precision!r}")
        if self.repeat_augmentation < 1:
            raise ConfigError("repeat_augmentation must be >= 1")

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(dataclasses.asdict(self), indent=indent, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        raw = json.loads(text)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config fields: {unknown}")
        return cls(**raw)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        with open(path) as f:
            return cls.from_json(f.read())


def preset_ntu60() -> TrainConfig:
    return TrainConfig()  # the defaults are the 25-joint / window-64 recipe


def preset_ntu120() -> TrainConfig:
    return TrainConfig()


def preset_ucla() -> TrainConfig:
    return TrainConfig(
        weight_decay=4e-4, epochs=400, milestones=[110],
        batch_size_train=16, batch_size_eval=64, window_T=52,
        mamba_D=25, partitions_enabled=False, repeat_augmentation=2,
    )


def preset_toy() -> TrainConfig:
    """Desk-scale config for the synthetic overfit experiments."""
    return TrainConfig(
        base_lr=0.05, milestones=[80, 110], warmup_epochs=5,
        weight_decay=1e-4, epochs=120, batch_size_train=16, batch_size_eval=64,
        window_T=16, depth_l=2, channels_C=32, mamba_D=4, ssm_W=8,
        partitions_enabled=False, scan_chunk=4,
    )


PRESETS = {
    "ntu60": preset_ntu60,
    "ntu120": preset_ntu120,
    "ucla": preset_ucla,
    "toy": preset_toy,
}
