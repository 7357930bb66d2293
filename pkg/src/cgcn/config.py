"""Run configuration: one YAML mapping, validated field by field."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .centrality import MODES
from .errors import ConfigError

STREAMS = ("J", "B", "W", "A")
RUN_MODES = ("four-stream", "single")
PLANS = ("desk", "paper")
LENGTH_MODES = ("repeat", "random_crop")
# T-conv length per plan: the desk plan runs T=32, which leaves 8 frames after both strides
PLAN_KERNEL = {"desk": 5, "paper": 9}


@dataclass(frozen=True)
class AugmentSettings:
    max_translation: float = 0.0
    max_rotation_deg: float = 0.0
    joint_jitter: float = 0.0

    @property
    def active(self) -> bool:
        return any(v > 0 for v in (self.max_translation, self.max_rotation_deg, self.joint_jitter))


@dataclass(frozen=True)
class RunConfig:
    template: str = "ntu25"
    streams: tuple[str, ...] = STREAMS
    mode: str = "four-stream"
    channels: str = "desk"
    temporal_kernel: int | None = None
    dropout: float = 0.5
    epochs: int = 200
    batch_size: int = 32
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr_steps: tuple[int, ...] = ()
    seed: int = 0
    centrality_mode: str = "sequence_mean"
    target_T: int = 32
    length_mode: str = "repeat"
    max_subjects: int = 1
    num_classes: int | None = None
    stop_top1: float | None = None
    augment: AugmentSettings = field(default_factory=AugmentSettings)

    def __post_init__(self):
        def fail(msg):
            raise ConfigError(msg)

        streams = tuple(self.streams)
        object.__setattr__(self, "streams", streams)
        object.__setattr__(self, "lr_steps", tuple(self.lr_steps))
        if not streams or any(s not in STREAMS for s in streams) or len(set(streams)) != len(streams):
            fail(f"streams must be distinct members of {STREAMS}, got {list(streams)}")
        if self.mode not in RUN_MODES:
            fail(f"mode must be one of {RUN_MODES}")
        if self.channels not in PLANS:
            fail(f"channels must be one of {PLANS}")
        if self.centrality_mode not in MODES:
            fail(f"centrality_mode must be one of {MODES}")
        if self.length_mode not in LENGTH_MODES:
            fail(f"length_mode must be one of {LENGTH_MODES}")
        for name in ("epochs", "batch_size", "target_T", "max_subjects"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                fail(f"{name} must be a positive integer")
        if self.batch_size < 2:
            fail("batch_size must be at least 2 for batch normalization")
        if self.max_subjects > 2:
            fail("max_subjects must be 1 or 2")
        if self.temporal_kernel is not None and (not isinstance(self.temporal_kernel, int) or self.temporal_kernel < 1):
            fail("temporal_kernel must be a positive integer")
        if self.num_classes is not None and (not isinstance(self.num_classes, int) or self.num_classes < 1):
            fail("num_classes must be a positive integer")
        if not isinstance(self.seed, int) or self.seed < 0:
            fail("seed must be a nonnegative integer")
        if not 0.0 <= self.dropout < 1.0:
            fail("dropout must lie in [0, 1)")
        if not self.lr >= 0 or not 0 <= self.momentum < 1 or not self.weight_decay >= 0:
            fail("lr and weight_decay must be nonnegative and momentum in [0, 1)")
        if self.stop_top1 is not None and not 0 < self.stop_top1 <= 1:
            fail("stop_top1 must lie in (0, 1]")
        a = self.augment
        if min(a.max_translation, a.max_rotation_deg, a.joint_jitter) < 0:
            fail("augmentation magnitudes must be nonnegative")

    @property
    def kernel(self) -> int:
        return self.temporal_kernel or PLAN_KERNEL[self.channels]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["streams"] = list(self.streams)
        d["lr_steps"] = list(self.lr_steps)
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


_FLOATS = {"dropout", "lr", "momentum", "weight_decay", "stop_top1"}


def config_from_dict(data: dict | None) -> RunConfig:
    data = dict(data or {})
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    aug = data.pop("augment", None) or {}
    if not isinstance(aug, dict):
        raise ConfigError("augment must be a mapping")
    aug_known = {f.name for f in fields(AugmentSettings)}
    if set(aug) - aug_known:
        raise ConfigError(f"unknown augment keys: {sorted(set(aug) - aug_known)}")
    try:
        aug = AugmentSettings(**{k: float(v) for k, v in aug.items()})
        for k in _FLOATS & set(data):
            if data[k] is not None:
                data[k] = float(data[k])
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None
    if isinstance(data.get("streams"), str):
        data["streams"] = [s for s in data["streams"].replace(",", " ").split()]
    return RunConfig(**data, augment=aug)


def load_config(path: str | Path | None) -> RunConfig:
    """YAML file, or a bare channel-plan name (``desk``, ``paper``) for that plan's defaults."""
    if path is None:
        return RunConfig()
    if str(path) in PLANS and not Path(path).is_file():
        return RunConfig(channels=str(path))
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: {e}") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(data)


def dump_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
