"""Skeleton sequence files, Diff features, frame-length normalization and augmentation."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    EmptyDataset,
    NonFiniteCoordinate,
    SchemaViolation,
    UnknownTemplate,
)
from .graph import BUILTIN_TEMPLATES, SkeletonGraph, load_template

SEQUENCE_KEYS = {"template", "label", "frames", "confidence", "frames_second", "name"}


@dataclass(frozen=True)
class SkeletonSequence:
    frames: np.ndarray
    template: str = "ntu25"
    label: int | None = None
    confidence: np.ndarray | None = None
    second: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 3 or frames.shape[0] < 1 or frames.shape[2] not in (2, 3):
            raise SchemaViolation(f"frames must be T x N x (2|3) with T >= 1, got {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise NonFiniteCoordinate("sequence contains non-finite coordinates")
        object.__setattr__(self, "frames", frames)
        if self.second is not None:
            second = np.asarray(self.second, dtype=np.float64)
            if second.shape != frames.shape:
                raise SchemaViolation("second subject must match the first subject's shape")
            if not np.all(np.isfinite(second)):
                raise NonFiniteCoordinate("second subject contains non-finite coordinates")
            object.__setattr__(self, "second", second)
        if self.confidence is not None:
            conf = np.asarray(self.confidence, dtype=np.float64)
            if conf.shape != frames.shape[:2]:
                raise SchemaViolation("confidence must be T x N")
            if not np.all((conf >= 0) & (conf <= 1)):
                raise SchemaViolation("confidence values must lie in [0, 1]")
            object.__setattr__(self, "confidence", conf)
        if self.label is not None and (not isinstance(self.label, (int, np.integer)) or self.label < 0):
            raise SchemaViolation(f"label must be a nonnegative integer, got {self.label!r}")

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def N(self) -> int:
        return self.frames.shape[1]

    @property
    def dims(self) -> int:
        return self.frames.shape[2]

    @property
    def subject_count(self) -> int:
        return 1 if self.second is None else 2

    def take(self, indices) -> "SkeletonSequence":
        idx = np.asarray(indices, dtype=int)
        return replace(
            self,
            frames=self.frames[idx],
            confidence=None if self.confidence is None else self.confidence[idx],
            second=None if self.second is None else self.second[idx],
        )


@dataclass(frozen=True)
class DiffFeatures:
    """Channels are ``[positions, velocities, accelerations]``, each ``dims`` wide."""

    tensor: np.ndarray
    dims: int = field(default=3)

    @property
    def positions(self) -> np.ndarray:
        return self.tensor[: self.dims]

    @property
    def velocities(self) -> np.ndarray:
        return self.tensor[self.dims : 2 * self.dims]

    @property
    def accelerations(self) -> np.ndarray:
        return self.tensor[2 * self.dims :]


def resolve_template(template: str, base_dir: Path | None) -> SkeletonGraph:
    if template in BUILTIN_TEMPLATES:
        return load_template(template)
    if base_dir is not None:
        candidate = base_dir / f"{template}.json"
        if candidate.is_file():
            return load_template(candidate)
    raise UnknownTemplate(f"unknown skeleton template {template!r}")


def sequence_from_dict(data: dict, base_dir: Path | None = None, name: str = "") -> SkeletonSequence:
    if not isinstance(data, dict):
        raise SchemaViolation("sequence file must hold a JSON object")
    extra = set(data) - SEQUENCE_KEYS
    if extra:
        raise SchemaViolation(f"unknown sequence keys: {sorted(extra)}")
    if "template" not in data or "frames" not in data:
        raise SchemaViolation("sequence needs 'template' and 'frames'")
    try:
        frames = np.array(data["frames"], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise SchemaViolation(f"frames are not a rectangular numeric array: {exc}") from exc
    if frames.ndim != 3:
        raise SchemaViolation("frames must be nested [T][N][dims]")
    graph = resolve_template(str(data["template"]), base_dir)
    if frames.shape[1] != graph.joint_count or frames.shape[2] not in (2, 3):
        raise UnknownTemplate(
            f"frames have {frames.shape[1]} joints, template {data['template']!r} has {graph.joint_count}"
        )
    label = data.get("label")
    if label is not None and (isinstance(label, bool) or not isinstance(label, int)):
        raise SchemaViolation("label must be an integer")
    return SkeletonSequence(
        frames=frames,
        template=str(data["template"]),
        label=label,
        confidence=data.get("confidence"),
        second=data.get("frames_second"),
        name=str(data.get("name", name)),
    )


def parse_sequence(path: str | Path) -> SkeletonSequence:
    """Read and validate one sequence JSON file.

    Custom template ids resolve to ``<id>.json`` next to the file.
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"{path}: {exc}") from exc
    return sequence_from_dict(data, path.parent, name=path.stem)


def sequence_to_dict(seq: SkeletonSequence) -> dict:
    out: dict = {"template": seq.template}
    if seq.name:
        out["name"] = seq.name
    if seq.label is not None:
        out["label"] = int(seq.label)
    out["frames"] = seq.frames.tolist()
    if seq.confidence is not None:
        out["confidence"] = seq.confidence.tolist()
    if seq.second is not None:
        out["frames_second"] = seq.second.tolist()
    return out


def write_sequence(seq: SkeletonSequence, path: str | Path) -> None:
    # json writes shortest round-trip float reprs, so parsing restores exact values
    Path(path).write_text(json.dumps(sequence_to_dict(seq), separators=(",", ":")) + "\n")


def read_manifest(path: str | Path) -> list[tuple[Path, int]]:
    path = Path(path)
    rows = []
    with path.open(newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != ["path", "label"]:
            raise SchemaViolation(f"{path}: manifest header must be 'path,label'")
        for row in reader:
            rows.append((path.parent / row["path"], int(row["label"])))
    if not rows:
        raise EmptyDataset(f"{path}: manifest lists no sequences")
    return rows


def write_manifest(rows: Sequence[tuple[str, int]], path: str | Path) -> None:
    with Path(path).open("w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["path", "label"])
        for p, label in rows:
            writer.writerow([p, int(label)])


def load_dataset(manifest: str | Path) -> list[SkeletonSequence]:
    """Parse every sequence in a manifest; the manifest label wins over the file's."""
    manifest = Path(manifest)
    if manifest.is_dir():
        manifest = manifest / "manifest.csv"
    return [replace(parse_sequence(p), label=label) for p, label in read_manifest(manifest)]


def _differences(x: np.ndarray) -> np.ndarray:
    d = np.zeros_like(x)
    d[1:] = x[1:] - x[:-1]
    return d


def diff_features(seq: SkeletonSequence | np.ndarray) -> DiffFeatures:
    """Positions, velocities and accelerations stacked on the channel axis, shape ``(3*dims, T, N)``."""
    frames = seq.frames if isinstance(seq, SkeletonSequence) else np.asarray(seq, dtype=np.float64)
    vel = _differences(frames)
    acc = _differences(vel)
    stacked = np.concatenate([frames, vel, acc], axis=2)  # T, N, 3*dims
    return DiffFeatures(np.ascontiguousarray(stacked.transpose(2, 0, 1)), frames.shape[2])


def sequence_features(seq: SkeletonSequence, max_subjects: int = 1) -> np.ndarray:
    """Diff features of each subject stacked on channels; absent subjects are zero."""
    blocks = [diff_features(seq.frames).tensor]
    if max_subjects >= 2:
        if seq.second is not None:
            blocks.append(diff_features(seq.second).tensor)
        else:
            blocks.append(np.zeros_like(blocks[0]))
    return np.concatenate(blocks, axis=0)


def length_indices(T: int, target_T: int, mode: str = "repeat", rng=None) -> np.ndarray:
    """Frame indices realizing ``normalize_length``."""
    if T < 1 or target_T < 1:
        raise ValueError("sequence lengths must be positive")
    if mode not in ("repeat", "random_crop"):
        raise ValueError(f"unknown length mode {mode!r}")
    if mode == "random_crop" and T > target_T:
        rng = np.random.default_rng(rng)
        return np.sort(rng.choice(T, size=target_T, replace=False))
    return np.arange(target_T) % T


def normalize_length(seq: SkeletonSequence, target_T: int, mode: str = "repeat", rng=None) -> SkeletonSequence:
    """Tile frames cyclically up to ``target_T``, or pick a sorted random subset when cropping.

    ``random_crop`` falls back to repetition when the sequence is not longer
    than the target. A sequence that is longer than the target in ``repeat``
    mode is truncated to its first ``target_T`` frames.
    """
    if seq.T == target_T:
        return seq
    return seq.take(length_indices(seq.T, target_T, mode, rng))


def rotation_matrix(angle_deg: float, dims: int = 3, axis: int = 2) -> np.ndarray:
    a = math.radians(angle_deg)
    c, s = math.cos(a), math.sin(a)
    if dims == 2:
        return np.array([[c, -s], [s, c]])
    r = np.eye(3)
    i, j = [k for k in range(3) if k != axis]
    r[i, i], r[i, j], r[j, i], r[j, j] = c, -s, s, c
    return r


@dataclass(frozen=True)
class AugmentConfig:
    max_translation: float = 0.0
    max_rotation_deg: float = 0.0
    vertical_axis: int = 2
    joint_jitter: float = 0.0


def augment(seq: SkeletonSequence, rng, config: AugmentConfig | None = None) -> SkeletonSequence:
    """One random rigid motion (rotation about the vertical axis, then translation) for the whole sequence.

    ``joint_jitter`` adds independent Gaussian noise per joint and frame; it
    is off by default.
    """
    config = config or AugmentConfig()
    rng = np.random.default_rng(rng)
    dims = seq.dims
    angle = rng.uniform(-config.max_rotation_deg, config.max_rotation_deg)
    shift = rng.uniform(-config.max_translation, config.max_translation, size=dims)
    if config.max_rotation_deg == 0 and config.max_translation == 0 and config.joint_jitter == 0:
        return seq
    rot = rotation_matrix(angle, dims, config.vertical_axis)

    def move(x):
        out = x @ rot.T + shift
        if config.joint_jitter > 0:
            out = out + rng.normal(0.0, config.joint_jitter, size=x.shape)
        return out

    second = None if seq.second is None else move(seq.second)
    return replace(seq, frames=move(seq.frames), second=second)
