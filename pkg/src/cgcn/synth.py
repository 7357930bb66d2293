"""Synthetic skeleton actions on the 25-joint template.

Each archetype drives a few joint rotations over time; samples differ in
amplitude, tempo, phase, body scale, placement and sensor noise.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataio import SkeletonSequence, write_manifest, write_sequence
from .graph import load_template

ARCHETYPES = ("walk", "bow", "wave", "stand")

# z up, x lateral (left positive), y forward; metres
_REST = {
    0: (0.0, 0.0, 1.00),
    1: (0.0, 0.0, 1.25),
    20: (0.0, 0.0, 1.45),
    2: (0.0, 0.0, 1.52),
    3: (0.0, 0.0, 1.65),
    4: (0.18, 0.0, 1.42),
    5: (0.20, 0.0, 1.15),
    6: (0.22, 0.0, 0.92),
    7: (0.22, 0.0, 0.85),
    21: (0.22, 0.0, 0.78),
    22: (0.25, 0.03, 0.86),
    8: (-0.18, 0.0, 1.42),
    9: (-0.20, 0.0, 1.15),
    10: (-0.22, 0.0, 0.92),
    11: (-0.22, 0.0, 0.85),
    23: (-0.22, 0.0, 0.78),
    24: (-0.25, 0.03, 0.86),
    12: (0.10, 0.0, 0.95),
    13: (0.10, 0.0, 0.52),
    14: (0.10, 0.0, 0.10),
    15: (0.10, 0.10, 0.05),
    16: (-0.10, 0.0, 0.95),
    17: (-0.10, 0.0, 0.52),
    18: (-0.10, 0.0, 0.10),
    19: (-0.10, 0.10, 0.05),
}

LATERAL = np.array([1.0, 0.0, 0.0])
FORWARD = np.array([0.0, 1.0, 0.0])


def rest_pose() -> np.ndarray:
    return np.array([_REST[i] for i in range(25)], dtype=np.float64)


def _subtree(root: int) -> list[int]:
    children: dict[int, list[int]] = {}
    for s, t in load_template("ntu25").edges:
        children.setdefault(s, []).append(t)
    out, stack = [], [root]
    while stack:
        u = stack.pop()
        out.append(u)
        stack.extend(children.get(u, []))
    return sorted(out)


def _rotate(pose: np.ndarray, joints, pivot: np.ndarray, axis: np.ndarray, angle: np.ndarray) -> None:
    """Rotate ``joints`` about ``axis`` through ``pivot`` in place, one angle per frame (Rodrigues)."""
    k = axis / np.linalg.norm(axis)
    p = pose[:, joints] - pivot[:, None]
    c = np.cos(angle)[:, None, None]
    s = np.sin(angle)[:, None, None]
    cross = np.cross(k, p)
    dot = (p @ k)[..., None]
    pose[:, joints] = pivot[:, None] + p * c + cross * s + k * dot * (1 - c)


def _animate(archetype: str, T: int, rng: np.random.Generator) -> np.ndarray:
    amp = rng.uniform(0.8, 1.2)
    period = rng.uniform(T / 3.0, T / 1.5)
    phase = rng.uniform(0, 2 * np.pi)
    t = np.arange(T)
    wave = np.sin(2 * np.pi * t / period + phase)
    pose = np.repeat(rest_pose()[None] * rng.uniform(0.9, 1.1), T, axis=0)

    if archetype == "walk":
        for knee, hip, sign in ((13, 12, 1.0), (17, 16, -1.0)):
            flex = np.radians(35) * amp * np.maximum(0.0, sign * np.cos(2 * np.pi * t / period + phase))
            _rotate(pose, [j for j in _subtree(knee) if j != knee], pose[:, knee], LATERAL, flex)
            _rotate(pose, _subtree(knee), pose[:, hip], LATERAL, -sign * np.radians(30) * amp * wave)
        for elbow, shoulder, sign in ((5, 4, -1.0), (9, 8, 1.0)):
            _rotate(pose, _subtree(elbow), pose[:, shoulder], LATERAL, -sign * np.radians(12) * amp * wave)
    elif archetype == "bow":
        pitch = np.radians(50) * amp * 0.5 * (1 - np.cos(2 * np.pi * t / period + phase))
        _rotate(pose, sorted(_subtree(20) + [1]), pose[:, 0], LATERAL, pitch)
    elif archetype == "wave":
        raise_angle = np.radians(130) * amp * np.ones(T)
        swing = np.radians(35) * amp * wave
        _rotate(pose, _subtree(10), pose[:, 9], FORWARD, swing)
        _rotate(pose, _subtree(9), pose[:, 8], FORWARD, -raise_angle)
    elif archetype == "stand":
        sway = np.radians(2) * amp * wave
        _rotate(pose, sorted(_subtree(20) + [1]), pose[:, 0], FORWARD, sway)
    else:
        raise ValueError(f"unknown archetype {archetype!r}")

    heading = rng.uniform(-np.pi, np.pi)
    c, s = np.cos(heading), np.sin(heading)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    offset = np.array([rng.normal(0, 0.3), rng.normal(0, 0.3), 0.0])
    pose = pose @ rot.T + offset
    return pose + rng.normal(0.0, 0.004, size=pose.shape)


def synth_sequence(archetype: str, T: int, rng, label: int | None = None, name: str = "") -> SkeletonSequence:
    rng = np.random.default_rng(rng)
    return SkeletonSequence(_animate(archetype, T, rng), "ntu25", label, name=name)


def synth_generate(
    out_dir: str | Path,
    classes: Sequence[str] = ARCHETYPES,
    per_class: int = 20,
    N: int = 25,
    T: int = 32,
    seed: int = 0,
) -> Path:
    """Write ``per_class`` sequences per archetype plus ``manifest.csv`` and ``classes.json``.

    Samples are generated class by class from one seeded generator, so the
    same arguments always produce byte-identical files.
    """
    if per_class < 1:
        raise ValueError("per_class must be at least 1")
    if N != 25:
        raise ValueError("synthetic archetypes are defined on the 25-joint template only")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    rows = []
    for label, archetype in enumerate(classes):
        for k in range(per_class):
            name = f"{archetype}_{k:03d}"
            seq = synth_sequence(archetype, T, rng, label, name)
            write_sequence(seq, out / f"{name}.json")
            rows.append((f"{name}.json", label))
    write_manifest(rows, out / "manifest.csv")
    (out / "classes.json").write_text(json.dumps(list(classes)) + "\n")
    return out
