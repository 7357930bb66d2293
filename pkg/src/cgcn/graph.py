"""Skeleton graph topology, bone lengths and propagation matrices."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DirectedCycle,
    DuplicateEdge,
    IndexOutOfRange,
    NegativeWeight,
    NonFiniteCoordinate,
    SchemaViolation,
    SelfLoop,
    UnknownTemplate,
    ZeroLengthBone,
    ZeroLengthBoneWarning,
)

MAX_JOINTS = 512
ZERO_BONE_EPS = 1e-6

BUILTIN_TEMPLATES = ("ntu25", "openpose18")


@dataclass(frozen=True)
class SkeletonGraph:
    joint_count: int
    edges: tuple[tuple[int, int], ...]
    dims: int = 3
    names: tuple[str, ...] | None = None
    template_id: str | None = None

    @property
    def is_forest(self) -> bool:
        """True when the undirected edge set contains no cycle."""
        parent = list(range(self.joint_count))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for s, t in self.edges:
            rs, rt = find(s), find(t)
            if rs == rt:
                return False
            parent[rs] = rt
        return True

    @property
    def is_tree(self) -> bool:
        return self.is_forest and len(self.edges) == self.joint_count - 1

    def neighbors(self) -> list[list[int]]:
        nbrs: list[list[int]] = [[] for _ in range(self.joint_count)]
        for s, t in self.edges:
            nbrs[s].append(t)
            nbrs[t].append(s)
        return nbrs

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.joint_count, dtype=int)
        for s, t in self.edges:
            deg[s] += 1
            deg[t] += 1
        return deg

    def permuted(self, perm: Sequence[int]) -> "SkeletonGraph":
        """Relabel joints so that old joint ``perm[k]`` becomes joint ``k``."""
        inverse = np.argsort(perm)
        edges = [(int(inverse[s]), int(inverse[t])) for s, t in self.edges]
        names = tuple(self.names[p] for p in perm) if self.names else None
        return build_graph(edges, self.joint_count, self.dims, names=names)


@dataclass(frozen=True)
class FramePose:
    coords: np.ndarray
    confidence: np.ndarray | None = None

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        if coords.ndim != 2:
            raise SchemaViolation(f"pose coordinates must be N x dims, got shape {coords.shape}")
        if not np.all(np.isfinite(coords)):
            raise NonFiniteCoordinate("pose contains non-finite coordinates")
        object.__setattr__(self, "coords", coords)
        if self.confidence is not None:
            conf = np.asarray(self.confidence, dtype=np.float64)
            if conf.shape != (coords.shape[0],):
                raise SchemaViolation("confidence must have one entry per joint")
            if not np.all((conf >= 0) & (conf <= 1)):
                raise SchemaViolation("confidence values must lie in [0, 1]")
            object.__setattr__(self, "confidence", conf)


@dataclass(frozen=True)
class WeightedAdjacency:
    matrix: np.ndarray
    symmetric: bool = True

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise SchemaViolation(f"adjacency must be square, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise NonFiniteCoordinate("adjacency contains non-finite entries")
        if np.any(m < 0):
            raise NegativeWeight("adjacency weights must be nonnegative")
        if self.symmetric and not np.array_equal(m, m.T):
            raise SchemaViolation("adjacency flagged symmetric but differs from its transpose")
        object.__setattr__(self, "matrix", m)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class PropagationMatrix:
    matrix: np.ndarray
    kind: str = "adjacency_normalized"

    KINDS = ("adjacency_normalized", "centrality_augmented")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown propagation kind {self.kind!r}")
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or not np.all(np.isfinite(m)):
            raise SchemaViolation("propagation matrix must be a finite square array")
        object.__setattr__(self, "matrix", m)


def _check_acyclic(joint_count: int, edges: Sequence[tuple[int, int]]) -> None:
    # Kahn's algorithm on the directed edge set
    indeg = [0] * joint_count
    out: list[list[int]] = [[] for _ in range(joint_count)]
    for s, t in edges:
        out[s].append(t)
        indeg[t] += 1
    stack = [i for i in range(joint_count) if indeg[i] == 0]
    seen = 0
    while stack:
        u = stack.pop()
        seen += 1
        for v in out[u]:
            indeg[v] -= 1
            if indeg[v] == 0:
                stack.append(v)
    if seen != joint_count:
        raise DirectedCycle("skeleton edges contain a directed cycle")


def build_graph(
    edge_list: Iterable[Sequence[int]],
    joint_count: int,
    dims: int = 3,
    names: Sequence[str] | None = None,
    template_id: str | None = None,
) -> SkeletonGraph:
    """Validate an edge list and return an immutable :class:`SkeletonGraph`.

    Raises IndexOutOfRange, SelfLoop, DuplicateEdge or DirectedCycle.
    Undirected duplicates (``(a, b)`` and ``(b, a)``) form a directed
    2-cycle and are reported as such.
    """
    if int(joint_count) < 1:
        raise IndexOutOfRange("joint_count must be at least 1")
    if joint_count > MAX_JOINTS:
        raise IndexOutOfRange(f"graphs above {MAX_JOINTS} joints are not supported")
    if dims not in (2, 3):
        raise SchemaViolation(f"dims must be 2 or 3, got {dims}")
    edges: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()
    for pair in edge_list:
        if len(pair) != 2:
            raise SchemaViolation(f"edge {pair!r} is not a pair")
        s, t = int(pair[0]), int(pair[1])
        if not (0 <= s < joint_count and 0 <= t < joint_count):
            raise IndexOutOfRange(f"edge ({s}, {t}) outside [0, {joint_count})")
        if s == t:
            raise SelfLoop(f"self-loop at joint {s}")
        if (s, t) in seen:
            raise DuplicateEdge(f"edge ({s}, {t}) listed twice")
        seen.add((s, t))
        edges.append((s, t))
    _check_acyclic(joint_count, edges)
    if names is not None:
        names = tuple(str(n) for n in names)
        if len(names) != joint_count:
            raise SchemaViolation("names must have one entry per joint")
    return SkeletonGraph(int(joint_count), tuple(edges), int(dims), names, template_id)


def graph_from_dict(data: dict, template_id: str | None = None) -> SkeletonGraph:
    allowed = {"joint_count", "dims", "edges", "names"}
    if not isinstance(data, dict) or not {"joint_count", "edges"} <= set(data):
        raise SchemaViolation("template needs 'joint_count' and 'edges'")
    extra = set(data) - allowed
    if extra:
        raise SchemaViolation(f"unknown template keys: {sorted(extra)}")
    return build_graph(
        data["edges"], data["joint_count"], data.get("dims", 3), data.get("names"), template_id
    )


def graph_to_dict(graph: SkeletonGraph) -> dict:
    out = {
        "joint_count": graph.joint_count,
        "dims": graph.dims,
        "edges": [list(e) for e in graph.edges],
    }
    if graph.names:
        out["names"] = list(graph.names)
    return out


def load_template(name_or_path: str | Path) -> SkeletonGraph:
    """Load a built-in template by id (``ntu25``, ``openpose18``) or a JSON file."""
    key = str(name_or_path)
    if key in BUILTIN_TEMPLATES:
        text = resources.files("cgcn.templates").joinpath(f"{key}.json").read_text()
        return graph_from_dict(json.loads(text), template_id=key)
    path = Path(key)
    if not path.is_file():
        raise UnknownTemplate(f"no built-in template or file named {key!r}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"{path}: {exc}") from exc
    return graph_from_dict(data, template_id=path.stem)


def bone_length(pose: FramePose, edge: Sequence[int]) -> float:
    coords = pose.coords if isinstance(pose, FramePose) else np.asarray(pose, dtype=np.float64)
    s, t = int(edge[0]), int(edge[1])
    n = coords.shape[0]
    if not (0 <= s < n and 0 <= t < n):
        raise IndexOutOfRange(f"edge ({s}, {t}) outside [0, {n})")
    a, b = coords[s], coords[t]
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise NonFiniteCoordinate(f"non-finite coordinate on edge ({s}, {t})")
    return float(np.sqrt(np.sum((b - a) ** 2)))


def bone_lengths(graph: SkeletonGraph, poses: Sequence[FramePose] | np.ndarray) -> np.ndarray:
    """Per-frame bone lengths, shape ``(frames, edges)``."""
    coords = np.asarray(
        [p.coords for p in poses] if not isinstance(poses, np.ndarray) else poses,
        dtype=np.float64,
    )
    if coords.ndim == 2:
        coords = coords[None]
    if not np.all(np.isfinite(coords)):
        raise NonFiniteCoordinate("pose contains non-finite coordinates")
    if not graph.edges:
        return np.zeros((coords.shape[0], 0))
    src = np.array([s for s, _ in graph.edges])
    tgt = np.array([t for _, t in graph.edges])
    return np.sqrt(np.sum((coords[:, tgt] - coords[:, src]) ** 2, axis=-1))


def adjacency_from_lengths(
    graph: SkeletonGraph, lengths: Sequence[float] | None, strict: bool = False
) -> WeightedAdjacency:
    """Symmetric adjacency with one weight per edge (unit weights when ``lengths`` is None)."""
    n = graph.joint_count
    m = np.zeros((n, n))
    for k, (s, t) in enumerate(graph.edges):
        w = 1.0 if lengths is None else float(lengths[k])
        if lengths is not None and w == 0.0:
            if strict:
                raise ZeroLengthBone(f"bone ({s}, {t}) has zero length")
            warnings.warn(
                f"bone ({s}, {t}) has zero length; using {ZERO_BONE_EPS}",
                ZeroLengthBoneWarning,
                stacklevel=2,
            )
            w = ZERO_BONE_EPS
        m[s, t] = m[t, s] = w
    return WeightedAdjacency(m, symmetric=True)


def weighted_adjacency(
    graph: SkeletonGraph,
    pose: FramePose | None = None,
    weight_mode: str = "unit",
    strict: bool = False,
) -> WeightedAdjacency:
    """Symmetric adjacency of ``graph``.

    ``weight_mode="unit"`` places 1 on each bone; ``"bone_length"`` places the
    Euclidean bone length of ``pose``. Collapsed bones get ``ZERO_BONE_EPS``
    with a warning, or raise ZeroLengthBone when ``strict``.
    """
    if weight_mode == "unit":
        return adjacency_from_lengths(graph, None)
    if weight_mode != "bone_length":
        raise ValueError(f"unknown weight_mode {weight_mode!r}")
    if pose is None:
        raise ValueError("bone_length mode needs a pose")
    lengths = [bone_length(pose, e) for e in graph.edges]
    return adjacency_from_lengths(graph, lengths, strict=strict)


def normalized_propagation(adj: WeightedAdjacency | np.ndarray) -> PropagationMatrix:
    """Renormalized propagation matrix ``D^-1/2 (A + I) D^-1/2`` with D the degree of A + I."""
    a = adj.matrix if isinstance(adj, WeightedAdjacency) else np.asarray(adj, dtype=np.float64)
    a_hat = a + np.eye(a.shape[0])
    d_inv_sqrt = 1.0 / np.sqrt(a_hat.sum(axis=1))
    m = d_inv_sqrt[:, None] * a_hat * d_inv_sqrt[None, :]
    # exact symmetry regardless of rounding order
    m = 0.5 * (m + m.T)
    return PropagationMatrix(m, "adjacency_normalized")
