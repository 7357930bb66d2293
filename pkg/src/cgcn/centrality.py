"""Joint (closeness), bone (edge betweenness) and subgraph (triplet) centralities.

All three matrices are symmetric N x N arrays. They are max-normalized to a
peak of 1 before being added to the propagation matrix, so the augmented
operator is ``J + B + W + A_tilde``.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DisconnectedGraph, NegativeWeight, SchemaViolation
from .graph import (
    FramePose,
    PropagationMatrix,
    SkeletonGraph,
    WeightedAdjacency,
    adjacency_from_lengths,
    bone_lengths,
    normalized_propagation,
)

TIE_RTOL = 1e-9
MODES = ("sequence_mean", "per_frame")
MATRIX_STREAMS = ("J", "B", "W")


@dataclass(frozen=True)
class ShortestPathTable:
    dist: np.ndarray
    sigma: np.ndarray
    # per-source predecessor lists and settle order, kept for dependency accumulation
    preds: tuple = field(default=(), repr=False, compare=False)
    order: tuple = field(default=(), repr=False, compare=False)


def _ties(a: float, b: float) -> bool:
    return abs(a - b) <= TIE_RTOL * max(abs(a), abs(b))


def _neighbor_lists(m: np.ndarray) -> list[list[tuple[int, float]]]:
    n = m.shape[0]
    return [[(int(j), float(m[i, j])) for j in np.flatnonzero(m[i])] for i in range(n)]


def _single_source(source: int, nbrs, n: int):
    dist = [math.inf] * n
    sigma = [0.0] * n
    preds: list[list[int]] = [[] for _ in range(n)]
    done = [False] * n
    order: list[int] = []
    dist[source] = 0.0
    sigma[source] = 1.0
    heap = [(0.0, source)]
    while heap:
        d, v = heapq.heappop(heap)
        if done[v]:
            continue
        done[v] = True
        order.append(v)
        for w, weight in nbrs[v]:
            if done[w]:
                continue
            nd = d + weight
            if dist[w] == math.inf or (nd < dist[w] and not _ties(nd, dist[w])):
                dist[w] = nd
                sigma[w] = sigma[v]
                preds[w] = [v]
                heapq.heappush(heap, (nd, w))
            elif _ties(nd, dist[w]):
                sigma[w] += sigma[v]
                preds[w].append(v)
    return dist, sigma, preds, order


def shortest_paths(adj: WeightedAdjacency | np.ndarray) -> ShortestPathTable:
    """All-pairs shortest distances and path counts, one Dijkstra run per source.

    Equal-length alternatives (within a relative tolerance of 1e-9) are
    counted as distinct shortest paths. Disconnected pairs get ``inf``
    distance and zero count.
    """
    m = adj.matrix if isinstance(adj, WeightedAdjacency) else np.asarray(adj, dtype=np.float64)
    if np.any(m < 0):
        raise NegativeWeight("shortest paths need nonnegative weights")
    n = m.shape[0]
    nbrs = _neighbor_lists(m)
    dist = np.empty((n, n))
    sigma = np.empty((n, n))
    preds, orders = [], []
    for s in range(n):
        d, sg, p, o = _single_source(s, nbrs, n)
        dist[s] = d
        sigma[s] = sg
        preds.append(tuple(tuple(x) for x in p))
        orders.append(tuple(o))
    return ShortestPathTable(dist, sigma, tuple(preds), tuple(orders))


def joint_closeness(table: ShortestPathTable) -> np.ndarray:
    """Closeness ``(N - 1) / sum_j d(i, j)`` for every joint."""
    dist = table.dist
    n = dist.shape[0]
    if not np.all(np.isfinite(dist)):
        raise DisconnectedGraph("closeness needs a connected skeleton")
    if n == 1:
        return np.zeros(1)
    totals = dist.sum(axis=1)
    return (n - 1) / totals


def max_normalize(m: np.ndarray) -> np.ndarray:
    peak = m.max() if m.size else 0.0
    return m / peak if peak > 0 else m.copy()


def closeness_matrix(closeness: np.ndarray, normalize: bool = True) -> np.ndarray:
    c = np.asarray(closeness, dtype=np.float64)
    j = np.outer(c, c)
    return max_normalize(j) if normalize else j


def edge_betweenness(
    adj: WeightedAdjacency | np.ndarray,
    table: ShortestPathTable | None = None,
    normalize: bool = True,
) -> np.ndarray:
    """Edge betweenness over unordered pairs, excluding each edge's own endpoint pair.

    Brandes dependency accumulation: every source contributes
    ``sigma_sv / sigma_sw * (1 + delta_w)`` to edge (v, w) for each
    predecessor v of w. Summing over all sources counts each unordered pair
    twice, hence the final halving.
    """
    m = adj.matrix if isinstance(adj, WeightedAdjacency) else np.asarray(adj, dtype=np.float64)
    if np.any(m < 0):
        raise NegativeWeight("edge betweenness needs nonnegative weights")
    if table is None or not table.preds:
        table = shortest_paths(m)
    n = m.shape[0]
    eb = np.zeros((n, n))
    sigma = table.sigma
    for s in range(n):
        delta = np.zeros(n)
        preds = table.preds[s]
        for w in reversed(table.order[s]):
            for v in preds[w]:
                c = sigma[s, v] / sigma[s, w] * (1.0 + delta[w])
                eb[v, w] += c
                eb[w, v] += c
                delta[v] += c
    eb *= 0.5
    # drop the pair {i, j} itself: its direct edge carries 1 / sigma_ij of its paths
    i, j = np.nonzero(m)
    direct = np.array([_ties(table.dist[a, b], m[a, b]) for a, b in zip(i, j)], dtype=bool)
    eb[i[direct], j[direct]] -= 1.0 / sigma[i[direct], j[direct]]
    eb[np.abs(eb) < 1e-12] = 0.0
    eb[m == 0] = 0.0
    return max_normalize(eb) if normalize else eb


def connected_triplets(adj: WeightedAdjacency | np.ndarray) -> list[tuple[int, int, int]]:
    """Sorted node triples inducing a connected subgraph (2-paths and triangles)."""
    m = adj.matrix if isinstance(adj, WeightedAdjacency) else np.asarray(adj)
    connected = m > 0
    n = m.shape[0]
    found = set()
    for c in range(n):
        nb = np.flatnonzero(connected[c])
        for x in range(len(nb)):
            for y in range(x + 1, len(nb)):
                a, b = int(nb[x]), int(nb[y])
                found.add(tuple(sorted((a, b, c))))
    return sorted(found)


def triplet_comembership(adj: WeightedAdjacency | np.ndarray, normalize: bool = True) -> np.ndarray:
    """Counts of connected 3-node subgraphs shared by each joint pair.

    Off-diagonal entries count triplets containing both joints; the diagonal
    counts triplets containing the joint. Edge weights are ignored.
    """
    m = adj.matrix if isinstance(adj, WeightedAdjacency) else np.asarray(adj)
    n = m.shape[0]
    w = np.zeros((n, n))
    for tri in connected_triplets(m):
        idx = np.array(tri)
        w[np.ix_(idx, idx)] += 1.0
    return max_normalize(w) if normalize else w


@dataclass(frozen=True)
class CentralitySet:
    J: np.ndarray
    B: np.ndarray
    W: np.ndarray
    A_tilde: PropagationMatrix
    mode: str = "sequence_mean"
    frame_index: int | None = None

    @property
    def c_hat(self) -> np.ndarray:
        return self.J + self.B + self.W + self.A_tilde.matrix

    def matrix(self, name: str) -> np.ndarray:
        if name == "A":
            return self.A_tilde.matrix
        if name not in MATRIX_STREAMS:
            raise KeyError(f"unknown centrality matrix {name!r}")
        return getattr(self, name)

    def stream_propagation(self, stream: str) -> PropagationMatrix:
        """``A_tilde`` plus the stream's centrality matrix (nothing extra for stream ``A``)."""
        m = self.A_tilde.matrix if stream == "A" else self.A_tilde.matrix + self.matrix(stream)
        kind = "adjacency_normalized" if stream == "A" else "centrality_augmented"
        return PropagationMatrix(m, kind)

    def summed_propagation(self, streams: Sequence[str] = ("J", "B", "W", "A")) -> PropagationMatrix:
        """``A_tilde`` plus every selected centrality matrix."""
        extra = [s for s in MATRIX_STREAMS if s in streams]
        m = np.zeros_like(self.A_tilde.matrix)
        for s in extra:
            m = m + self.matrix(s)
        m = m + self.A_tilde.matrix
        return PropagationMatrix(m, "centrality_augmented" if extra else "adjacency_normalized")

    def to_dict(self) -> dict:
        out = {
            "J": self.J.tolist(),
            "B": self.B.tolist(),
            "W": self.W.tolist(),
            "A_tilde": self.A_tilde.matrix.tolist(),
            "mode": self.mode,
        }
        if self.frame_index is not None:
            out["frame_index"] = self.frame_index
        return out


def centrality_from_lengths(
    graph: SkeletonGraph, lengths: np.ndarray, mode: str = "sequence_mean", frame_index=None
) -> CentralitySet:
    weighted = adjacency_from_lengths(graph, lengths)
    unit = adjacency_from_lengths(graph, None)
    table = shortest_paths(weighted)
    j = closeness_matrix(joint_closeness(table))
    b = edge_betweenness(weighted, table)
    w = triplet_comembership(unit)
    return CentralitySet(j, b, w, normalized_propagation(unit), mode, frame_index)


def _as_coords(poses) -> np.ndarray:
    if isinstance(poses, np.ndarray):
        coords = np.asarray(poses, dtype=np.float64)
        return coords[None] if coords.ndim == 2 else coords
    return np.asarray([p.coords if isinstance(p, FramePose) else p for p in poses], dtype=np.float64)


def assemble_centrality_set(
    graph: SkeletonGraph,
    poses: Sequence[FramePose] | np.ndarray,
    mode: str = "sequence_mean",
) -> CentralitySet | list[CentralitySet]:
    """Centrality matrices for a pose sequence.

    ``sequence_mean`` averages bone lengths over frames and returns one set;
    ``per_frame`` returns one set per frame.
    """
    if mode not in MODES:
        raise ValueError(f"unknown centrality mode {mode!r}")
    coords = _as_coords(poses)
    if coords.shape[0] == 0:
        raise SchemaViolation("centrality needs at least one pose")
    lengths = bone_lengths(graph, coords)
    if mode == "sequence_mean":
        return centrality_from_lengths(graph, lengths.mean(axis=0), mode)
    return [centrality_from_lengths(graph, row, mode, t) for t, row in enumerate(lengths)]


def average_sets(sets: Sequence[CentralitySet]) -> CentralitySet:
    """Entrywise mean of several sets, renormalized to peak 1."""
    j = max_normalize(np.mean([s.J for s in sets], axis=0))
    b = max_normalize(np.mean([s.B for s in sets], axis=0))
    w = max_normalize(np.mean([s.W for s in sets], axis=0))
    return CentralitySet(j, b, w, sets[0].A_tilde, sets[0].mode)


def dataset_centrality(graph: SkeletonGraph, sequences, mode: str = "sequence_mean") -> CentralitySet:
    """One centrality set for a whole collection of pose arrays (each T x N x dims)."""
    frames = np.concatenate([_as_coords(s) for s in sequences], axis=0)
    if mode == "sequence_mean":
        return assemble_centrality_set(graph, frames, "sequence_mean")
    return average_sets(assemble_centrality_set(graph, frames, "per_frame"))


def highlight(cset: CentralitySet, graph: SkeletonGraph, k: int) -> dict:
    """Top-k joints (J diagonal), bones (B on edges) and joint pairs (W off-diagonal)."""

    def top(items):
        # stable sort keeps lower indices first on ties
        return sorted(items, key=lambda it: -it["value"])[:k]

    n = graph.joint_count
    joints = [{"joint": i, "value": float(cset.J[i, i])} for i in range(n)]
    bones = [{"bone": [s, t], "value": float(cset.B[s, t])} for s, t in graph.edges]
    pairs = [
        {"pair": [i, j], "value": float(cset.W[i, j])} for i in range(n) for j in range(i + 1, n)
    ]
    return {"J": top(joints), "B": top(bones), "W": top(pairs)}
