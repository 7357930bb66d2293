"""Spectral graph filtering: exact eigenbasis filters, Chebyshev truncation and the linear rule.

These are reference implementations used to check that the cheap linear
propagation rule is the first-order Chebyshev filter with ``lambda_max = 2``.
The production network never decomposes a Laplacian.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, IsolatedNode
from .graph import WeightedAdjacency

MAX_DECOMPOSITION_NODES = 64


@dataclass(frozen=True)
class SpectralDecomposition:
    U: np.ndarray
    Lambda: np.ndarray

    @property
    def lambda_max(self) -> float:
        return float(self.Lambda[-1])


@dataclass(frozen=True)
class ChebyshevFilter:
    coeffs: np.ndarray
    lambda_max: float = 2.0

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.coeffs, dtype=np.float64))
        if c.ndim != 1 or c.size == 0 or not np.all(np.isfinite(c)):
            raise ValueError("Chebyshev coefficients must be a nonempty finite vector")
        if not self.lambda_max > 0:
            raise ValueError("lambda_max must be positive")
        object.__setattr__(self, "coeffs", c)

    @property
    def order(self) -> int:
        return self.coeffs.size - 1


def _matrix(adj) -> np.ndarray:
    return adj.matrix if isinstance(adj, WeightedAdjacency) else np.asarray(adj, dtype=np.float64)


def normalized_adjacency(adj, allow_isolated: bool = False) -> np.ndarray:
    """``D^-1/2 A D^-1/2``; isolated nodes get zero rows when allowed."""
    a = _matrix(adj)
    deg = a.sum(axis=1)
    if not allow_isolated and np.any(deg == 0):
        raise IsolatedNode(f"node {int(np.flatnonzero(deg == 0)[0])} has no edges")
    inv = np.zeros_like(deg)
    inv[deg > 0] = 1.0 / np.sqrt(deg[deg > 0])
    return inv[:, None] * a * inv[None, :]


def laplacian(adj) -> np.ndarray:
    """Symmetric normalized Laplacian ``I - D^-1/2 A D^-1/2``."""
    a_norm = normalized_adjacency(adj)
    lap = np.eye(a_norm.shape[0]) - a_norm
    return 0.5 * (lap + lap.T)


def decompose(lap: np.ndarray) -> SpectralDecomposition:
    lap = np.asarray(lap, dtype=np.float64)
    if lap.shape[0] > MAX_DECOMPOSITION_NODES:
        raise ValueError(f"dense decomposition limited to {MAX_DECOMPOSITION_NODES} nodes")
    lam, u = np.linalg.eigh(lap)
    return SpectralDecomposition(u, lam)


def spectral_conv_exact(decomp: SpectralDecomposition, theta, x) -> np.ndarray:
    """``U diag(theta) U^T x``."""
    theta = np.asarray(theta, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    n = decomp.U.shape[0]
    if theta.shape != (n,) or x.shape[0] != n:
        raise DimensionMismatch(f"expected length-{n} theta and signal")
    u = decomp.U
    coeffs = u.T @ x
    coeffs = theta * coeffs if x.ndim == 1 else theta[:, None] * coeffs
    return u @ coeffs


def chebyshev_T(m: int, x):
    """Chebyshev polynomial of the first kind by the three-term recurrence.

    A square-array argument is treated as a matrix (matrix products, identity for T_0).
    """
    if m < 0:
        raise ValueError("order must be nonnegative")
    x = np.asarray(x, dtype=np.float64)
    matrix = x.ndim == 2 and x.shape[0] == x.shape[1]
    one = np.eye(x.shape[0]) if matrix else np.ones_like(x)
    if m == 0:
        return one if x.ndim else float(one)
    prev, cur = one, x
    for _ in range(m - 1):
        nxt = 2 * (x @ cur if matrix else x * cur) - prev
        prev, cur = cur, nxt
    return cur if x.ndim else float(cur)


def scaled_laplacian(lap: np.ndarray, lambda_max: float = 2.0) -> np.ndarray:
    return (2.0 / lambda_max) * lap - np.eye(lap.shape[0])


def chebyshev_conv(filt: ChebyshevFilter, lap: np.ndarray, x) -> np.ndarray:
    """``sum_m theta'_m T_m(L_hat) x`` with the recurrence applied to vectors."""
    lap = np.asarray(lap, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if lap.ndim != 2 or lap.shape[0] != lap.shape[1] or x.shape[0] != lap.shape[0]:
        raise DimensionMismatch("Laplacian and signal sizes disagree")
    l_hat = scaled_laplacian(lap, filt.lambda_max)
    c = filt.coeffs
    t_prev = x
    z = c[0] * t_prev
    if filt.order == 0:
        return z
    t_cur = l_hat @ x
    z = z + c[1] * t_cur
    for m in range(2, filt.order + 1):
        t_prev, t_cur = t_cur, 2 * (l_hat @ t_cur) - t_prev
        z = z + c[m] * t_cur
    return z


def chebyshev_response(filt: ChebyshevFilter, eigenvalues) -> np.ndarray:
    """Filter gain ``sum_m theta'_m T_m(lambda_hat)`` at each eigenvalue."""
    lam_hat = 2.0 * np.asarray(eigenvalues, dtype=np.float64) / filt.lambda_max - 1.0
    return sum(c * chebyshev_T(m, lam_hat) for m, c in enumerate(filt.coeffs))


def linear_conv(adj, theta: float, x) -> np.ndarray:
    """First-order rule ``theta (I + D^-1/2 A D^-1/2) x``.

    Isolated nodes are allowed here: their rows of A are zero, so the
    normalized term vanishes and the node keeps ``theta * x``.
    """
    a_norm = normalized_adjacency(adj, allow_isolated=True)
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != a_norm.shape[0]:
        raise DimensionMismatch("adjacency and signal sizes disagree")
    return theta * (x + a_norm @ x)


def renormalization_operator(adj) -> np.ndarray:
    """``I + D^-1/2 A D^-1/2``, the operator before the self-loop renormalization."""
    return np.eye(_matrix(adj).shape[0]) + normalized_adjacency(adj, allow_isolated=True)
