"""Manifold-preservation structures over a sample matrix.

Builds k-nearest-neighbor sets, locally-linear barycentric weights and the
graph Laplacians used to regularize sparse codes.  The locally-linear variant
encodes each sample as an affine combination of its neighbors,

    F(A) = sum_i || a_i - sum_{j in knn(i)} w_ij a_j ||^2
         = tr(A L A^T),   L = (I - V^T)(I - V) = I - V - V^T + V^T V,

with V[i, j] = w_ij on row i's neighbor set.  Two alternative constructions
(Gaussian weights on a mutualized knn support, and Gaussian weights
thresholded by a distance quantile) give ordinary L = D - W Laplacians.  All
Laplacians are rescaled so that trace(L) equals a caller-chosen target, which
keeps the manifold penalty comparable across constructions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.spatial.distance import cdist, pdist, squareform

from .errors import InvalidConfigurationError

Array = np.ndarray

# Tikhonov factor for the local Gram solves; standard LLE conditioning.
GRAM_EPS = 1e-3


@dataclass
class NeighborGraph:
    """A weighted neighborhood structure and its normalized Laplacian.

    indices holds knn(i) per row for neighbor-based builders (None for the
    threshold builder).  V is the row-stochastic barycentric weight matrix
    for the locally-linear builder, and the symmetric Gaussian adjacency for
    the other two.  L is trace-normalized by omega = trace_target / tr(L_raw)
    unless the raw Laplacian is identically zero, in which case empty is set
    and L is returned un-normalized.
    """

    k: int
    indices: Array | None
    V: sparse.csr_array
    L: sparse.csr_array
    omega: float
    empty: bool = False


@dataclass
class GaussianGraphParams:
    """Kernel width sigma, distance percentile zeta, neighbor count k."""

    sigma: float = 1.0
    zeta: float = 0.5
    k: int = 8

    def __post_init__(self):
        if self.sigma <= 0:
            raise InvalidConfigurationError("sigma must be positive")
        if not 0 < self.zeta < 1:
            raise InvalidConfigurationError("zeta must lie in (0, 1)")
        if self.k < 1:
            raise InvalidConfigurationError("k must be at least 1")


def knn_indices(X: Array, k: int) -> Array:
    """Indices of the k nearest columns (Euclidean, self excluded) per column.

    Ties are broken toward the lower index.  Returns an (N, k) int array with
    row i sorted by increasing distance to column i.
    """
    N = X.shape[1]
    if k >= N:
        raise InvalidConfigurationError(
            f"k={k} neighbors requested but only {N - 1} other samples exist")
    # cdist evaluates sum((x-y)^2) directly, so exact ties stay exact
    d2 = cdist(X.T, X.T, "sqeuclidean")
    np.fill_diagonal(d2, np.inf)
    order = np.argsort(d2, axis=1, kind="stable")
    return order[:, :k]


def barycentric_weights(target: Array, neighbors: Array,
                        eps: float = GRAM_EPS) -> Array:
    """Affine weights reconstructing target from neighbor columns.

    Solves the local Gram system G w = 1 with G[j, m] = (x - x_j) . (x - x_m),
    Tikhonov-regularized by eps * tr(G) / k, then normalizes w to sum to 1.
    Degenerate neighborhoods (all neighbors equal to the target) fall back to
    uniform weights.
    """
    k = neighbors.shape[1]
    Z = target[:, None] - neighbors
    G = Z.T @ Z
    tr = np.trace(G)
    if tr <= 0:
        return np.full(k, 1.0 / k)
    w = np.linalg.solve(G + (eps * tr / k) * np.eye(k), np.ones(k))
    return w / w.sum()


def _normalize(L: sparse.csr_array, trace_target: float, k: int,
               indices, V: sparse.csr_array) -> NeighborGraph:
    L = (L + L.T) * 0.5  # exact symmetry against rounding in products
    tr = L.diagonal().sum()
    if tr <= 0:
        return NeighborGraph(k=k, indices=indices, V=V,
                             L=sparse.csr_array(L), omega=0.0, empty=True)
    omega = trace_target / tr
    return NeighborGraph(k=k, indices=indices, V=V,
                         L=sparse.csr_array(L * omega), omega=omega)


def build_lle_graph(X: Array, k: int, trace_target: float) -> NeighborGraph:
    """Locally-linear graph: barycentric V, L = (I - V^T)(I - V), normalized."""
    N = X.shape[1]
    idx = knn_indices(X, k)
    weights = np.empty((N, k))
    for i in range(N):
        weights[i] = barycentric_weights(X[:, i], X[:, idx[i]])
    rows = np.repeat(np.arange(N), k)
    V = sparse.csr_array(
        sparse.coo_array((weights.ravel(), (rows, idx.ravel())), shape=(N, N)))
    M = sparse.eye_array(N, format="csr") - V
    L = sparse.csr_array(M.T @ M)
    return _normalize(L, trace_target, k, idx, V)


def _gaussian_laplacian(d2: Array, support: Array, sigma: float,
                        trace_target: float, k: int, indices) -> NeighborGraph:
    W = np.where(support, np.exp(-d2 / (2.0 * sigma * sigma)), 0.0)
    np.fill_diagonal(W, 0.0)
    L = np.diag(W.sum(axis=1)) - W
    return _normalize(sparse.csr_array(L), trace_target, k, indices,
                      sparse.csr_array(W))


def build_gaussian_knn_laplacian(X: Array, params: GaussianGraphParams,
                                 trace_target: float) -> NeighborGraph:
    """Gaussian weights on the mutualized knn support; L = D - W, normalized."""
    N = X.shape[1]
    idx = knn_indices(X, params.k)
    support = np.zeros((N, N), dtype=bool)
    support[np.repeat(np.arange(N), params.k), idx.ravel()] = True
    support |= support.T
    d2 = cdist(X.T, X.T, "sqeuclidean")
    return _gaussian_laplacian(d2, support, params.sigma, trace_target,
                               params.k, idx)


def build_threshold_laplacian(X: Array, params: GaussianGraphParams,
                              trace_target: float) -> NeighborGraph:
    """Gaussian weights on pairs closer than the zeta-quantile distance.

    The cutoff kappa is the empirical zeta-quantile (linear interpolation) of
    the N(N-1)/2 pairwise distances; pairs qualify strictly below kappa, so a
    small enough zeta yields an empty graph (flagged, not an error).
    """
    dists = pdist(X.T)
    kappa = float(np.quantile(dists, params.zeta))
    d = squareform(dists)
    support = d < kappa
    np.fill_diagonal(support, False)
    return _gaussian_laplacian(d * d, support, params.sigma, trace_target,
                               k=0, indices=None)


def pairwise_distance_quantile(X: Array, zeta: float) -> float:
    """The zeta-quantile of all pairwise distances among columns of X."""
    return float(np.quantile(pdist(X.T), zeta))


def laplacian_quadratic(L, A: Array) -> float:
    """tr(A L A^T) for a symmetric (possibly sparse) L."""
    return float(np.sum(A * (L @ A.T).T))
