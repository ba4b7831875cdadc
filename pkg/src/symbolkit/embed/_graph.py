"""Fuzzy neighborhood graph construction.

Each point gets a local scale: rho is the distance to its nearest
distinct neighbor and sigma is found by binary search so that the sum of
membership strengths over its neighbor list hits log2(k).  Directed
memberships are symmetrized with the probabilistic t-conorm
W + W^T - W o W^T.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.optimize import curve_fit

SMOOTH_K_TOLERANCE = 1e-5
MIN_K_DIST_SCALE = 1e-3
_N_SEARCH_ITER = 64


def smooth_knn_dist(dists: np.ndarray, k: float,
                    bandwidth: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Per-point (rho, sigma) for rows of sorted neighbor distances."""
    n = dists.shape[0]
    target = np.log2(k) * bandwidth

    nonzero = dists > 0.0
    has_nz = nonzero.any(axis=1)
    first_nz = np.where(has_nz, nonzero.argmax(axis=1), 0)
    rho = np.where(has_nz, dists[np.arange(n), first_nz], 0.0)

    lo = np.zeros(n)
    hi = np.full(n, np.inf)
    mid = np.ones(n)
    active = np.ones(n, dtype=bool)
    tail = dists[:, 1:]  # the nearest entry is excluded from the mass
    for _ in range(_N_SEARCH_ITER):
        psum = np.exp(
            -np.maximum(tail - rho[:, None], 0.0) / mid[:, None]).sum(axis=1)
        err = psum - target
        active &= np.abs(err) >= SMOOTH_K_TOLERANCE
        if not active.any():
            break
        above = active & (err > 0)
        below = active & ~above
        hi[above] = mid[above]
        lo[below] = mid[below]
        unbounded = below & np.isinf(hi)
        step = np.where(unbounded, mid * 2.0, (lo + hi) / 2.0)
        mid = np.where(active, step, mid)
    sigma = mid

    # keep sigma away from zero relative to the local distance scale
    row_mean = dists.mean(axis=1)
    grand_mean = dists.mean()
    floor = np.where(rho > 0.0, MIN_K_DIST_SCALE * row_mean,
                     MIN_K_DIST_SCALE * grand_mean)
    return rho, np.maximum(sigma, floor)


def membership_strengths(indices: np.ndarray, dists: np.ndarray,
                         rho: np.ndarray, sigma: np.ndarray,
                         drop_self: bool = True) -> np.ndarray:
    w = np.exp(-np.maximum(dists - rho[:, None], 0.0) / sigma[:, None])
    if drop_self:
        w[indices == np.arange(len(indices))[:, None]] = 0.0
    return w


def fuzzy_union(indices: np.ndarray, weights: np.ndarray, n_vertices: int
                ) -> sp.csr_matrix:
    n, k = indices.shape
    rows = np.repeat(np.arange(n), k)
    graph = sp.coo_matrix(
        (weights.ravel(), (rows, indices.ravel())), shape=(n, n_vertices)).tocsr()
    graph.sum_duplicates()
    transpose = graph.T.tocsr()
    prod = graph.multiply(transpose)
    sym = graph + transpose - prod
    sym.eliminate_zeros()
    return sym.tocsr()


def find_ab_params(min_dist: float, spread: float = 1.0) -> tuple[float, float]:
    """Fit the low-dimensional kernel 1/(1 + a d^(2b)) to the target
    curve that is flat out to min_dist and exponential beyond it."""
    def kernel(x, a, b):
        return 1.0 / (1.0 + a * x ** (2.0 * b))

    xv = np.linspace(0.0, spread * 3.0, 300)
    yv = np.where(xv < min_dist, 1.0, np.exp(-(xv - min_dist) / spread))
    (a, b), _ = curve_fit(kernel, xv, yv)
    return float(a), float(b)


def edge_list(graph: sp.spmatrix, n_epochs: int
              ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """COO edges with per-edge sampling periods.

    An edge of weight w is visited every max(w)/w epochs; edges too weak
    to be visited even once are pruned.
    """
    coo = graph.tocoo()
    data = coo.data.copy()
    keep = data >= data.max() / float(n_epochs)
    head = coo.row[keep].astype(np.int64)
    tail = coo.col[keep].astype(np.int64)
    epochs_per_sample = data.max() / data[keep]
    return head, tail, epochs_per_sample
