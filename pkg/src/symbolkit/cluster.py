"""Symbol discovery by clustering embedded activity vectors.

X-means grows the center set from a small seed: each cluster proposes a
two-way split along its principal axis and the split is kept only if the
two-center model scores a higher BIC on the cluster's points than the
one-center model.  The center count is capped (default 1000).  A fixed-k
mode runs plain k-means with k-means++ seeding.  Symbols are assigned by
nearest center with ties broken toward the lowest index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensorio import register_model

DEFAULT_K_MAX = 1000
LLOYD_TOL = 1e-4
LLOYD_MAX_ITER = 100
_VAR_FLOOR = 1e-12
_ASSIGN_CHUNK = 4096


@register_model("codebook")
@dataclass
class SymbolCodebook:
    """Cluster centers in embedded space; one symbol per center."""

    layer_id: int
    centers: np.ndarray  # (S, d) float64
    k_max: int = DEFAULT_K_MAX
    layer_mean: float = 0.0
    embedding_ref: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def n_symbols(self) -> int:
        return len(self.centers)

    def validate(self) -> "SymbolCodebook":
        s = self.n_symbols
        if not 1 <= s <= self.k_max:
            raise ValueError(f"codebook has {s} centers, cap is {self.k_max}")
        if not np.isfinite(self.centers).all():
            raise ValueError("codebook centers must be finite")
        if len(np.unique(self.centers, axis=0)) != s:
            raise ValueError("codebook contains duplicate centers")
        return self

    def _to_state(self):
        meta = {"layer_id": self.layer_id, "k_max": self.k_max,
                "layer_mean": self.layer_mean,
                "embedding_ref": self.embedding_ref, "meta": self.meta}
        return "codebook", meta, {"centers": self.centers.astype("<f8")}

    @classmethod
    def _from_state(cls, meta, arrays):
        return cls(meta["layer_id"], np.asarray(arrays["centers"], dtype=np.float64),
                   meta["k_max"], meta["layer_mean"], meta["embedding_ref"],
                   dict(meta.get("meta", {})))


def _assign(points: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-center labels and squared distance to the assigned center.

    Distances use explicit differences (not the expanded dot-product form)
    so exactly equidistant points tie exactly and argmin resolves them to
    the lowest center index.
    """
    n = len(points)
    labels = np.empty(n, dtype=np.int64)
    sq = np.empty(n, dtype=np.float64)
    for s in range(0, n, _ASSIGN_CHUNK):
        diff = points[s:s + _ASSIGN_CHUNK, None, :] - centers[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        labels[s:s + _ASSIGN_CHUNK] = np.argmin(d2, axis=1)
        sq[s:s + _ASSIGN_CHUNK] = np.take_along_axis(
            d2, labels[s:s + _ASSIGN_CHUNK, None], axis=1)[:, 0]
    return labels, sq


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    centers = np.empty((k, points.shape[1]), dtype=np.float64)
    centers[0] = points[rng.integers(n)]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:  # all remaining points coincide with a chosen center
            centers[i] = points[rng.integers(n)]
            continue
        centers[i] = points[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((points - centers[i]) ** 2).sum(axis=1))
    return centers


def _lloyd(points: np.ndarray, centers: np.ndarray,
           tol: float = LLOYD_TOL, max_iter: int = LLOYD_MAX_ITER
           ) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd iteration to convergence; empty clusters are re-seeded to the
    point currently farthest from its assigned center."""
    centers = centers.copy()
    k = len(centers)
    labels = np.zeros(len(points), dtype=np.int64)
    for _ in range(max_iter):
        labels, sq = _assign(points, centers)
        counts = np.bincount(labels, minlength=k)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            order = np.argsort(-sq, kind="stable")
            for e, src in zip(empty, order[:empty.size]):
                centers[e] = points[src]
                labels[src] = e
            labels, sq = _assign(points, centers)
            counts = np.bincount(labels, minlength=k)
        new_centers = np.zeros_like(centers)
        np.add.at(new_centers, labels, points)
        nonzero = counts > 0
        new_centers[nonzero] /= counts[nonzero, None]
        new_centers[~nonzero] = centers[~nonzero]
        shift = np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max()
        centers = new_centers
        if shift < tol:
            break
    labels, _ = _assign(points, centers)
    return centers, labels


def bic(points: np.ndarray, centers: np.ndarray,
        labels: np.ndarray | None = None) -> float:
    """Spherical-Gaussian BIC with one pooled variance; higher is better.

    Free parameters: (k-1) mixing weights + d*k center coordinates + 1
    shared variance; penalty (p/2) log N.
    """
    points = np.asarray(points, dtype=np.float64)
    n, d = points.shape
    k = len(centers)
    if n <= k:
        raise ValueError(f"BIC needs more points than centers (N={n}, k={k})")
    if labels is None:
        labels, sq = _assign(points, centers)
    else:
        sq = ((points - centers[labels]) ** 2).sum(axis=1)
    sse = float(sq.sum())
    var = max(sse / (d * (n - k)), _VAR_FLOOR)

    counts = np.bincount(labels, minlength=k)
    nz = counts[counts > 0]
    log_lik = (float((nz * np.log(nz / n)).sum())
               - 0.5 * n * d * np.log(2.0 * np.pi * var)
               - sse / (2.0 * var))
    n_params = (k - 1) + d * k + 1
    return log_lik - 0.5 * n_params * np.log(n)


def kmeans_fit(points, k: int, seed: int = 0, layer_id: int = 0,
               k_max: int | None = None) -> SymbolCodebook:
    """Plain k-means: k-means++ seeding, Lloyd to tolerance 1e-4."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if n < k:
        raise ValueError(f"cannot place {k} centers on {n} points")
    rng = np.random.default_rng(seed)
    centers, _ = _lloyd(points, _kmeans_pp_init(points, k, rng))
    centers = _dedupe_centers(centers)
    return SymbolCodebook(layer_id, centers, k_max or max(k, DEFAULT_K_MAX),
                          meta={"mode": "kmeans", "k": k, "seed": seed}).validate()


def _dedupe_centers(centers: np.ndarray) -> np.ndarray:
    # exact duplicates only appear on degenerate inputs (duplicated points);
    # keep first occurrences to preserve index-based tie-breaking
    _, first = np.unique(centers, axis=0, return_index=True)
    if len(first) == len(centers):
        return centers
    return centers[np.sort(first)]


def _split_center(points: np.ndarray) -> np.ndarray | None:
    """Propose two children along the cluster's principal axis at +-0.5 sigma."""
    mu = points.mean(axis=0)
    centered = points - mu
    cov = centered.T @ centered / len(points)
    evals, evecs = np.linalg.eigh(cov)
    sigma = np.sqrt(max(evals[-1], 0.0))
    if sigma <= 0.0:
        return None  # zero variance: nothing to split
    offset = 0.5 * sigma * evecs[:, -1]
    return np.stack([mu - offset, mu + offset])


_SPLIT_RESTARTS = 3


def _best_split(points: np.ndarray, rng: np.random.Generator
                ) -> tuple[np.ndarray, np.ndarray] | None:
    """Two-way split of a cluster's points, best of the principal-axis
    proposal and a few seeded k-means++ restarts.

    The principal-axis init alone gets stuck in poor local optima on
    clusters that still contain several well-separated sub-populations,
    which stalls the whole structure search; the restarts recover those.
    """
    inits = []
    pa = _split_center(points)
    if pa is not None:
        inits.append(pa)
    for _ in range(_SPLIT_RESTARTS):
        inits.append(_kmeans_pp_init(points, 2, rng))
    best = None
    best_sse = np.inf
    for init in inits:
        children, labels = _lloyd(points, init)
        if len(np.unique(labels)) < 2:
            continue
        sse = float(((points - children[labels]) ** 2).sum())
        if sse < best_sse:
            best, best_sse = (children, labels), sse
    return best


def xmeans_fit(points, k_init: int = 10, k_max: int = DEFAULT_K_MAX,
               seed: int = 0, layer_id: int = 0) -> SymbolCodebook:
    """Grow centers by BIC-scored splits until no split helps or the cap
    is reached (improve-params / improve-structure loop)."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if k_init < 1 or k_max < k_init:
        raise ValueError(f"need 1 <= k_init <= k_max, got {k_init}, {k_max}")
    if n < k_init:
        raise ValueError(f"cannot place {k_init} initial centers on {n} points")
    rng = np.random.default_rng(seed)

    if len(np.unique(points, axis=0)) == 1:
        return SymbolCodebook(layer_id, points[:1].copy(), k_max,
                              meta={"mode": "xmeans", "seed": seed}).validate()

    centers, labels = _lloyd(points, _kmeans_pp_init(points, k_init, rng))

    while len(centers) < k_max:
        proposals = []  # (gain, cluster index, child centers)
        for c in range(len(centers)):
            members = points[labels == c]
            if len(members) < 3:
                continue
            split = _best_split(members, rng)
            if split is None:
                continue
            children, child_labels = split
            parent_bic = bic(members, members.mean(axis=0)[None, :],
                             np.zeros(len(members), dtype=np.int64))
            child_bic = bic(members, children, child_labels)
            if child_bic > parent_bic:
                proposals.append((child_bic - parent_bic, c, children))
        if not proposals:
            break
        proposals.sort(key=lambda p: (-p[0], p[1]))
        budget = k_max - len(centers)
        accepted = {c: children for _, c, children in proposals[:budget]}
        new_centers = []
        for c in range(len(centers)):
            if c in accepted:
                new_centers.extend(accepted[c])
            else:
                new_centers.append(centers[c])
        centers, labels = _lloyd(points, np.asarray(new_centers))

    centers = _dedupe_centers(centers)
    return SymbolCodebook(layer_id, centers, k_max,
                          meta={"mode": "xmeans", "k_init": k_init,
                                "seed": seed}).validate()


def assign_symbols(codebook: SymbolCodebook, points) -> np.ndarray:
    """Index of the Euclidean-nearest center for each point."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if not np.isfinite(points).all():
        raise ValueError("cannot assign symbols to non-finite points")
    labels, _ = _assign(points, codebook.centers)
    return labels


def assign_symbol(codebook: SymbolCodebook, point) -> int:
    return int(assign_symbols(codebook, np.asarray(point)[None, :])[0])
