"""Fit, transform, and validate the 3-D neighbor-graph embedding."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..tensorio import register_model
from . import _graph, _knn, _layout

DEFAULT_PARAMS = {
    "n_neighbors": 50,
    "min_dist": 0.1,
    "n_components": 3,
    "metric": "euclidean",
    "n_epochs": None,           # resolved from corpus size when unset
    "negative_sample_rate": 5,
    "exact_knn_max": _knn.EXACT_MAX_POINTS,
}
_SMALL_CORPUS = 10_000
_SMALL_EPOCHS = 200
_DEFAULT_EPOCHS = 500
_TRANSFORM_EPOCHS = 50


@register_model("embedding")
@dataclass
class EmbeddingModel:
    """Frozen embedding: unique training points, their 3-D coordinates,
    and the kernel shape (a, b) derived from min_dist."""

    layer_id: int
    params: dict
    seed: int
    a: float
    b: float
    train_points: np.ndarray  # (U, D) unique rows, float64
    train_coords: np.ndarray  # (U, n_components) float64
    inverse: np.ndarray       # (N,) original row -> unique row
    meta: dict = field(default_factory=dict)

    @property
    def low_dim_coords(self) -> np.ndarray:
        """Coordinates for the original (pre-dedup) training rows."""
        return self.train_coords[self.inverse]

    @property
    def dim(self) -> int:
        return self.train_points.shape[1]

    def _to_state(self):
        meta = {"layer_id": self.layer_id, "params": self.params,
                "seed": self.seed, "a": self.a, "b": self.b, "meta": self.meta}
        return "embedding", meta, {
            "train_points": self.train_points.astype("<f8"),
            "train_coords": self.train_coords.astype("<f8"),
            "inverse": self.inverse.astype("<i8"),
        }

    @classmethod
    def _from_state(cls, meta, arrays):
        return cls(meta["layer_id"], dict(meta["params"]), meta["seed"],
                   meta["a"], meta["b"],
                   np.asarray(arrays["train_points"], dtype=np.float64),
                   np.asarray(arrays["train_coords"], dtype=np.float64),
                   np.asarray(arrays["inverse"], dtype=np.int64),
                   dict(meta.get("meta", {})))


def _resolve_params(params: dict | None) -> dict:
    p = dict(DEFAULT_PARAMS)
    if params:
        unknown = set(params) - set(DEFAULT_PARAMS)
        if unknown:
            raise ValueError(f"unknown embedding parameters: {sorted(unknown)}")
        p.update(params)
    if p["metric"] != "euclidean":
        raise ValueError(f"unsupported metric {p['metric']!r}; only euclidean "
                         "neighborhoods are implemented")
    return p


def fit_embedding(vectors, params: dict | None = None, seed: int = 0,
                  layer_id: int = 0) -> EmbeddingModel:
    """Embed a training corpus into n_components dimensions.

    Duplicate rows are collapsed before the neighbor graph is built (they
    carry identical neighborhoods) and share one output coordinate, which
    also keeps the layout deterministic on degenerate corpora.
    """
    x = np.ascontiguousarray(vectors, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("expected a 2-d array of vectors")
    if not np.isfinite(x).all():
        raise ValueError("embedding input contains non-finite values")
    p = _resolve_params(params)
    n = len(x)
    if n <= p["n_neighbors"]:
        raise ValueError(
            f"need more than n_neighbors={p['n_neighbors']} vectors, got {n}; "
            "lower embed.n_neighbors in the config")

    unique, inverse = np.unique(x, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1).astype(np.int64)
    u = len(unique)
    if u <= p["n_neighbors"]:
        # a complete neighbor graph has no local structure and the layout
        # degenerates, so the corpus-size precondition binds on distinct rows
        raise ValueError(
            f"only {u} distinct vectors after collapsing duplicates, "
            f"need more than n_neighbors={p['n_neighbors']}; "
            "lower embed.n_neighbors in the config")
    dim_out = p["n_components"]
    a, b = _graph.find_ab_params(p["min_dist"])
    rng = np.random.default_rng(seed)

    k = p["n_neighbors"]
    indices, dists = _knn.knn_self(unique, k, seed, p["exact_knn_max"])
    rho, sigma = _graph.smooth_knn_dist(dists, k)
    weights = _graph.membership_strengths(indices, dists, rho, sigma)
    graph = _graph.fuzzy_union(indices, weights, u)

    n_epochs = p["n_epochs"]
    if n_epochs is None:
        n_epochs = _SMALL_EPOCHS if u <= _SMALL_CORPUS else _DEFAULT_EPOCHS
    head, tail, epochs_per_sample = _graph.edge_list(graph, n_epochs)

    coords = rng.uniform(-10.0, 10.0, size=(u, dim_out))
    _layout.optimize_layout(coords, coords, head, tail, n_epochs,
                            epochs_per_sample, a, b, seed, 1.0,
                            p["negative_sample_rate"], True)
    if not np.isfinite(coords).all():
        raise RuntimeError("layout diverged to non-finite coordinates")
    return EmbeddingModel(layer_id, dict(p, n_epochs=n_epochs), seed, a, b,
                          unique, coords, inverse)


def transform(model: EmbeddingModel, new_vectors, n_epochs: int | None = None
              ) -> np.ndarray:
    """Place out-of-sample vectors into the frozen embedding.

    Each point starts at the membership-weighted mean of its nearest
    training coordinates and is refined by a short layout run in which
    only the new points move.
    """
    q = np.ascontiguousarray(new_vectors, dtype=np.float64)
    if q.ndim != 2:
        raise ValueError("expected a 2-d array of vectors")
    if q.shape[0] == 0:
        return np.zeros((0, model.train_coords.shape[1]))
    if q.shape[1] != model.dim:
        raise ValueError(f"vectors have dimension {q.shape[1]}, "
                         f"model was fitted on {model.dim}")
    if not np.isfinite(q).all():
        raise ValueError("transform input contains non-finite values")

    u = len(model.train_points)
    if u == 1:
        return np.repeat(model.train_coords, len(q), axis=0)
    k = min(model.params["n_neighbors"], u)
    indices, dists = _knn.exact_knn(model.train_points, k, queries=q)
    rho, sigma = _graph.smooth_knn_dist(dists, k)
    weights = _graph.membership_strengths(indices, dists, rho, sigma,
                                          drop_self=False)
    norm = weights.sum(axis=1, keepdims=True)
    norm[norm == 0.0] = 1.0
    coords = np.einsum("qk,qkd->qd", weights / norm, model.train_coords[indices])

    if n_epochs is None:
        n_epochs = _TRANSFORM_EPOCHS
    if n_epochs > 0:
        n_q = len(q)
        head = np.repeat(np.arange(n_q, dtype=np.int64), k)
        tail = indices.ravel().astype(np.int64)
        w = weights.ravel().copy()
        keep = w >= w.max() / float(n_epochs)
        epochs_per_sample = w.max() / w[keep]
        _layout.optimize_layout(coords, model.train_coords.copy(),
                                head[keep], tail[keep], n_epochs,
                                epochs_per_sample, model.a, model.b,
                                model.seed + 1, 0.25,
                                model.params["negative_sample_rate"], False)
    return coords


def trustworthiness(high_dim, low_dim, k: int) -> float:
    """Share of low-dimensional neighborhoods free of rank intrusions.

    1.0 means every low-dim k-neighborhood contains only points that were
    already among the high-dim k nearest; the score decays with the
    summed high-dim rank excess of the intruders.
    """
    x = np.asarray(high_dim, dtype=np.float64)
    y = np.asarray(low_dim, dtype=np.float64)
    n = len(x)
    if len(y) != n:
        raise ValueError("point counts differ between spaces")
    if k >= n:
        raise ValueError(f"k={k} must be smaller than the corpus ({n})")
    norm = 2.0 / (n * k * (2.0 * n - 3.0 * k - 1.0))
    if norm <= 0:
        raise ValueError(f"k={k} too large for the trustworthiness statistic")

    high_idx, _ = _knn.exact_knn(x, n)  # full ordering, self first
    ranks = np.empty((n, n), dtype=np.int64)
    rows = np.arange(n)[:, None]
    ranks[rows, high_idx] = np.arange(n)[None, :]

    low_idx, _ = _knn.exact_knn(y, k + 1)
    penalty = 0
    for i in range(n):
        neigh = low_idx[i][low_idx[i] != i][:k]
        r = ranks[i, neigh]  # 1..n-1 since self holds rank 0
        penalty += int(np.maximum(r - k, 0).sum())
    return 1.0 - norm * penalty
