"""k-nearest-neighbor search: exact brute force and a random-projection
forest for corpora too large to scan quadratically."""

from __future__ import annotations

import numpy as np

EXACT_MAX_POINTS = 20_000
_CHUNK = 512


def _sq_dists(queries: np.ndarray, corpus: np.ndarray,
              corpus_sq: np.ndarray) -> np.ndarray:
    d2 = (queries ** 2).sum(axis=1)[:, None] - 2.0 * (queries @ corpus.T) + corpus_sq
    np.maximum(d2, 0.0, out=d2)
    return d2


def exact_knn(corpus: np.ndarray, k: int, queries: np.ndarray | None = None
              ) -> tuple[np.ndarray, np.ndarray]:
    """k nearest corpus rows per query (the corpus itself by default).

    Distance ties are broken by index so the result is reproducible.
    When querying the corpus against itself each point's own row is a
    valid neighbor (distance zero).
    """
    self_query = queries is None
    queries = corpus if self_query else queries
    n, k = len(queries), min(k, len(corpus))
    indices = np.empty((n, k), dtype=np.int64)
    dists = np.empty((n, k), dtype=np.float64)
    corpus_sq = (corpus ** 2).sum(axis=1)[None, :]
    for s in range(0, n, _CHUNK):
        d2 = _sq_dists(queries[s:s + _CHUNK], corpus, corpus_sq)
        if self_query:
            # the expanded-dot form leaves ~1e-16 residue on the diagonal;
            # the self distance must be exactly zero for the rho logic
            rows = np.arange(s, min(s + _CHUNK, n))
            d2[rows - s, rows] = 0.0
        if k < d2.shape[1]:
            cand = np.argpartition(d2, k - 1, axis=1)[:, :k]
        else:
            cand = np.broadcast_to(np.arange(d2.shape[1]), d2.shape).copy()
        cd = np.take_along_axis(d2, cand, axis=1)
        order = np.lexsort((cand, cd), axis=1)
        indices[s:s + _CHUNK] = np.take_along_axis(cand, order, axis=1)
        dists[s:s + _CHUNK] = np.sqrt(np.take_along_axis(cd, order, axis=1))
    return indices, dists


def _build_tree_leaves(data: np.ndarray, rng: np.random.Generator,
                       leaf_size: int) -> list[np.ndarray]:
    """Partition indices into leaves by recursive random-hyperplane splits."""
    leaves = []
    stack = [np.arange(len(data))]
    while stack:
        idx = stack.pop()
        if len(idx) <= leaf_size:
            leaves.append(idx)
            continue
        a, b = rng.choice(len(idx), size=2, replace=False)
        normal = data[idx[b]] - data[idx[a]]
        norm = np.linalg.norm(normal)
        if norm == 0.0:
            # coincident pivots: split arbitrarily in half to guarantee progress
            half = len(idx) // 2
            stack.append(idx[:half])
            stack.append(idx[half:])
            continue
        midpoint = (data[idx[a]] + data[idx[b]]) / 2.0
        side = (data[idx] - midpoint) @ normal > 0
        left, right = idx[~side], idx[side]
        if len(left) == 0 or len(right) == 0:
            half = len(idx) // 2
            left, right = idx[:half], idx[half:]
        stack.append(left)
        stack.append(right)
    return leaves


def _merge_candidates(dists, indices, row, cand_idx, cand_d, k):
    cd = np.concatenate([dists[row], cand_d])
    ci = np.concatenate([indices[row], cand_idx])
    order = np.lexsort((ci, cd))
    cd, ci = cd[order], ci[order]
    _, first = np.unique(ci, return_index=True)
    keep = np.sort(first)
    cd, ci = cd[keep], ci[keep]
    order = np.lexsort((ci, cd))[:k]
    dists[row, :len(order)] = cd[order]
    indices[row, :len(order)] = ci[order]


def approx_knn(data: np.ndarray, k: int, seed: int, n_trees: int = 8,
               leaf_size: int = 64, n_refine: int = 2
               ) -> tuple[np.ndarray, np.ndarray]:
    """Approximate self-kNN: RP-forest candidates refined by a few rounds
    of neighbor-of-neighbor expansion."""
    n = len(data)
    k = min(k, n)
    rng = np.random.default_rng(seed)
    indices = np.full((n, k), -1, dtype=np.int64)
    dists = np.full((n, k), np.inf, dtype=np.float64)
    # every point neighbors itself; seeds the merge with a finite entry
    indices[:, 0] = np.arange(n)
    dists[:, 0] = 0.0

    leaf_size = max(leaf_size, k)
    for _ in range(n_trees):
        for leaf in _build_tree_leaves(data, rng, leaf_size):
            block = data[leaf]
            d2 = _sq_dists(block, block, (block ** 2).sum(axis=1)[None, :])
            d = np.sqrt(d2)
            for r, row in enumerate(leaf):
                _merge_candidates(dists, indices, row, leaf, d[r], k)

    for _ in range(n_refine):
        for row in range(n):
            cand = np.unique(indices[indices[row]])
            cand = cand[cand >= 0]
            block = data[cand]
            d = np.sqrt(((block - data[row]) ** 2).sum(axis=1))
            _merge_candidates(dists, indices, row, cand, d, k)

    # unfilled slots only occur when n < k; callers clamp k beforehand
    return indices, dists


def knn_self(data: np.ndarray, k: int, seed: int,
             exact_max: int = EXACT_MAX_POINTS) -> tuple[np.ndarray, np.ndarray]:
    if len(data) <= exact_max:
        return exact_knn(data, k)
    return approx_knn(data, k, seed)
