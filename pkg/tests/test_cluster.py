"""k-means, BIC, X-means structure discovery, and symbol assignment."""

import numpy as np
import pytest

from symbolkit import cluster
from symbolkit.cluster import (
    SymbolCodebook,
    assign_symbol,
    assign_symbols,
    bic,
    kmeans_fit,
    xmeans_fit,
)


def planted_blobs(n_blobs, n_per, seed, sigma=0.05, min_sep=0.8, span=4.0):
    rng = np.random.default_rng(seed)
    while True:
        ctrs = rng.uniform(0, span, size=(n_blobs, 3))
        d = np.sqrt(((ctrs[:, None] - ctrs[None]) ** 2).sum(-1))
        d += np.eye(n_blobs) * 2 * span
        if d.min() > min_sep:
            break
    pts = np.vstack([c + rng.normal(0, sigma, (n_per, 3)) for c in ctrs])
    labels = np.repeat(np.arange(n_blobs), n_per)
    return pts, labels, ctrs


def label_agreement(found, truth):
    """Best-case agreement after greedily matching cluster ids to labels."""
    agree = 0
    for f in np.unique(found):
        members = truth[found == f]
        agree += np.bincount(members).max()
    return agree / len(truth)


# ---------------------------------------------------------------------------
# kmeans
# ---------------------------------------------------------------------------

def test_kmeans_k1_is_centroid():
    pts = np.random.default_rng(0).normal(size=(50, 3))
    book = kmeans_fit(pts, 1, seed=0)
    assert np.allclose(book.centers[0], pts.mean(axis=0))


def test_kmeans_k_equals_n_distinct():
    pts = np.arange(12, dtype=float).reshape(4, 3)
    book = kmeans_fit(pts, 4, seed=0)
    # zero inertia: every point is its own center
    got = book.centers[np.lexsort(book.centers.T)]
    assert np.allclose(got, pts)


def test_kmeans_planted_blobs():
    pts, truth, _ = planted_blobs(3, 500, seed=1)
    book = kmeans_fit(pts, 3, seed=0)
    assert label_agreement(assign_symbols(book, pts), truth) >= 0.99


def test_kmeans_too_few_points():
    with pytest.raises(ValueError, match="cannot place"):
        kmeans_fit(np.zeros((2, 3)), 5, seed=0)


def test_kmeans_deterministic():
    pts, _, _ = planted_blobs(4, 200, seed=2)
    a = kmeans_fit(pts, 4, seed=9).centers
    b = kmeans_fit(pts, 4, seed=9).centers
    assert np.array_equal(a, b)


def test_lloyd_reseeds_empty_cluster():
    rng = np.random.default_rng(12)
    pts = np.vstack([rng.normal(0, 0.05, (10, 3)), rng.normal(1, 0.05, (10, 3))])
    # third center far away captures nothing on the first assignment
    init = np.array([[0.0, 0, 0], [1.0, 1, 1], [99.0, 99, 99]])
    centers, labels = cluster._lloyd(pts, init)
    assert len(np.unique(labels)) == 3  # reseeded rather than left empty


# ---------------------------------------------------------------------------
# BIC
# ---------------------------------------------------------------------------

def test_bic_single_blob_prefers_one_center():
    pts = np.random.default_rng(3).normal(0, 0.05, size=(500, 3))
    one = bic(pts, pts.mean(axis=0)[None, :])
    two = bic(pts, kmeans_fit(pts, 2, seed=0).centers)
    assert one > two


def test_bic_two_blobs_prefers_two_centers():
    rng = np.random.default_rng(4)
    pts = np.vstack([rng.normal(0, 0.05, (300, 3)),
                     rng.normal(1, 0.05, (300, 3))])
    one = bic(pts, pts.mean(axis=0)[None, :])
    two = bic(pts, kmeans_fit(pts, 2, seed=0).centers)
    assert two > one


def test_bic_scale_invariant_argmax():
    rng = np.random.default_rng(5)
    pts = np.vstack([rng.normal(0, 0.05, (300, 3)),
                     rng.normal(1, 0.05, (300, 3))])
    for scale in (1.0, 100.0, 1e-3):
        scores = [bic(pts * scale, kmeans_fit(pts * scale, k, seed=0).centers)
                  for k in (1, 2, 3)]
        assert int(np.argmax(scores)) + 1 == 2


def test_bic_zero_variance_floor():
    pts = np.vstack([np.zeros((5, 3)), np.ones((5, 3))])
    centers = np.array([[0.0, 0, 0], [1.0, 1, 1]])
    assert np.isfinite(bic(pts, centers))


def test_bic_needs_more_points_than_centers():
    with pytest.raises(ValueError):
        bic(np.zeros((2, 3)), np.zeros((2, 3)))


# ---------------------------------------------------------------------------
# xmeans
# ---------------------------------------------------------------------------

def test_xmeans_three_planted_gaussians():
    pts, truth, _ = planted_blobs(3, 1000, seed=6)
    book = xmeans_fit(pts, k_init=2, k_max=20, seed=0)
    assert book.n_symbols == 3
    assert label_agreement(assign_symbols(book, pts), truth) >= 0.99


def test_xmeans_identical_points():
    book = xmeans_fit(np.ones((50, 3)), k_init=2, k_max=10, seed=0)
    assert book.n_symbols == 1


def test_xmeans_cap_hit():
    pts, _, _ = planted_blobs(30, 100, seed=7)
    book = xmeans_fit(pts, k_init=2, k_max=10, seed=0)
    assert book.n_symbols == 10  # saturates at the cap


def test_xmeans_never_exceeds_cap():
    pts, _, _ = planted_blobs(6, 200, seed=8)
    for k_max in (1, 2, 4, 20):
        assert xmeans_fit(pts, k_init=1, k_max=k_max, seed=0).n_symbols <= k_max


def test_xmeans_kmax_equals_kinit_degenerates_to_kmeans():
    pts, _, _ = planted_blobs(5, 200, seed=9)
    a = xmeans_fit(pts, k_init=4, k_max=4, seed=3)
    b = kmeans_fit(pts, 4, seed=3)
    assert np.array_equal(a.centers, b.centers)


def test_xmeans_deterministic():
    pts, _, _ = planted_blobs(4, 300, seed=10)
    a = xmeans_fit(pts, k_init=2, k_max=16, seed=5).centers
    b = xmeans_fit(pts, k_init=2, k_max=16, seed=5).centers
    assert np.array_equal(a, b)


def test_xmeans_recovery_across_seeds():
    # smaller companion of the 40-run acceptance sweep
    for g in (3, 5):
        hits = sum(
            xmeans_fit(planted_blobs(g, 300, seed=100 * g + s)[0],
                       k_init=2, k_max=30, seed=s).n_symbols == g
            for s in range(8))
        assert hits >= 7


# ---------------------------------------------------------------------------
# assignment
# ---------------------------------------------------------------------------

def test_assign_on_center():
    book = SymbolCodebook(0, np.arange(30, dtype=float).reshape(10, 3), 20)
    assert assign_symbol(book, book.centers[7]) == 7


def test_assign_tie_breaks_low_index():
    centers = np.array([[5.0, 0, 0], [0.0, 0, 0], [9.0, 9, 9],
                        [1.0, 1, 1], [2.0, 0, 0]])
    book = SymbolCodebook(0, centers, 10)
    # (1, 0, 0) is exactly 1.0 from centers 1 and 4
    assert assign_symbol(book, [1.0, 0.0, 0.0]) == 1


def test_assign_matches_brute_force():
    rng = np.random.default_rng(11)
    book = SymbolCodebook(0, rng.normal(size=(40, 3)), 100)
    pts = rng.normal(size=(2000, 3))
    got = assign_symbols(book, pts)
    expect = np.array([np.argmin(((book.centers - p) ** 2).sum(axis=1))
                       for p in pts])
    assert np.array_equal(got, expect)


def test_assign_rejects_non_finite():
    book = SymbolCodebook(0, np.zeros((1, 3)), 5)
    with pytest.raises(ValueError):
        assign_symbol(book, [np.inf, 0, 0])


def test_codebook_validation():
    with pytest.raises(ValueError, match="duplicate centers"):
        SymbolCodebook(0, np.zeros((2, 3)), 5).validate()
    with pytest.raises(ValueError, match="cap"):
        SymbolCodebook(0, np.random.default_rng(0).normal(size=(6, 3)), 5).validate()
