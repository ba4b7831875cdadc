"""Neighbor-graph embedding: fit, out-of-sample transform, validation."""

import numpy as np
import pytest

from symbolkit import cluster, embed


@pytest.fixture(scope="module")
def blob_data():
    rng = np.random.default_rng(42)
    a = rng.normal(0, 0.05, (1000, 64))
    b = rng.normal(0, 0.05, (1000, 64)) + 1.0 / np.sqrt(64)
    x = np.vstack([a, b])
    truth = np.repeat([0, 1], 1000)
    return x, truth


@pytest.fixture(scope="module")
def blob_model(blob_data):
    x, _ = blob_data
    return embed.fit_embedding(x, seed=3)


def test_blob_membership_recovered(blob_data, blob_model):
    x, truth = blob_data
    coords = blob_model.low_dim_coords
    assert coords.shape == (2000, 3)
    book = cluster.kmeans_fit(coords, 2, seed=0)
    labels = cluster.assign_symbols(book, coords)
    agreement = max((labels == truth).mean(), (labels != truth).mean())
    assert agreement >= 0.99


def test_blob_separation(blob_data, blob_model):
    coords = blob_model.low_dim_coords
    a, b = coords[:1000], coords[1000:]
    within = (np.linalg.norm(a - a.mean(0), axis=1).mean()
              + np.linalg.norm(b - b.mean(0), axis=1).mean()) / 2
    between = np.linalg.norm(a.mean(0) - b.mean(0))
    assert between > 3 * within


def test_n_boundary():
    rng = np.random.default_rng(0)
    ok = rng.normal(size=(51, 4))
    model = embed.fit_embedding(ok, seed=0)  # N=51 > n_neighbors=50 runs
    assert model.train_coords.shape[1] == 3
    with pytest.raises(ValueError, match="n_neighbors"):
        embed.fit_embedding(rng.normal(size=(50, 4)), seed=0)


def test_fit_deterministic(blob_data, blob_model):
    x, _ = blob_data
    again = embed.fit_embedding(x, seed=3)
    assert np.array_equal(blob_model.train_coords, again.train_coords)


def test_duplicates_identical_coordinates():
    rng = np.random.default_rng(1)
    base = rng.normal(size=(120, 8))
    x = np.vstack([base, base, base])
    model = embed.fit_embedding(x, {"n_neighbors": 15}, seed=4)
    c = model.low_dim_coords
    assert np.array_equal(c[:120], c[120:240])
    assert np.array_equal(c[:120], c[240:])


def test_self_transform_lands_near_training_coord(blob_data, blob_model):
    x, _ = blob_data
    coords = blob_model.low_dim_coords
    sub = slice(None, None, 20)
    proj = embed.transform(blob_model, x[sub])
    diameter = np.linalg.norm(coords.max(0) - coords.min(0))
    err = np.linalg.norm(proj - coords[sub], axis=1)
    assert err.max() <= 0.1 * diameter


def test_midpoint_stays_in_blob_neighborhood(blob_data, blob_model):
    x, _ = blob_data
    coords = blob_model.low_dim_coords
    mid = (x[3] + x[7]) / 2  # two points of the first blob
    m = embed.transform(blob_model, mid[None])[0]
    lo, hi = coords[:1000].min(0), coords[:1000].max(0)
    assert ((m >= lo) & (m <= hi)).all()


def test_transform_empty(blob_model):
    out = embed.transform(blob_model, np.zeros((0, 64)))
    assert out.shape == (0, 3)


def test_transform_deterministic(blob_data, blob_model):
    x, _ = blob_data
    a = embed.transform(blob_model, x[:40])
    b = embed.transform(blob_model, x[:40])
    assert np.array_equal(a, b)


def test_transform_dimension_mismatch(blob_model):
    with pytest.raises(ValueError, match="dimension"):
        embed.transform(blob_model, np.zeros((3, 7)))


def test_rejects_non_finite():
    x = np.zeros((60, 4))
    x[0, 0] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        embed.fit_embedding(x, {"n_neighbors": 10}, seed=0)


def test_rejects_unknown_params():
    with pytest.raises(ValueError, match="unknown embedding parameters"):
        embed.fit_embedding(np.zeros((60, 4)), {"perplexity": 30}, seed=0)


def test_rejects_other_metrics():
    with pytest.raises(ValueError, match="euclidean"):
        embed.fit_embedding(np.zeros((60, 4)), {"metric": "cosine"}, seed=0)


def test_model_roundtrip_transform_identical(tmp_path, blob_data, blob_model):
    from symbolkit.tensorio import load_model, save_model
    x, _ = blob_data
    p = tmp_path / "emb.bin"
    save_model(blob_model, p)
    model2 = load_model(p)
    assert np.array_equal(blob_model.train_coords, model2.train_coords)
    assert np.array_equal(embed.transform(blob_model, x[:25]),
                          embed.transform(model2, x[:25]))


# ---------------------------------------------------------------------------
# trustworthiness
# ---------------------------------------------------------------------------

def test_trustworthiness_identity_is_one():
    x = np.random.default_rng(5).normal(size=(300, 3))
    assert embed.trustworthiness(x, x.copy(), 15) == 1.0


def test_trustworthiness_shuffled_below_chance_band():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(400, 8))
    y = x[rng.permutation(400), :3]
    scores = [embed.trustworthiness(x, x[r.permutation(400), :3], 15)
              for r in map(np.random.default_rng, range(5))]
    assert max(scores) < 0.7


def test_trustworthiness_blob_regression():
    # regression threshold for the embedding on a many-blob corpus
    rng = np.random.default_rng(7)
    ctrs = rng.uniform(0, 1, (40, 64))
    x = np.vstack([c + rng.normal(0, 0.02, (50, 64)) for c in ctrs])
    model = embed.fit_embedding(x, seed=11)
    assert embed.trustworthiness(x, model.low_dim_coords, 15) >= 0.90


def test_trustworthiness_k_bounds():
    x = np.zeros((20, 3))
    with pytest.raises(ValueError):
        embed.trustworthiness(x, x, 20)
    with pytest.raises(ValueError):
        embed.trustworthiness(x, x, 15)  # normalizer undefined: 2n-3k-1 <= 0


# ---------------------------------------------------------------------------
# kNN machinery
# ---------------------------------------------------------------------------

def test_exact_knn_sorted_and_self_first():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(100, 5))
    idx, d = embed.exact_knn(x, 10)
    assert np.array_equal(idx[:, 0], np.arange(100))
    assert np.all(d[:, 0] == 0.0)
    assert np.all(np.diff(d, axis=1) >= 0)


def test_approx_knn_recall():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(1500, 10))
    exact_idx, _ = embed.exact_knn(x, 10)
    approx_idx, _ = embed.approx_knn(x, 10, seed=0)
    recall = np.mean([len(set(a) & set(e)) / 10
                      for a, e in zip(approx_idx, exact_idx)])
    assert recall >= 0.9


def test_fit_with_forced_approx_knn_still_separates():
    rng = np.random.default_rng(10)
    a = rng.normal(0, 0.05, (300, 16))
    b = rng.normal(0, 0.05, (300, 16)) + 0.25
    x = np.vstack([a, b])
    model = embed.fit_embedding(x, {"n_neighbors": 20, "exact_knn_max": 10},
                                seed=1)
    coords = model.low_dim_coords
    book = cluster.kmeans_fit(coords, 2, seed=0)
    labels = cluster.assign_symbols(book, coords)
    truth = np.repeat([0, 1], 300)
    assert max((labels == truth).mean(), (labels != truth).mean()) >= 0.95
