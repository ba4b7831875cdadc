"""Model adapters: hooks, token grids, fixture nets."""

import numpy as np
import pytest
import torch

from extractor import datasets
from extractor.models import (
    LAYER_CATALOGS,
    fixture_adapter,
    load_adapter,
    seeded_random_adapter,
    tokens_to_grid,
)

FIXTURE = "fixtures/mini"


def test_catalogs_cover_all_families():
    assert set(LAYER_CATALOGS) == {"resnet18", "resnet50", "vgg19",
                                   "densenet121", "vit_b_16"}
    for family, layers in LAYER_CATALOGS.items():
        assert sorted(layers) == [1, 2, 3, 4]


def test_tokens_to_grid():
    tokens = torch.arange(197 * 8, dtype=torch.float32).reshape(197, 8)
    grid = tokens_to_grid(tokens)
    assert grid.shape == (8, 14, 14)
    # first patch token (after the class token) lands at (0, 0)
    assert torch.equal(grid[:, 0, 0], tokens[1])


def test_tokens_to_grid_rejects_non_square():
    # 11 tokens -> 10 patches after dropping the class token: no grid
    with pytest.raises(ValueError, match="square"):
        tokens_to_grid(torch.zeros(11, 4))


def test_fixture_adapter_classifies_colors():
    ds = datasets.load_fixture(FIXTURE)
    adapter = fixture_adapter()
    images = np.stack([s.image for s in ds.samples]).astype(np.float32) / 255.0
    preds = adapter.predict(images)
    labels = np.array([s.label for s in ds.samples])
    assert (preds == labels).all()


def test_capture_returns_all_layers_with_halving_maps():
    adapter = fixture_adapter()
    img = np.zeros((1, 64, 64, 3), dtype=np.float32)
    preds, features = adapter.capture(img)
    assert set(features) == {1, 2, 3, 4}
    sizes = [features[k][0].shape[1] for k in (1, 2, 3, 4)]
    assert sizes == [32, 16, 8, 4]


def test_resnet18_hooks_capture_block_channels():
    adapter = load_adapter("resnet18")  # random weights: plumbing only
    img = np.random.default_rng(0).uniform(0, 1, (1, 224, 224, 3))
    _, features = adapter.capture(img.astype(np.float32))
    channels = [features[k][0].shape[0] for k in (1, 2, 3, 4)]
    assert channels == [64, 128, 256, 512]
    sizes = [features[k][0].shape[1] for k in (1, 2, 3, 4)]
    assert sizes == [56, 28, 14, 7]
    adapter.close()


def test_random_adapter_deterministic():
    a = seeded_random_adapter(seed=5)
    b = seeded_random_adapter(seed=5)
    img = np.random.default_rng(1).uniform(0, 1, (4, 32, 32, 3)).astype(np.float32)
    assert np.array_equal(a.predict(img), b.predict(img))


def test_unsupported_model_rejected():
    with pytest.raises(ValueError, match="unsupported model"):
        load_adapter("alexnet")


def test_layer_catalog_entries(tmp_path):
    adapter = fixture_adapter()
    probe = np.zeros((64, 64, 3), dtype=np.float32)
    catalog = adapter.layer_catalog(probe)
    assert [e["layer_id"] for e in catalog] == [1, 2, 3, 4]
    assert catalog[0] == {"layer_id": 1, "channels": 3,
                          "input_size": [64, 64], "feature_size": [32, 32]}
