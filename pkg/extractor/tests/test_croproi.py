"""Cropped-ROI accuracy study."""

import csv

import numpy as np
import pytest

from extractor import datasets
from extractor.croproi import (
    COLUMNS,
    CROP_LEVELS,
    crop_roi_eval,
    shrink_box,
    write_csv,
)
from extractor.models import fixture_adapter

FIXTURE = "fixtures/mini"


def test_crop_levels_match_pixel_shares():
    assert CROP_LEVELS["roi81"] == pytest.approx(np.sqrt(0.81))
    assert CROP_LEVELS["roi64"] == pytest.approx(np.sqrt(0.64))
    assert CROP_LEVELS["roi49"] == pytest.approx(np.sqrt(0.49))


def test_shrink_box_keeps_center():
    box = (10.0, 20.0, 30.0, 60.0)
    small = shrink_box(box, 0.7)
    assert (small[0] + small[2]) / 2 == pytest.approx(20.0)
    assert (small[1] + small[3]) / 2 == pytest.approx(40.0)
    assert small[2] - small[0] == pytest.approx(14.0)


def test_fixture_table_full_column_one_and_monotone(tmp_path):
    ds = datasets.load_fixture(FIXTURE)
    result = crop_roi_eval(fixture_adapter(), ds)
    assert result.n_images == 20
    assert result.normalized["full"] == 1.0
    ordered = [result.normalized[c] for c in COLUMNS]
    assert all(a >= b - 1e-12 for a, b in zip(ordered, ordered[1:]))

    path = write_csv(result, str(tmp_path / "crop.csv"))
    with open(path) as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["model", "n_images", "full", "roi", "roi81", "roi64",
                       "roi49"]
    assert rows[1][2] == "1"


def test_no_boxes_raises():
    ds = datasets.Dataset("d", ["a", "b"], [
        datasets.Sample("i0", np.zeros((8, 8, 3), dtype=np.uint8), 0)])

    class NoBoxes:
        def detect(self, image, class_name, image_id=None):
            return []

    with pytest.raises(ValueError, match="no images with ROI boxes"):
        crop_roi_eval(fixture_adapter(), ds, NoBoxes())
