"""Cropped-ROI accuracy study.

Measures how much of a classifier's accuracy survives when it only sees
the object region, and shrunken versions of it: crops holding 81%, 64%
and 49% of the ROI's pixels (side factors 0.9, 0.8, 0.7), all sharing
the ROI's center.  Accuracies are normalized to the full-image accuracy.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import datasets, stcert
from .models import ModelAdapter

# column -> side factor; sqrt(0.81)=0.9, sqrt(0.64)=0.8, sqrt(0.49)=0.7
CROP_LEVELS = {"roi": 1.0, "roi81": 0.9, "roi64": 0.8, "roi49": 0.7}
COLUMNS = ("full", "roi", "roi81", "roi64", "roi49")


@dataclass
class CropRoiResult:
    model_name: str
    n_images: int
    raw_accuracy: dict[str, float]
    normalized: dict[str, float]


def shrink_box(bbox, factor: float):
    """Scale the box sides by `factor` around the same center."""
    x0, y0, x1, y1 = bbox
    cx, cy = (x0 + x1) / 2.0, (y0 + y1) / 2.0
    hw, hh = (x1 - x0) / 2.0 * factor, (y1 - y0) / 2.0 * factor
    return (cx - hw, cy - hh, cx + hw, cy + hh)


def crop_roi_eval(adapter: ModelAdapter, dataset: datasets.Dataset,
                  detector: stcert.BoxDetector | None = None) -> CropRoiResult:
    if detector is None:
        from .extract import default_detector
        detector = default_detector(dataset)

    hits = dict.fromkeys(COLUMNS, 0)
    n = 0
    for sample in dataset.samples:
        boxes = detector.detect(sample.image, dataset.class_names[sample.label],
                                sample.image_id)
        if not boxes:
            continue
        bbox = boxes[0]
        n += 1
        images = {"full": sample.image}
        for column, factor in CROP_LEVELS.items():
            images[column] = stcert.crop(sample.image,
                                         shrink_box(bbox, factor))
        preds = adapter.predict_crops([images[c] for c in COLUMNS])
        for column, pred in zip(COLUMNS, preds):
            hits[column] += int(pred) == sample.label

    if n == 0:
        raise ValueError("no images with ROI boxes; nothing to evaluate")
    raw = {c: hits[c] / n for c in COLUMNS}
    if raw["full"] == 0.0:
        raise ValueError("full-image accuracy is zero; normalization undefined")
    normalized = {c: raw[c] / raw["full"] for c in COLUMNS}
    return CropRoiResult(adapter.name, n, raw, normalized)


def write_csv(result: CropRoiResult, path: str) -> str:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["model", "n_images"] + list(COLUMNS))
        w.writerow([result.model_name, result.n_images]
                   + [format(result.normalized[c], ".10g") for c in COLUMNS])
    return path
