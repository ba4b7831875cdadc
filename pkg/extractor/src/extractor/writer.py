"""Standalone activation-bundle writer.

Writes the neutral bundle directory format (JSON manifest, little-endian
float32 blobs, JSON-lines ROI table) without depending on the consumer
package; the format contract lives in the consumer's docs/format.md.
"""

from __future__ import annotations

import json
import os
import zlib
from dataclasses import dataclass, field

import numpy as np

FORMAT_VERSION = 1
SPLIT_TAGS = ("train", "test", "ood", "adversarial")

_ID_OK = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_.-")


class WriterError(Exception):
    pass


def _check_id(name: str, what: str) -> str:
    if not name or not set(name) <= _ID_OK or name.startswith("."):
        raise WriterError(f"{what} {name!r} is not filesystem-safe")
    return name


@dataclass
class Roi:
    image_id: str
    roi_id: str
    bbox: tuple[float, float, float, float]
    true_label: int | None
    model_prediction: int | None
    certified: bool
    split_tag: str

    def to_json(self) -> str:
        return json.dumps({
            "image_id": self.image_id, "roi_id": self.roi_id,
            "bbox": list(self.bbox), "true_label": self.true_label,
            "model_prediction": self.model_prediction,
            "certified": self.certified, "split_tag": self.split_tag,
        }, sort_keys=True)


@dataclass
class BundleWriter:
    """Accumulates tensors and ROI records, then writes the directory."""

    path: str
    dataset_name: str
    class_names: list[str]
    model_name: str
    layer_catalog: list[dict]  # layer_id, channels, input_size, feature_size
    ood_class_names: list[str] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.class_names) < 2:
            raise WriterError("need at least 2 classes")
        os.makedirs(self.path, exist_ok=True)
        self._tensors: dict[str, dict] = {}
        self._roi_file = open(os.path.join(self.path, "rois.jsonl"), "w",
                              encoding="utf-8")
        self._splits = dict.fromkeys(SPLIT_TAGS, 0)
        self._catalog = {e["layer_id"]: e for e in self.layer_catalog}

    def add_tensor(self, image_id: str, layer_id: int, values: np.ndarray):
        _check_id(image_id, "image_id")
        values = np.ascontiguousarray(values, dtype=np.float32)
        if values.ndim != 3:
            raise WriterError(f"tensor {image_id}/{layer_id}: expected CxHxW")
        if not np.isfinite(values).all():
            raise WriterError(f"tensor {image_id}/{layer_id}: non-finite value")
        entry = self._catalog.get(layer_id)
        if entry is None:
            raise WriterError(f"layer {layer_id} not in catalog")
        if values.shape[0] != entry["channels"]:
            raise WriterError(f"tensor {image_id}/{layer_id}: "
                              f"{values.shape[0]} channels, catalog says "
                              f"{entry['channels']}")
        name = f"{image_id}/{layer_id}.f32"
        if name in self._tensors:
            raise WriterError(f"duplicate tensor {name}")
        raw = values.astype("<f4", copy=False).tobytes()
        blob = os.path.join(self.path, name)
        os.makedirs(os.path.dirname(blob), exist_ok=True)
        with open(blob, "wb") as f:
            f.write(raw)
        c, h, w = values.shape
        self._tensors[name] = {"channels": int(c), "height": int(h),
                               "width": int(w), "crc32": zlib.crc32(raw)}

    def add_roi(self, roi: Roi):
        _check_id(roi.roi_id, "roi_id")
        if roi.split_tag not in SPLIT_TAGS:
            raise WriterError(f"roi {roi.roi_id}: bad split {roi.split_tag!r}")
        x0, y0, x1, y1 = roi.bbox
        if not (x0 < x1 and y0 < y1):
            raise WriterError(f"roi {roi.roi_id}: degenerate bbox")
        k = (len(self.ood_class_names) if roi.split_tag == "ood"
             else len(self.class_names))
        if roi.true_label is not None and not 0 <= roi.true_label < k:
            raise WriterError(f"roi {roi.roi_id}: label {roi.true_label} "
                              f"out of range (K={k})")
        self._roi_file.write(roi.to_json() + "\n")
        self._splits[roi.split_tag] += 1

    def close(self) -> str:
        self._roi_file.close()
        extra = dict(self.extra)
        if self.ood_class_names:
            extra["ood_class_names"] = self.ood_class_names
        doc = {
            "format_version": FORMAT_VERSION,
            "dataset_name": self.dataset_name,
            "class_names": self.class_names,
            "model_name": self.model_name,
            "layer_catalog": self.layer_catalog,
            "records": {k: v for k, v in self._splits.items() if v},
            "extra": extra,
            "tensors": self._tensors,
        }
        with open(os.path.join(self.path, "manifest.json"), "w",
                  encoding="utf-8") as f:
            json.dump(doc, f, indent=1, sort_keys=True)
            f.write("\n")
        return self.path

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        if exc[0] is None:
            self.close()
        else:
            self._roi_file.close()


def validate_bundle(path: str) -> dict:
    """Re-read a written bundle and verify blobs against the manifest.

    Returns the manifest; raises WriterError on any inconsistency.  Jobs
    call this before reporting success.
    """
    try:
        with open(os.path.join(path, "manifest.json"), encoding="utf-8") as f:
            doc = json.load(f)
    except (FileNotFoundError, json.JSONDecodeError) as e:
        raise WriterError(f"{path}: unreadable manifest ({e})") from None
    if doc.get("format_version") != FORMAT_VERSION:
        raise WriterError(f"{path}: unsupported format_version")
    for name, meta in doc["tensors"].items():
        blob = os.path.join(path, name)
        try:
            with open(blob, "rb") as f:
                raw = f.read()
        except FileNotFoundError:
            raise WriterError(f"{path}: missing blob {name}") from None
        expect = 4 * meta["channels"] * meta["height"] * meta["width"]
        if len(raw) != expect:
            raise WriterError(f"{path}: blob {name} truncated")
        if zlib.crc32(raw) != meta["crc32"]:
            raise WriterError(f"{path}: blob {name} checksum mismatch")
    n_rois = 0
    with open(os.path.join(path, "rois.jsonl"), encoding="utf-8") as f:
        for line in f:
            if line.strip():
                json.loads(line)
                n_rois += 1
    if n_rois != sum(doc.get("records", {}).values()):
        raise WriterError(f"{path}: records count disagrees with rois.jsonl")
    return doc
