"""Bundle writing and self-validation."""

import json

import numpy as np
import pytest

from extractor.writer import BundleWriter, Roi, WriterError, validate_bundle

CATALOG = [{"layer_id": 1, "channels": 2, "input_size": [16, 16],
            "feature_size": [4, 4]}]


def _writer(path, **kw):
    args = dict(path=str(path), dataset_name="d", class_names=["a", "b"],
                model_name="m", layer_catalog=CATALOG)
    args.update(kw)
    return BundleWriter(**args)


def test_write_and_validate(tmp_path):
    with _writer(tmp_path / "b") as w:
        w.add_tensor("img0", 1, np.ones((2, 4, 4)))
        w.add_roi(Roi("img0", "img0_r0", (0, 0, 8, 8), 0, 1, True, "train"))
    doc = validate_bundle(str(tmp_path / "b"))
    assert doc["records"] == {"train": 1}
    assert doc["tensors"]["img0/1.f32"]["crc32"] > 0


def test_duplicate_tensor_rejected(tmp_path):
    w = _writer(tmp_path / "b")
    w.add_tensor("img0", 1, np.ones((2, 4, 4)))
    with pytest.raises(WriterError, match="duplicate"):
        w.add_tensor("img0", 1, np.ones((2, 4, 4)))


def test_channel_mismatch_rejected(tmp_path):
    w = _writer(tmp_path / "b")
    with pytest.raises(WriterError, match="channels"):
        w.add_tensor("img0", 1, np.ones((3, 4, 4)))


def test_non_finite_rejected(tmp_path):
    w = _writer(tmp_path / "b")
    bad = np.ones((2, 4, 4))
    bad[0, 0, 0] = np.inf
    with pytest.raises(WriterError, match="non-finite"):
        w.add_tensor("img0", 1, bad)


def test_label_range_split_aware(tmp_path):
    w = _writer(tmp_path / "b", ood_class_names=["x", "y", "z"])
    w.add_roi(Roi("i", "r1", (0, 0, 4, 4), 2, None, False, "ood"))  # ood K=3
    with pytest.raises(WriterError, match="out of range"):
        w.add_roi(Roi("i", "r2", (0, 0, 4, 4), 2, None, False, "train"))


def test_validate_detects_truncation(tmp_path):
    with _writer(tmp_path / "b") as w:
        w.add_tensor("img0", 1, np.ones((2, 4, 4)))
    blob = tmp_path / "b" / "img0" / "1.f32"
    blob.write_bytes(blob.read_bytes()[:-4])
    with pytest.raises(WriterError, match="truncated"):
        validate_bundle(str(tmp_path / "b"))


def test_validate_detects_corruption(tmp_path):
    with _writer(tmp_path / "b") as w:
        w.add_tensor("img0", 1, np.ones((2, 4, 4)))
    blob = tmp_path / "b" / "img0" / "1.f32"
    raw = bytearray(blob.read_bytes())
    raw[0] ^= 0x55
    blob.write_bytes(bytes(raw))
    with pytest.raises(WriterError, match="checksum"):
        validate_bundle(str(tmp_path / "b"))


def test_manifest_shape(tmp_path):
    with _writer(tmp_path / "b", ood_class_names=["q", "r"]) as w:
        w.add_roi(Roi("i", "r0", (0, 0, 4, 4), 1, 5, False, "ood"))
    doc = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert doc["format_version"] == 1
    assert doc["extra"]["ood_class_names"] == ["q", "r"]
    assert doc["class_names"] == ["a", "b"]
