"""Activation-bundle storage and model persistence.

A bundle is a directory holding one JSON manifest, one little-endian
float32 blob per (image, layer) pair, and a JSON-lines table of ROI
records.  The layout is deliberately framework-neutral so that any
extraction front-end can write it with nothing but a JSON encoder and
raw array dumps.  See docs/format.md for the field-level contract.

Fitted models (embeddings, codebooks, correlation maps, score tables)
are persisted in a single-file container: one JSON header line followed
by concatenated little-endian arrays.  Writes are byte-deterministic.
"""

from __future__ import annotations

import json
import os
import zlib
from dataclasses import dataclass, field

import numpy as np

FORMAT_VERSION = 1
MODEL_MAGIC = b"SYMK"

SPLIT_TAGS = ("train", "test", "ood", "adversarial")

_ID_OK = frozenset("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_.-")


class BundleError(Exception):
    """Malformed bundle, record, or model file."""


def _check_id(name: str, what: str) -> str:
    if not name or not set(name) <= _ID_OK or name.startswith("."):
        raise BundleError(f"{what} {name!r} is not filesystem-safe "
                          "(allowed: letters, digits, '_', '.', '-')")
    return name


@dataclass(frozen=True)
class ActivationTensor:
    """One layer's C×H×W response map for one image, channel-major."""

    image_id: str
    layer_id: int
    channels: int
    height: int
    width: int
    values: np.ndarray  # float32, shape (C, H, W)

    def validate(self) -> "ActivationTensor":
        _check_id(self.image_id, "image_id")
        c, h, w = self.channels, self.height, self.width
        if min(c, h, w) < 1:
            raise BundleError(f"tensor {self.image_id}/{self.layer_id}: "
                              f"non-positive shape ({c},{h},{w})")
        if self.values.shape != (c, h, w):
            raise BundleError(f"tensor {self.image_id}/{self.layer_id}: values "
                              f"shape {self.values.shape} != ({c},{h},{w})")
        if not np.isfinite(self.values).all():
            raise BundleError(f"tensor {self.image_id}/{self.layer_id}: "
                              "non-finite value")
        return self

    @classmethod
    def from_array(cls, image_id: str, layer_id: int, values) -> "ActivationTensor":
        arr = np.ascontiguousarray(values, dtype=np.float32)
        if arr.ndim != 3:
            raise BundleError(f"tensor {image_id}/{layer_id}: expected 3-d array")
        c, h, w = arr.shape
        return cls(image_id, int(layer_id), c, h, w, arr).validate()


@dataclass(frozen=True)
class RoiRecord:
    """One detected object: box, labels, prediction metadata, split."""

    image_id: str
    roi_id: str
    bbox: tuple[float, float, float, float]  # (x0, y0, x1, y1) input pixels
    true_label: int | None
    model_prediction: int | None
    certified: bool
    split_tag: str

    def validate(self, n_classes: int | None = None,
                 input_size: tuple[int, int] | None = None,
                 n_ood_classes: int | None = None) -> "RoiRecord":
        _check_id(self.image_id, "image_id")
        _check_id(self.roi_id, "roi_id")
        x0, y0, x1, y1 = self.bbox
        if not (x0 < x1 and y0 < y1):
            raise BundleError(f"roi {self.roi_id}: degenerate bbox {self.bbox}")
        if input_size is not None:
            w, h = input_size
            if x0 < 0 or y0 < 0 or x1 > w or y1 > h:
                raise BundleError(f"roi {self.roi_id}: bbox {self.bbox} outside "
                                  f"input bounds {w}x{h}")
        if self.split_tag not in SPLIT_TAGS:
            raise BundleError(f"roi {self.roi_id}: unknown split_tag "
                              f"{self.split_tag!r}")
        # OOD labels index the bundle's separate OOD class list when present
        k = n_classes
        if self.split_tag == "ood" and n_ood_classes is not None:
            k = n_ood_classes
        if k is not None and self.true_label is not None:
            if not 0 <= self.true_label < k:
                raise BundleError(f"roi {self.roi_id}: true_label "
                                  f"{self.true_label} out of range (K={k})")
        return self

    def to_json(self) -> str:
        return json.dumps({
            "image_id": self.image_id,
            "roi_id": self.roi_id,
            "bbox": list(self.bbox),
            "true_label": self.true_label,
            "model_prediction": self.model_prediction,
            "certified": self.certified,
            "split_tag": self.split_tag,
        }, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "RoiRecord":
        d = json.loads(line)
        return cls(d["image_id"], d["roi_id"], tuple(d["bbox"]),
                   d["true_label"], d["model_prediction"],
                   bool(d["certified"]), d["split_tag"])


@dataclass
class LayerInfo:
    layer_id: int
    channels: int
    input_size: tuple[int, int]    # (W, H) of the model input
    feature_size: tuple[int, int]  # (w, h) of this layer's feature map


@dataclass
class BundleManifest:
    dataset_name: str
    class_names: list[str]
    model_name: str
    layer_catalog: list[LayerInfo]
    records: dict[str, int] = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def layer(self, layer_id: int) -> LayerInfo:
        for li in self.layer_catalog:
            if li.layer_id == layer_id:
                return li
        raise BundleError(f"layer {layer_id} not in catalog")

    def validate(self) -> "BundleManifest":
        if self.n_classes < 2:
            raise BundleError(f"manifest needs K >= 2 classes, got {self.n_classes}")
        if not self.layer_catalog:
            raise BundleError("manifest has an empty layer catalog")
        ids = [li.layer_id for li in self.layer_catalog]
        if len(set(ids)) != len(ids):
            raise BundleError("duplicate layer_id in catalog")
        return self


def _manifest_to_dict(m: BundleManifest, tensors: dict) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "dataset_name": m.dataset_name,
        "class_names": m.class_names,
        "model_name": m.model_name,
        "layer_catalog": [
            {"layer_id": li.layer_id, "channels": li.channels,
             "input_size": list(li.input_size), "feature_size": list(li.feature_size)}
            for li in m.layer_catalog
        ],
        "records": m.records,
        "extra": m.extra,
        "tensors": tensors,
    }


def _manifest_from_dict(d: dict) -> tuple[BundleManifest, dict]:
    if d.get("format_version") != FORMAT_VERSION:
        raise BundleError(f"unsupported bundle format_version "
                          f"{d.get('format_version')!r} (reader supports {FORMAT_VERSION})")
    catalog = [LayerInfo(e["layer_id"], e["channels"],
                         tuple(e["input_size"]), tuple(e["feature_size"]))
               for e in d["layer_catalog"]]
    m = BundleManifest(d["dataset_name"], list(d["class_names"]), d["model_name"],
                       catalog, dict(d.get("records", {})), dict(d.get("extra", {})))
    return m.validate(), d["tensors"]


def blob_name(image_id: str, layer_id: int) -> str:
    return f"{image_id}/{layer_id}.f32"


def write_bundle(path, manifest: BundleManifest, tensors, rois) -> str:
    """Write a bundle directory; returns the bundle path.

    `tensors` and `rois` are iterables and are consumed once, so multi-GB
    corpora can stream through without being held in memory.
    """
    manifest.validate()
    path = os.fspath(path)
    os.makedirs(path, exist_ok=True)

    catalog = {li.layer_id: li for li in manifest.layer_catalog}
    tensor_index: dict[str, dict] = {}
    for t in tensors:
        t.validate()
        li = catalog.get(t.layer_id)
        if li is None:
            raise BundleError(f"tensor {t.image_id}/{t.layer_id}: layer not in catalog")
        if t.channels != li.channels:
            raise BundleError(f"tensor {t.image_id}/{t.layer_id}: {t.channels} "
                              f"channels, catalog says {li.channels}")
        name = blob_name(t.image_id, t.layer_id)
        if name in tensor_index:
            raise BundleError(f"duplicate tensor blob {name}")
        raw = t.values.astype("<f4", copy=False).tobytes()
        blob_path = os.path.join(path, name)
        os.makedirs(os.path.dirname(blob_path), exist_ok=True)
        with open(blob_path, "wb") as f:
            f.write(raw)
        tensor_index[name] = {
            "channels": t.channels, "height": t.height, "width": t.width,
            "crc32": zlib.crc32(raw),
        }

    input_size = manifest.layer_catalog[0].input_size
    ood_names = manifest.extra.get("ood_class_names")
    n_ood = len(ood_names) if ood_names else None
    split_counts = dict.fromkeys(SPLIT_TAGS, 0)
    with open(os.path.join(path, "rois.jsonl"), "w", encoding="utf-8") as f:
        for r in rois:
            r.validate(manifest.n_classes, input_size, n_ood)
            f.write(r.to_json() + "\n")
            split_counts[r.split_tag] += 1
    manifest.records = {k: v for k, v in split_counts.items() if v}

    doc = _manifest_to_dict(manifest, tensor_index)
    with open(os.path.join(path, "manifest.json"), "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")
    return path


class TensorStore:
    """Random access to bundle blobs; loads one tensor per request.

    Safe for concurrent readers: every `get` opens, reads, and closes the
    blob independently and verifies its CRC-32 against the manifest.
    """

    def __init__(self, root: str, index: dict[str, dict]):
        self._root = root
        self._index = index

    def __contains__(self, key) -> bool:
        return blob_name(*key) in self._index

    def get(self, image_id: str, layer_id: int) -> np.ndarray:
        name = blob_name(image_id, layer_id)
        meta = self._index.get(name)
        if meta is None:
            raise BundleError(f"no tensor blob {name} in manifest")
        blob_path = os.path.join(self._root, name)
        try:
            with open(blob_path, "rb") as f:
                raw = f.read()
        except FileNotFoundError:
            raise BundleError(f"missing blob file {name}") from None
        c, h, w = meta["channels"], meta["height"], meta["width"]
        if len(raw) != 4 * c * h * w:
            raise BundleError(f"blob {name}: {len(raw)} bytes, "
                              f"manifest shape ({c},{h},{w}) needs {4 * c * h * w}")
        if zlib.crc32(raw) != meta["crc32"]:
            raise BundleError(f"blob {name}: checksum mismatch")
        return np.frombuffer(raw, dtype="<f4").reshape(c, h, w)


def read_bundle(path) -> tuple[BundleManifest, TensorStore, list[RoiRecord]]:
    path = os.fspath(path)
    try:
        with open(os.path.join(path, "manifest.json"), encoding="utf-8") as f:
            doc = json.load(f)
    except FileNotFoundError:
        raise BundleError(f"{path}: not a bundle (no manifest.json)") from None
    except json.JSONDecodeError as e:
        raise BundleError(f"{path}: corrupt manifest ({e})") from None
    manifest, tensor_index = _manifest_from_dict(doc)

    ood_names = manifest.extra.get("ood_class_names")
    n_ood = len(ood_names) if ood_names else None
    rois = []
    with open(os.path.join(path, "rois.jsonl"), encoding="utf-8") as f:
        for i, line in enumerate(f):
            if not line.strip():
                continue
            try:
                rec = RoiRecord.from_json(line)
            except (KeyError, json.JSONDecodeError) as e:
                raise BundleError(f"rois.jsonl line {i + 1}: {e}") from None
            rois.append(rec.validate(manifest.n_classes, None, n_ood))
    return manifest, TensorStore(path, tensor_index), rois


# ---------------------------------------------------------------------------
# Single-file model container
# ---------------------------------------------------------------------------
#
# Layout:  b"SYMK" + version byte + "\n" + header JSON line + array payload.
# The header maps array names to (dtype, shape, offset); offsets are into
# the payload that starts right after the header's trailing newline.

_MODEL_VERSION = 1


def _encode_arrays(arrays: dict[str, np.ndarray]) -> tuple[dict, bytes]:
    index = {}
    chunks = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        dt = arr.dtype.newbyteorder("<")
        raw = arr.astype(dt, copy=False).tobytes()
        index[name] = {"dtype": dt.str, "shape": list(arr.shape), "offset": offset}
        chunks.append(raw)
        offset += len(raw)
    return index, b"".join(chunks)


def save_model(obj, path) -> str:
    """Persist a finalized model object; `load_model` restores it exactly."""
    kind, meta, arrays = obj._to_state()
    index, payload = _encode_arrays(arrays)
    header = json.dumps({"kind": kind, "meta": meta, "arrays": index},
                        sort_keys=True, separators=(",", ":"))
    with open(os.fspath(path), "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(bytes([_MODEL_VERSION]))
        f.write(b"\n")
        f.write(header.encode("utf-8"))
        f.write(b"\n")
        f.write(payload)
    return os.fspath(path)


def load_model(path):
    with open(os.fspath(path), "rb") as f:
        magic = f.read(4)
        if magic != MODEL_MAGIC:
            raise BundleError(f"{path}: not a model file (bad magic)")
        version = f.read(2)
        if len(version) != 2 or version[1:] != b"\n":
            raise BundleError(f"{path}: truncated model header")
        if version[0] != _MODEL_VERSION:
            raise BundleError(f"{path}: model format version {version[0]} "
                              f"not supported (reader supports {_MODEL_VERSION})")
        header_line = f.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            raise BundleError(f"{path}: corrupt model header") from None
        payload = f.read()

    arrays = {}
    for name, spec in header["arrays"].items():
        dt = np.dtype(spec["dtype"])
        shape = tuple(spec["shape"])
        n = dt.itemsize * int(np.prod(shape, dtype=np.int64)) if shape else dt.itemsize
        start = spec["offset"]
        if start + n > len(payload):
            raise BundleError(f"{path}: truncated payload for array {name!r}")
        arrays[name] = np.frombuffer(payload[start:start + n], dtype=dt).reshape(shape)

    kind = header.get("kind")
    cls = _MODEL_KINDS.get(kind)
    if cls is None:
        raise BundleError(f"{path}: unknown model kind {kind!r}")
    return cls._from_state(header["meta"], arrays)


_MODEL_KINDS: dict[str, type] = {}


def register_model(kind: str):
    """Class decorator wiring `_to_state`/`_from_state` into load_model."""
    def wrap(cls):
        cls._model_kind = kind
        _MODEL_KINDS[kind] = cls
        return cls
    return wrap
