"""ROI projection, 3x3 max pooling, and activity-vector assembly.

Every ROI, whatever its pixel size, is reduced to a 3x3 grid of pooled
activations per channel.  The nine grid positions are then read out
across channels as nine C-dimensional activity vectors.  A per-layer
mean-activity filter drops vectors whose components are all below the
layer's scalar mean activation; the mean is estimated on the training
corpus once and reused unchanged afterwards.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .tensorio import ActivationTensor, BundleError

GRID = 3  # pooled output is always GRID x GRID
N_POSITIONS = GRID * GRID


@dataclass(frozen=True)
class FeatureBox:
    """Half-open cell-coordinate box on a feature map: [c0,c1) x [r0,r1)."""

    col0: int
    row0: int
    col1: int
    row1: int

    @property
    def width(self) -> int:
        return self.col1 - self.col0

    @property
    def height(self) -> int:
        return self.row1 - self.row0


@dataclass(frozen=True)
class PooledRoi:
    roi_id: str
    layer_id: int
    grid: np.ndarray  # (GRID, GRID, C)


def project_roi(bbox, input_size, feature_size) -> FeatureBox:
    """Map a pixel box onto feature-map cells.

    The box is scaled by (w/W, h/H), outer-rounded (floor mins, ceil
    maxes), clamped, and widened to at least 3 cells per axis when the
    feature map has room.  A 1x1 feature map yields the single cell.
    """
    x0, y0, x1, y1 = bbox
    in_w, in_h = input_size
    fw, fh = feature_size
    if fw < 1 or fh < 1:
        raise ValueError(f"feature map must be at least 1x1, got {fw}x{fh}")
    if not (0 <= x0 < x1 <= in_w and 0 <= y0 < y1 <= in_h):
        raise ValueError(f"bbox {bbox} outside input bounds {in_w}x{in_h}")

    def axis(lo: float, hi: float, scale: float, n: int) -> tuple[int, int]:
        a = max(0, int(np.floor(lo * scale)))
        b = min(n, int(np.ceil(hi * scale)))
        if b <= a:  # fully collapsed after rounding
            a = min(a, n - 1)
            b = a + 1
        if b - a < GRID <= n:
            # slide a GRID-cell window centered on the box, kept in bounds
            start = min(max((a + b) // 2 - 1, 0), n - GRID)
            a, b = start, start + GRID
        return a, b

    c0, c1 = axis(x0, x1, fw / in_w, fw)
    r0, r1 = axis(y0, y1, fh / in_h, fh)
    return FeatureBox(c0, r0, c1, r1)


def _bin_edges(extent: int) -> list[tuple[int, int]]:
    # bin i spans [floor(i*extent/3), ceil((i+1)*extent/3)); bins overlap
    # rather than leave gaps when extent is not a multiple of 3, and
    # duplicate cells when extent < 3
    edges = []
    for i in range(GRID):
        lo = (i * extent) // GRID
        hi = -((-(i + 1) * extent) // GRID)  # ceil division
        edges.append((lo, max(hi, lo + 1)))
    return edges


def roi_pool(tensor: ActivationTensor, fbox: FeatureBox) -> PooledRoi:
    """Max-pool the boxed region into a 3x3xC grid (Fast R-CNN binning)."""
    c, h, w = tensor.channels, tensor.height, tensor.width
    if not (0 <= fbox.col0 < fbox.col1 <= w and 0 <= fbox.row0 < fbox.row1 <= h):
        raise ValueError(f"feature box {fbox} outside tensor {h}x{w}")
    region = tensor.values[:, fbox.row0:fbox.row1, fbox.col0:fbox.col1]
    grid = np.empty((GRID, GRID, c), dtype=np.float64)
    rows = _bin_edges(fbox.height)
    cols = _bin_edges(fbox.width)
    for i, (r0, r1) in enumerate(rows):
        for j, (c0, c1) in enumerate(cols):
            grid[i, j, :] = region[:, r0:r1, c0:c1].max(axis=(1, 2))
    return PooledRoi("", tensor.layer_id, grid)


def pool_roi_from_tensor(tensor: ActivationTensor, roi_id: str, bbox,
                         input_size) -> PooledRoi:
    fbox = project_roi(bbox, input_size, (tensor.width, tensor.height))
    pooled = roi_pool(tensor, fbox)
    return PooledRoi(roi_id, tensor.layer_id, pooled.grid)


def assemble_vectors(pooled: PooledRoi) -> np.ndarray:
    """Read the grid out as 9 activity vectors, positions row-major.

    Row p of the result is grid[p // 3, p % 3, :]; the operation is a
    reshape and therefore lossless.
    """
    c = pooled.grid.shape[2]
    return pooled.grid.reshape(N_POSITIONS, c)


def grid_from_vectors(vectors: np.ndarray) -> np.ndarray:
    """Inverse of assemble_vectors."""
    return vectors.reshape(GRID, GRID, -1)


def layer_mean_activity(vectors: np.ndarray) -> float:
    """Arithmetic mean over every component of every vector of a layer."""
    if vectors.size == 0:
        raise ValueError("cannot estimate a layer mean from zero vectors")
    return float(np.mean(vectors))


def retained_mask(vectors: np.ndarray, layer_mean: float) -> np.ndarray:
    """True where a vector survives the filter.

    A vector is removed iff every component is strictly below the layer
    mean, so anything with at least one strong activation is kept.
    """
    return ~(vectors < layer_mean).all(axis=1)


def mean_activity_filter(vectors: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Filter a layer's training vectors against their own mean activity.

    Returns (retained vectors in stable order, boolean mask, layer mean).
    The mean must be stored and reused for any later filtering so that
    test-time statistics never leak into it.
    """
    mean = layer_mean_activity(vectors)
    mask = retained_mask(vectors, mean)
    if not mask.any():
        raise ValueError("all vectors filtered: every component of every "
                         "vector is below the layer mean")
    return vectors[mask], mask, mean


# ---------------------------------------------------------------------------
# On-disk activity-vector table: layer<k>/vectors.f32 + index.jsonl + meta.json
# ---------------------------------------------------------------------------

@dataclass
class VectorTable:
    """All activity vectors of one layer, 9 consecutive rows per ROI."""

    layer_id: int
    vectors: np.ndarray        # (n_rois * 9, C) float32
    roi_ids: list[str]         # per ROI, in row order
    split_tags: list[str]      # per ROI
    layer_mean: float          # train-corpus mean activity
    retained: np.ndarray       # per row, filter verdict under layer_mean

    @property
    def n_rois(self) -> int:
        return len(self.roi_ids)

    def rows_of(self, roi_index: int) -> slice:
        return slice(roi_index * N_POSITIONS, (roi_index + 1) * N_POSITIONS)

    def split_indices(self, split_tag: str) -> np.ndarray:
        return np.flatnonzero(np.asarray(self.split_tags) == np.asarray(split_tag))


def write_vector_table(root, table: VectorTable) -> str:
    d = os.path.join(os.fspath(root), f"layer{table.layer_id}")
    os.makedirs(d, exist_ok=True)
    with open(os.path.join(d, "vectors.f32"), "wb") as f:
        f.write(table.vectors.astype("<f4", copy=False).tobytes())
    with open(os.path.join(d, "index.jsonl"), "w", encoding="utf-8") as f:
        for i, (roi_id, tag) in enumerate(zip(table.roi_ids, table.split_tags)):
            for p in range(N_POSITIONS):
                f.write(json.dumps({
                    "roi_id": roi_id, "position": p + 1, "split_tag": tag,
                    "retained": bool(table.retained[i * N_POSITIONS + p]),
                }, sort_keys=True) + "\n")
    with open(os.path.join(d, "meta.json"), "w", encoding="utf-8") as f:
        json.dump({"layer_id": table.layer_id,
                   "channels": int(table.vectors.shape[1]),
                   "rows": int(table.vectors.shape[0]),
                   "layer_mean": table.layer_mean}, f, sort_keys=True)
        f.write("\n")
    return d


def read_vector_table(root, layer_id: int) -> VectorTable:
    d = os.path.join(os.fspath(root), f"layer{layer_id}")
    try:
        with open(os.path.join(d, "meta.json"), encoding="utf-8") as f:
            meta = json.load(f)
    except FileNotFoundError:
        raise BundleError(f"no vector table for layer {layer_id} under {root}") from None
    rows, channels = meta["rows"], meta["channels"]
    with open(os.path.join(d, "vectors.f32"), "rb") as f:
        raw = f.read()
    if len(raw) != rows * channels * 4:
        raise BundleError(f"layer {layer_id} vectors.f32 truncated")
    vectors = np.frombuffer(raw, dtype="<f4").reshape(rows, channels)

    roi_ids, split_tags, retained = [], [], np.empty(rows, dtype=bool)
    with open(os.path.join(d, "index.jsonl"), encoding="utf-8") as f:
        for row, line in enumerate(f):
            e = json.loads(line)
            retained[row] = e["retained"]
            if e["position"] == 1:
                roi_ids.append(e["roi_id"])
                split_tags.append(e["split_tag"])
    if len(roi_ids) * N_POSITIONS != rows:
        raise BundleError(f"layer {layer_id} index.jsonl row count mismatch")
    return VectorTable(layer_id, vectors, roi_ids, split_tags,
                       meta["layer_mean"], retained)


def pool_bundle_layer(manifest, store, rois, layer_id: int) -> VectorTable:
    """Pool every ROI of a bundle through one layer into a VectorTable.

    The layer mean is estimated from training-split vectors only; the
    retained mask is evaluated for all splits with that stored mean.
    """
    info = manifest.layer(layer_id)
    rows = []
    roi_ids, split_tags = [], []
    for r in rois:
        tensor = ActivationTensor.from_array(
            r.image_id, layer_id, store.get(r.image_id, layer_id))
        pooled = pool_roi_from_tensor(tensor, r.roi_id, r.bbox, info.input_size)
        rows.append(assemble_vectors(pooled))
        roi_ids.append(r.roi_id)
        split_tags.append(r.split_tag)
    if not rows:
        raise BundleError("bundle has no ROI records to pool")
    vectors = np.concatenate(rows, axis=0).astype(np.float32)

    train_rows = np.repeat(np.asarray(split_tags) == "train", N_POSITIONS)
    if not train_rows.any():
        raise BundleError("bundle has no training ROIs; cannot fix the layer mean")
    mean = layer_mean_activity(vectors[train_rows])
    mask = retained_mask(vectors, mean)
    if not mask[train_rows].any():
        raise ValueError("all vectors filtered: every component of every "
                         "training vector is below the layer mean")
    return VectorTable(layer_id, vectors, roi_ids, split_tags, mean, mask)
