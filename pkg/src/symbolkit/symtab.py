"""Symbol-class correlation maps and everything inferred from them.

A correlation map counts how often each symbol co-occurs with each class
label over the training ROIs (9 increments per ROI, one per grid
position).  Row-wise softmax over the raw counts turns a symbol into a
class distribution; averaging the nine distributions of an ROI gives its
class probabilities, the argmax gives the symbol-based prediction, and
the probability at a chosen class is the expected symbol score (ESS).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .roipool import N_POSITIONS
from .tensorio import register_model

CLASS_SOURCES = ("true_label", "layer4_prediction", "model_decision")


@register_model("correlation_map")
@dataclass
class CorrelationMap:
    """Append-only S x K co-occurrence counts."""

    layer_id: int
    counts: np.ndarray  # (S, K) int64
    class_names: list[str]

    @property
    def n_symbols(self) -> int:
        return self.counts.shape[0]

    @property
    def n_classes(self) -> int:
        return self.counts.shape[1]

    def _to_state(self):
        meta = {"layer_id": self.layer_id, "class_names": self.class_names}
        return "correlation_map", meta, {"counts": self.counts.astype("<i8")}

    @classmethod
    def _from_state(cls, meta, arrays):
        return cls(meta["layer_id"], np.asarray(arrays["counts"], dtype=np.int64),
                   list(meta["class_names"]))


@dataclass
class NormalizedMap:
    """Row-stochastic softmax view of a correlation map."""

    layer_id: int
    probs: np.ndarray  # (S, K) float64, rows sum to 1

    @property
    def n_symbols(self) -> int:
        return self.probs.shape[0]

    @property
    def n_classes(self) -> int:
        return self.probs.shape[1]


def build_cm(symbols, labels, n_symbols: int, n_classes: int,
             class_names: list[str] | None = None,
             layer_id: int = 0) -> CorrelationMap:
    """Count (symbol, label) co-occurrences over training ROIs.

    `symbols` is (n_rois, 9); each row pairs with one label. The result
    does not depend on ROI order.
    """
    symbols = np.asarray(symbols, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if symbols.ndim != 2 or symbols.shape[1] != N_POSITIONS:
        raise ValueError(f"expected (n_rois, {N_POSITIONS}) symbol ids, "
                         f"got {symbols.shape}")
    if len(labels) != len(symbols):
        raise ValueError("one label per ROI required")
    if symbols.size and (symbols.min() < 0 or symbols.max() >= n_symbols):
        bad = int(np.abs(symbols).max())
        raise ValueError(f"symbol id {bad} out of range (S={n_symbols})")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"label {int(labels.max())} out of range (K={n_classes})")

    counts = np.zeros((n_symbols, n_classes), dtype=np.int64)
    np.add.at(counts, (symbols.ravel(), np.repeat(labels, N_POSITIONS)), 1)
    if class_names is None:
        class_names = [str(j) for j in range(n_classes)]
    return CorrelationMap(layer_id, counts, list(class_names))


def fold_cm(cm: CorrelationMap, symbols, labels) -> CorrelationMap:
    """Increment an existing map with more ROIs (counts only ever grow)."""
    extra = build_cm(symbols, labels, cm.n_symbols, cm.n_classes,
                     cm.class_names, cm.layer_id)
    return CorrelationMap(cm.layer_id, cm.counts + extra.counts, cm.class_names)


def normalize_cm(cm: CorrelationMap) -> NormalizedMap:
    """Row-wise softmax over raw counts, stabilized by the row max.

    An all-zero row softmaxes to the uniform distribution, so unseen
    symbols contribute exactly 1/K to every class.
    """
    counts = cm.counts.astype(np.float64)
    shifted = counts - counts.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=1, keepdims=True)
    return NormalizedMap(cm.layer_id, probs)


def roi_class_probs(p: NormalizedMap, symbols) -> np.ndarray:
    """Mean of the 9 symbol rows: the ROI's class-probability vector."""
    symbols = np.asarray(symbols, dtype=np.int64)
    if symbols.shape[-1] != N_POSITIONS:
        raise ValueError(f"an ROI carries {N_POSITIONS} symbols, "
                         f"got shape {symbols.shape}")
    return p.probs[symbols].mean(axis=-2)


def predict_roi(p: NormalizedMap, symbols) -> tuple[int, np.ndarray]:
    """Most probable class for one ROI (ties to the lowest index)."""
    probs = roi_class_probs(p, np.asarray(symbols).reshape(N_POSITIONS))
    return int(np.argmax(probs)), probs


def predict_rois(p: NormalizedMap, symbols) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized predict_roi over (n_rois, 9) symbol rows."""
    probs = roi_class_probs(p, np.asarray(symbols, dtype=np.int64))
    return np.argmax(probs, axis=1), probs


def ess(p: NormalizedMap, symbols, class_j: int) -> float:
    """Expected symbol score: mean probability of class j over the ROI's
    nine symbols.  Identical to the prediction probability at j."""
    if not 0 <= class_j < p.n_classes:
        raise ValueError(f"class {class_j} out of range (K={p.n_classes})")
    probs = roi_class_probs(p, np.asarray(symbols).reshape(N_POSITIONS))
    return float(probs[class_j])


@dataclass
class EssProfile:
    roi_id: str
    class_source: str
    resolved_class: int
    per_layer: dict[int, float]
    norm: float


@register_model("ess_table")
@dataclass
class EssTable:
    """Persistable per-ROI score table (one row per profiled ROI)."""

    class_source: str
    split_tag: str
    layers: list[int]
    roi_ids: list[str]
    resolved: np.ndarray  # (n,) int64 resolved class per ROI
    scores: np.ndarray    # (n, len(layers)) per-layer ESS
    norms: np.ndarray     # (n,)

    @classmethod
    def from_profiles(cls, profiles: "ProfileSet", split_tag: str,
                      layers: list[int]) -> "EssTable":
        rows = profiles.profiles
        return cls(
            class_source=rows[0].class_source if rows else "true_label",
            split_tag=split_tag, layers=list(layers),
            roi_ids=[p.roi_id for p in rows],
            resolved=np.array([p.resolved_class for p in rows], dtype=np.int64),
            scores=np.array([[p.per_layer[l] for l in layers] for p in rows],
                            dtype=np.float64).reshape(len(rows), len(layers)),
            norms=np.array([p.norm for p in rows], dtype=np.float64))

    def _to_state(self):
        meta = {"class_source": self.class_source, "split_tag": self.split_tag,
                "layers": self.layers, "roi_ids": self.roi_ids}
        return "ess_table", meta, {
            "resolved": self.resolved.astype("<i8"),
            "scores": self.scores.astype("<f8"),
            "norms": self.norms.astype("<f8"),
        }

    @classmethod
    def _from_state(cls, meta, arrays):
        return cls(meta["class_source"], meta["split_tag"],
                   list(meta["layers"]), list(meta["roi_ids"]),
                   np.asarray(arrays["resolved"], dtype=np.int64),
                   np.asarray(arrays["scores"], dtype=np.float64),
                   np.asarray(arrays["norms"], dtype=np.float64))


@dataclass
class ProfileSet:
    """ESS profiles for a batch of ROIs plus the exclusion tally for
    model decisions that fall outside the class set."""

    profiles: list[EssProfile]
    excluded_rois: list[str] = field(default_factory=list)

    @property
    def n_excluded(self) -> int:
        return len(self.excluded_rois)

    def norms(self) -> np.ndarray:
        return np.array([p.norm for p in self.profiles])

    def layer_scores(self, layer_id: int) -> np.ndarray:
        return np.array([p.per_layer[layer_id] for p in self.profiles])


def resolve_classes(class_source: str, n_classes: int,
                    true_labels=None, model_predictions=None,
                    deepest_layer_probs: np.ndarray | None = None) -> np.ndarray:
    """Per-ROI class index j used for ESS, or -1 where unresolvable.

    layer4_prediction derives j from the deepest analyzed layer's
    symbol-based class probabilities; model_decision takes the network's
    own output and marks out-of-set decisions for exclusion.
    """
    if class_source not in CLASS_SOURCES:
        raise ValueError(f"unknown class_source {class_source!r}")
    if class_source == "true_label":
        labels = np.asarray([-1 if v is None else v for v in true_labels],
                            dtype=np.int64)
    elif class_source == "layer4_prediction":
        if deepest_layer_probs is None:
            raise ValueError("layer4_prediction needs the deepest layer's "
                             "probability matrix")
        labels = np.argmax(deepest_layer_probs, axis=1).astype(np.int64)
    else:
        labels = np.asarray([-1 if v is None else v for v in model_predictions],
                            dtype=np.int64)
    labels[(labels < 0) | (labels >= n_classes)] = -1
    return labels


def ess_profiles(layer_maps: dict[int, NormalizedMap],
                 layer_symbols: dict[int, np.ndarray],
                 roi_ids: list[str], class_source: str,
                 true_labels=None, model_predictions=None,
                 layers: list[int] | None = None) -> ProfileSet:
    """ESS per requested layer at one resolved class j per ROI, plus the
    Euclidean norm over the requested layers."""
    if layers is None:
        layers = sorted(layer_maps)
    missing = [l for l in layers if l not in layer_maps]
    if missing:
        raise ValueError(f"no normalized map for layers {missing}")
    n_classes = layer_maps[layers[0]].n_classes
    deepest = max(layer_maps)
    probs_by_layer = {l: roi_class_probs(layer_maps[l],
                                         np.asarray(layer_symbols[l], dtype=np.int64))
                      for l in sorted(set(layers) | {deepest})}
    resolved = resolve_classes(class_source, n_classes, true_labels,
                               model_predictions, probs_by_layer[deepest])

    profiles, excluded = [], []
    for i, roi_id in enumerate(roi_ids):
        j = int(resolved[i])
        if j < 0:
            excluded.append(roi_id)
            continue
        per_layer = {l: float(probs_by_layer[l][i, j]) for l in layers}
        norm = float(np.sqrt(sum(v * v for v in per_layer.values())))
        profiles.append(EssProfile(roi_id, class_source, j, per_layer, norm))
    return ProfileSet(profiles, excluded)


def temporary_learning_trial(symbols, labels, n_classes: int, seed: int
                             ) -> float:
    """One resampled stop-gap learning run over out-of-distribution ROIs.

    Half the ROIs (random, seeded) build a fresh correlation map against
    the OOD class set; the rest are predicted from it.  Returns the test
    accuracy.  Classes missing from the train half simply keep zero
    columns.
    """
    symbols = np.asarray(symbols, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    class_counts = np.bincount(labels, minlength=n_classes)
    if (class_counts < 2).any():
        lacking = int(np.argmin(class_counts))
        raise ValueError(f"temporary learning needs >= 2 ROIs per class; "
                         f"class {lacking} has {class_counts[lacking]}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(labels))
    half = len(labels) // 2
    train, test = order[:half], order[half:]

    cm = build_cm(symbols[train], labels[train],
                  n_symbols=int(symbols.max()) + 1, n_classes=n_classes)
    preds, _ = predict_rois(normalize_cm(cm), symbols[test])
    return float(np.mean(preds == labels[test]))


def temporary_learning(symbols, labels, n_classes: int, resamples: int,
                       seed: int) -> np.ndarray:
    """Accuracy of `resamples` independent split-and-relearn trials."""
    return np.array([
        temporary_learning_trial(symbols, labels, n_classes, seed + t)
        for t in range(resamples)
    ])
