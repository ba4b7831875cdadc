"""Synthetic activation bundles with planted cluster structure.

Each class owns a few Gaussian clusters in activation space, per layer.
An ROI's nine grid positions draw from its class's clusters, the 3x3
grid is upsampled to the layer's feature-map size by block repetition
(so max pooling recovers the planted vectors exactly), and everything is
written through the normal bundle writer.  Because the generator knows
the planted structure, pipelines run on its bundles have a ground-truth
oracle for free.

Corruption knobs exist to emulate the failure modes the scoring side is
supposed to detect: ROIs whose activations are replaced by class-free
noise (model errors), ROIs drawn from held-out class clusters (OOD), and
ROIs whose recorded model decision is manipulated (adversarial).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .roipool import GRID, N_POSITIONS
from .tensorio import (
    ActivationTensor,
    BundleManifest,
    LayerInfo,
    RoiRecord,
    write_bundle,
)


@dataclass
class SynthSpec:
    classes: int = 30
    rois_per_class: int = 60
    clusters_per_class: int = 3
    channels: int = 64
    sigma: float = 0.05
    layers: list[int] = field(default_factory=lambda: [1])
    test_fraction: float = 0.25
    ood_classes: int = 0
    ood_rois_per_class: int = 0
    adv_rois_per_class: int = 0
    adv_out_of_set_fraction: float = 0.0
    model_error_rate: float = 0.0
    shuffle_train_labels: bool = False
    feature_size: int = 6
    input_size: int = 96
    seed: int = 0

    def validate(self) -> "SynthSpec":
        if self.classes < 2:
            raise ValueError("need at least 2 classes")
        if self.feature_size % GRID:
            raise ValueError("feature_size must be a multiple of 3 so pooling "
                             "recovers the planted vectors")
        if not 0.0 <= self.test_fraction < 1.0:
            raise ValueError("test_fraction must be in [0, 1)")
        if self.ood_classes and self.ood_rois_per_class < 2:
            raise ValueError("ood_rois_per_class must be >= 2 when ood_classes > 0")
        return self


def _draw_vectors(rng, centers, sigma):
    """Nine position vectors for one ROI from one class's cluster set."""
    picks = rng.integers(len(centers), size=N_POSITIONS)
    return centers[picks] + sigma * rng.standard_normal((N_POSITIONS, centers.shape[1]))


def _noise_vectors(rng, channels):
    return rng.uniform(0.2, 1.0, size=(N_POSITIONS, channels))


def _grid_to_tensor(vectors, feature_size):
    """Block-repeat the 3x3xC grid up to feature_size; max pooling of any
    aligned box recovers the planted grid verbatim."""
    reps = feature_size // GRID
    grid = vectors.reshape(GRID, GRID, -1).transpose(2, 0, 1)  # C x 3 x 3
    return np.repeat(np.repeat(grid, reps, axis=1), reps, axis=2)


def generate_bundle(spec: SynthSpec, path) -> str:
    """Write a planted bundle to `path`; returns the path."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    k = spec.classes
    class_names = [f"class{c:03d}" for c in range(k)]
    ood_names = [f"ood{c:03d}" for c in range(spec.ood_classes)]

    # per (layer, class or ood class): clusters_per_class centers
    centers = {
        (layer, kind, c): rng.uniform(0.2, 1.0,
                                      size=(spec.clusters_per_class, spec.channels))
        for layer in spec.layers
        for kind, count in (("class", k), ("ood", spec.ood_classes))
        for c in range(count)
    }

    n_test = round(spec.rois_per_class * spec.test_fraction)
    n_train = spec.rois_per_class - n_test

    plan = []  # (split, kind, class index)
    for c in range(k):
        plan += [("train", "class", c)] * n_train
        plan += [("test", "class", c)] * n_test
        plan += [("adversarial", "class", c)] * spec.adv_rois_per_class
    for c in range(spec.ood_classes):
        plan += [("ood", "ood", c)] * spec.ood_rois_per_class

    records, corrupted, tensors = [], [], []
    for i, (split, kind, c) in enumerate(plan):
        image_id = f"img{i:06d}"
        roi_id = f"{image_id}_r0"
        margin = 1.0
        bbox = (margin, margin, spec.input_size - margin, spec.input_size - margin)

        true_label = c  # OOD labels index the manifest's ood_class_names list
        is_corrupt = (kind == "class"
                      and rng.random() < spec.model_error_rate)
        if is_corrupt:
            corrupted.append(roi_id)

        if kind == "class" and not is_corrupt:
            prediction = c
        elif kind == "class":
            prediction = int((c + 1 + rng.integers(k - 1)) % k)
        else:
            prediction = int(rng.integers(k))  # OOD: model guesses blindly

        if split == "adversarial":
            if rng.random() < spec.adv_out_of_set_fraction:
                prediction = k + int(rng.integers(100))  # outside the class set
            else:
                prediction = int((c + 1 + rng.integers(k - 1)) % k)

        for layer in spec.layers:
            if is_corrupt:
                vecs = _noise_vectors(rng, spec.channels)
            else:
                vecs = _draw_vectors(rng, centers[(layer, kind, c)], spec.sigma)
            tensors.append(ActivationTensor.from_array(
                image_id, layer, _grid_to_tensor(vecs, spec.feature_size)))

        records.append(RoiRecord(image_id, roi_id, bbox, true_label,
                                 prediction, True, split))

    if spec.shuffle_train_labels:
        train_idx = [i for i, r in enumerate(records) if r.split_tag == "train"]
        shuffled = rng.permutation([records[i].true_label for i in train_idx])
        for i, lab in zip(train_idx, shuffled):
            r = records[i]
            records[i] = RoiRecord(r.image_id, r.roi_id, r.bbox, int(lab),
                                   r.model_prediction, r.certified, r.split_tag)

    manifest = BundleManifest(
        dataset_name="synthetic-planted",
        class_names=class_names,
        model_name="synthetic",
        layer_catalog=[
            LayerInfo(layer, spec.channels,
                      (spec.input_size, spec.input_size),
                      (spec.feature_size, spec.feature_size))
            for layer in spec.layers
        ],
        extra={"generator": asdict(spec),
               "ood_class_names": ood_names,
               "corrupted_rois": corrupted},
    )
    return write_bundle(path, manifest, iter(tensors), iter(records))
