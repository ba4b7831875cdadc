"""Extraction jobs: images -> hooked activations + certified ROIs -> bundle."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import datasets, models, stcert
from .writer import BundleWriter, Roi, validate_bundle

log = logging.getLogger("extractor")


@dataclass
class ExtractionJob:
    model: str                    # family name, "fixture", or "tiny-random"
    dataset: str                  # dataset spec string
    out_bundle: str
    split: str = "train"          # split tag stamped on emitted ROIs
    per_class: int = 200
    seed: int = 0
    weights: str | None = None    # passed to torchvision when set
    certify: bool = True          # False: detector-only (OOD/adversarial mode)
    prompt_source: str = "label"  # "label" or "prediction" for the detector
    require_correct: bool | None = None  # default: split == "train"

    def resolved_require_correct(self) -> bool:
        if self.require_correct is None:
            return self.split == "train"
        return self.require_correct


@dataclass
class ExtractionStats:
    n_images: int = 0
    n_skipped_incorrect: int = 0
    n_rois: int = 0
    images_without_rois: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"n_images": self.n_images,
                "n_skipped_incorrect": self.n_skipped_incorrect,
                "n_rois": self.n_rois,
                "n_images_without_rois": len(self.images_without_rois)}


def build_adapter(job: ExtractionJob) -> models.ModelAdapter:
    if job.model == "fixture":
        return models.fixture_adapter()
    if job.model == "tiny-random":
        return models.seeded_random_adapter(seed=job.seed)
    return models.load_adapter(job.model, weights=job.weights)


def default_detector(dataset: datasets.Dataset) -> stcert.BoxDetector:
    hints = {s.image_id: s.bbox_hint for s in dataset.samples
             if s.bbox_hint is not None}
    if hints:
        return stcert.SidecarDetector(hints)
    raise ValueError("dataset carries no box hints; supply a BoxDetector "
                     "(e.g. GroundingDinoDetector) explicitly")


def _scale_box(bbox, image_shape, input_size: int):
    h, w = image_shape[:2]
    sx, sy = input_size / w, input_size / h
    x0, y0, x1, y1 = bbox
    return (x0 * sx, y0 * sy, x1 * sx, y1 * sy)


def extract(job: ExtractionJob,
            adapter: models.ModelAdapter | None = None,
            detector: stcert.BoxDetector | None = None,
            dataset: datasets.Dataset | None = None,
            images_override: dict[str, np.ndarray] | None = None,
            writer: BundleWriter | None = None) -> ExtractionStats:
    """Run one extraction job and write (or extend) a bundle.

    `images_override` substitutes pixel data by image_id (used by the
    adversarial path, which re-extracts perturbed copies of clean
    images); everything else comes from the dataset.
    """
    if dataset is None:
        dataset = datasets.resolve(job.dataset)
    rng = np.random.default_rng(job.seed)
    dataset = dataset.per_class(job.per_class, rng)
    own_adapter = adapter is None
    if adapter is None:
        adapter = build_adapter(job)
    if detector is None:
        detector = default_detector(dataset)

    catalog = adapter.layer_catalog(dataset.samples[0].image.astype(np.float32)
                                    / 255.0)

    own_writer = writer is None
    if writer is None:
        writer = BundleWriter(
            path=job.out_bundle, dataset_name=dataset.name,
            class_names=(dataset.class_names if job.split != "ood"
                         else [f"class{c:04d}"
                               for c in range(adapter.n_outputs)]),
            model_name=adapter.name, layer_catalog=catalog,
            ood_class_names=dataset.class_names if job.split == "ood" else [],
            extra={"job": {"model": job.model, "dataset": job.dataset,
                           "split": job.split, "seed": job.seed,
                           "per_class": job.per_class,
                           "enlargement_factors": list(stcert.ENLARGEMENT_FACTORS)}})

    stats = ExtractionStats()
    require_correct = job.resolved_require_correct()
    for sample in dataset.samples:
        image = sample.image
        if images_override is not None:
            if sample.image_id not in images_override:
                continue
            image = images_override[sample.image_id]
        if image.dtype != np.uint8:
            image = np.clip(image, 0, 1).astype(np.float32)
        stats.n_images += 1

        float_img = image.astype(np.float32) / 255.0 if image.dtype == np.uint8 \
            else image
        prediction = int(adapter.predict(float_img[None])[0])
        if require_correct and prediction != sample.label:
            stats.n_skipped_incorrect += 1
            continue

        if job.prompt_source == "prediction" and prediction < len(dataset.class_names):
            prompt = dataset.class_names[prediction]
        else:
            prompt = dataset.class_names[sample.label]

        if job.certify:
            boxes = stcert.stcert_rois(image, prompt, prediction, detector,
                                       adapter.predict_crops, sample.image_id)
            bboxes = [(b.bbox, True) for b in boxes]
        else:
            bboxes = [(tuple(map(float, b)), False)
                      for b in detector.detect(image, prompt, sample.image_id)]

        if not bboxes:
            stats.images_without_rois.append(sample.image_id)
            log.info("no ROI for image %s", sample.image_id)
            continue

        _, features = adapter.capture(float_img[None])
        for layer_id in sorted(features):
            writer.add_tensor(sample.image_id, layer_id, features[layer_id][0])
        for k, (bbox, certified) in enumerate(bboxes):
            writer.add_roi(Roi(
                image_id=sample.image_id,
                roi_id=f"{sample.image_id}_r{k}",
                bbox=_scale_box(bbox, image.shape, adapter.input_size),
                true_label=sample.label,
                model_prediction=prediction,
                certified=certified,
                split_tag=job.split))
            stats.n_rois += 1

    if own_writer:
        writer.close()
        validate_bundle(job.out_bundle)
    if own_adapter:
        adapter.close()
    log.info("extracted %d ROIs from %d images (%d skipped as incorrect, "
             "%d without ROIs)", stats.n_rois, stats.n_images,
             stats.n_skipped_incorrect, len(stats.images_without_rois))
    return stats
