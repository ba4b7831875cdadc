"""Dataset access for extraction jobs.

Two source kinds: `fixture:<dir>` (the in-repo miniature dataset: PNGs
plus labels.json and boxes.json) and `imagefolder:<dir>` (one
subdirectory per class).  The full-scale corpora are not vendored;
asking for them yields instructions instead of silent downloads.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

FETCH_INSTRUCTIONS = {
    "mixed13": (
        "Mixed_13 is a 78-class ImageNet subset; build it with the "
        "robustness library's ImageNet hierarchy tooling against a local "
        "ImageNet copy, then lay the images out as an imagefolder and "
        "use dataset='imagefolder:<dir>'."),
    "ninco": (
        "Download the NINCO OOD images from the authors' release, select "
        "the 18-class subset, lay them out as an imagefolder, and use "
        "dataset='imagefolder:<dir>'."),
    "oxford-pet": (
        "Download the Oxford-IIIT Pet dataset (images + annotations), "
        "lay it out as an imagefolder by breed, and use "
        "dataset='imagefolder:<dir>'."),
}


@dataclass
class Sample:
    image_id: str
    image: np.ndarray  # (h, w, 3) uint8
    label: int
    bbox_hint: list | None = None  # fixture ground-truth box, if any


@dataclass
class Dataset:
    name: str
    class_names: list[str]
    samples: list[Sample]

    def per_class(self, count: int, rng: np.random.Generator) -> "Dataset":
        """At most `count` randomly chosen samples per class."""
        chosen = []
        for c in range(len(self.class_names)):
            pool = [s for s in self.samples if s.label == c]
            idx = rng.permutation(len(pool))[:count]
            chosen.extend(pool[i] for i in sorted(idx))
        return Dataset(self.name, self.class_names, chosen)


def _load_image(path: str) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def load_fixture(root: str) -> Dataset:
    with open(os.path.join(root, "labels.json"), encoding="utf-8") as f:
        meta = json.load(f)
    boxes = {}
    boxes_path = os.path.join(root, "boxes.json")
    if os.path.exists(boxes_path):
        with open(boxes_path, encoding="utf-8") as f:
            boxes = json.load(f)
    samples = []
    for name, label in sorted(meta["labels"].items()):
        image = _load_image(os.path.join(root, name))
        image_id = os.path.splitext(name)[0]
        samples.append(Sample(image_id, image, int(label), boxes.get(name)))
    return Dataset(meta.get("name", "fixture"), meta["class_names"], samples)


def load_imagefolder(root: str) -> Dataset:
    classes = sorted(d for d in os.listdir(root)
                     if os.path.isdir(os.path.join(root, d)))
    if len(classes) < 2:
        raise FileNotFoundError(f"{root}: an imagefolder needs >= 2 class "
                                "subdirectories")
    samples = []
    for label, cls in enumerate(classes):
        cdir = os.path.join(root, cls)
        for name in sorted(os.listdir(cdir)):
            if not name.lower().endswith((".png", ".jpg", ".jpeg")):
                continue
            image_id = f"{cls}_{os.path.splitext(name)[0]}"
            samples.append(Sample(image_id, _load_image(os.path.join(cdir, name)),
                                  label))
    return Dataset(os.path.basename(root.rstrip("/")), classes, samples)


def resolve(spec: str) -> Dataset:
    kind, _, path = spec.partition(":")
    if kind == "fixture":
        return load_fixture(path)
    if kind == "imagefolder":
        if not os.path.isdir(path):
            raise FileNotFoundError(f"imagefolder {path!r} does not exist")
        return load_imagefolder(path)
    if kind in FETCH_INSTRUCTIONS:
        raise FileNotFoundError(
            f"dataset {kind!r} is not vendored. {FETCH_INSTRUCTIONS[kind]}")
    raise ValueError(f"unknown dataset spec {spec!r}; use 'fixture:<dir>' "
                     "or 'imagefolder:<dir>'")
