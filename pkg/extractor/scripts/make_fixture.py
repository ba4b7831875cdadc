#!/usr/bin/env python3
"""Regenerate the miniature 2-class fixture (deterministic).

20 images, 64x64: class 0 'ruby' draws a red rectangle, class 1
'sapphire' a blue one, on dark noise backgrounds.  boxes.json records
the ground-truth rectangle per image.
"""

import json
import os
import sys

import numpy as np
from PIL import Image

OUT = os.path.join(os.path.dirname(__file__), "..", "fixtures", "mini")
CLASSES = ["ruby", "sapphire"]
N_PER_CLASS = 10
SIZE = 64


def main():
    rng = np.random.default_rng(20240601)
    os.makedirs(OUT, exist_ok=True)
    labels, boxes = {}, {}
    for label, _ in enumerate(CLASSES):
        for i in range(N_PER_CLASS):
            name = f"{CLASSES[label]}_{i:02d}.png"
            img = rng.integers(10, 40, size=(SIZE, SIZE, 3)).astype(np.uint8)
            w = int(rng.integers(20, 36))
            h = int(rng.integers(20, 36))
            x0 = int(rng.integers(4, SIZE - w - 4))
            y0 = int(rng.integers(4, SIZE - h - 4))
            color = (190, 40, 40) if label == 0 else (40, 40, 190)
            # per-image jitter plus a horizontal ramp: downstream max pooling
            # would flatten plain high-frequency noise to its upper bound,
            # leaving every pooled activation identical across the corpus
            jitter = rng.integers(-20, 21, size=3)
            ramp = np.linspace(-12, 12, w)[None, :, None]
            noise = rng.integers(-8, 9, size=(h, w, 3))
            patch = color + jitter + ramp + noise
            img[y0:y0 + h, x0:x0 + w] = np.clip(patch, 0, 255).astype(np.uint8)
            Image.fromarray(img).save(os.path.join(OUT, name))
            labels[name] = label
            boxes[name] = [x0, y0, x0 + w, y0 + h]
    with open(os.path.join(OUT, "labels.json"), "w", encoding="utf-8") as f:
        json.dump({"name": "mini", "class_names": CLASSES, "labels": labels},
                  f, indent=1, sort_keys=True)
        f.write("\n")
    with open(os.path.join(OUT, "boxes.json"), "w", encoding="utf-8") as f:
        json.dump(boxes, f, indent=1, sort_keys=True)
        f.write("\n")
    print(f"wrote {len(labels)} images to {os.path.abspath(OUT)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
