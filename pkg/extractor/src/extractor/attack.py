"""Adversarial bundle crafting.

Attacks are consumed as external tools behind one interface.  The
AutoAttack backend (standard mode, eps=0.03, L-inf) matches the
full-scale protocol; a small PGD fallback keeps the plumbing testable
offline.  Perturbed images are re-extracted with ROIs located from the
original labels, not the manipulated predictions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
import torch

from . import datasets
from .extract import ExtractionJob, extract
from .models import ModelAdapter

log = logging.getLogger("extractor")


class PgdAttack:
    """Projected-gradient L-inf attack; the offline stand-in backend."""

    def __init__(self, eps: float = 0.03, steps: int = 20,
                 step_size: float | None = None):
        self.eps = eps
        self.steps = steps
        self.step_size = step_size if step_size is not None else \
            (2.5 * eps / steps if steps else 0.0)

    def perturb(self, adapter: ModelAdapter, images: np.ndarray,
                labels: np.ndarray) -> np.ndarray:
        """images: (n, h, w, 3) float in [0,1]; returns same shape/range."""
        if self.eps == 0.0:
            return images.copy()
        x0 = torch.as_tensor(images, dtype=torch.float32).permute(0, 3, 1, 2)
        y = torch.as_tensor(labels, dtype=torch.long)
        x = x0.clone()
        for _ in range(self.steps):
            x.requires_grad_(True)
            # preprocess() runs under no_grad, so resize/normalize inline
            # to keep the graph alive through to the pixels
            z = x
            if z.shape[-1] != adapter.input_size:
                z = torch.nn.functional.interpolate(
                    z, size=(adapter.input_size, adapter.input_size),
                    mode="bilinear", align_corners=False, antialias=True)
            if adapter.normalize is not None:
                mean, std = adapter.normalize
                z = (z - torch.tensor(mean).view(1, 3, 1, 1)) \
                    / torch.tensor(std).view(1, 3, 1, 1)
            loss = torch.nn.functional.cross_entropy(adapter.logits(z), y)
            (grad,) = torch.autograd.grad(loss, x)
            with torch.no_grad():
                x = x + self.step_size * grad.sign()
                x = torch.clamp(torch.min(torch.max(x, x0 - self.eps),
                                          x0 + self.eps), 0.0, 1.0)
        return x.detach().permute(0, 2, 3, 1).numpy()


class AutoAttackBackend:
    """The reference attack (standard mode); needs the autoattack package."""

    def __init__(self, eps: float = 0.03):
        try:
            from autoattack import AutoAttack  # noqa: F401
        except ImportError as e:
            raise ImportError(
                "the autoattack package is not installed; install it for "
                "full-scale attack crafting or use PgdAttack") from e
        self.eps = eps

    def perturb(self, adapter, images, labels):
        from autoattack import AutoAttack
        model = _NormalizedModel(adapter)
        aa = AutoAttack(model, norm="Linf", eps=self.eps, version="standard")
        x = torch.as_tensor(images, dtype=torch.float32).permute(0, 3, 1, 2)
        y = torch.as_tensor(labels, dtype=torch.long)
        adv = aa.run_standard_evaluation(x, y, bs=16)
        return adv.permute(0, 2, 3, 1).numpy()


class _NormalizedModel(torch.nn.Module):
    def __init__(self, adapter: ModelAdapter):
        super().__init__()
        self.adapter = adapter

    def forward(self, x):
        if x.shape[-1] != self.adapter.input_size:
            x = torch.nn.functional.interpolate(
                x, size=(self.adapter.input_size,) * 2, mode="bilinear",
                align_corners=False, antialias=True)
        if self.adapter.normalize is not None:
            mean, std = self.adapter.normalize
            x = (x - torch.tensor(mean).view(1, 3, 1, 1)) \
                / torch.tensor(std).view(1, 3, 1, 1)
        return self.adapter.logits(x)


def craft_adversarial(job: ExtractionJob, attack,
                      adapter: ModelAdapter | None = None,
                      detector=None, writer=None) -> dict:
    """Perturb the job's dataset and extract an adversarial split.

    ROIs are located with the clean labels (prompt_source='label'),
    certification is skipped (detector-only boxes), and the recorded
    model_prediction is the decision on the perturbed image.  Images the
    attack errors out on are skipped and logged.
    """
    dataset = datasets.resolve(job.dataset)
    rng = np.random.default_rng(job.seed)
    dataset = dataset.per_class(job.per_class, rng)
    from .extract import build_adapter
    own_adapter = adapter is None
    if adapter is None:
        adapter = build_adapter(job)

    perturbed: dict[str, np.ndarray] = {}
    failures = []
    for sample in dataset.samples:
        clean = sample.image.astype(np.float32) / 255.0
        try:
            adv = attack.perturb(adapter, clean[None],
                                 np.array([sample.label]))[0]
        except Exception as e:  # attack failure: skip the image, keep going
            log.warning("attack failed on %s: %s", sample.image_id, e)
            failures.append(sample.image_id)
            continue
        perturbed[sample.image_id] = adv

    adv_job = replace(job, split="adversarial", certify=False,
                      prompt_source="label", require_correct=False)
    stats = extract(adv_job, adapter=adapter, detector=detector,
                    dataset=dataset, images_override=perturbed, writer=writer)
    flipped = 0
    for sample in dataset.samples:
        if sample.image_id in perturbed:
            pred = int(adapter.predict(perturbed[sample.image_id][None])[0])
            flipped += (pred != sample.label)
    if own_adapter:
        adapter.close()
    return {"extraction": stats.as_dict(), "n_attack_failures": len(failures),
            "n_flipped": flipped, "n_attacked": len(perturbed)}
