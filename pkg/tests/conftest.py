import numpy as np
import pytest

from symbolkit.tensorio import (
    ActivationTensor,
    BundleManifest,
    LayerInfo,
    RoiRecord,
    write_bundle,
)


@pytest.fixture
def tiny_bundle(tmp_path):
    """2 classes, 4 ROIs, one 2-channel 6x6 layer."""
    manifest = BundleManifest(
        dataset_name="tiny", class_names=["cat", "dog"], model_name="toy",
        layer_catalog=[LayerInfo(1, 2, (48, 48), (6, 6))])
    rng = np.random.default_rng(0)
    tensors, rois = [], []
    for i, (label, split) in enumerate([(0, "train"), (1, "train"),
                                        (0, "test"), (1, "test")]):
        img = f"img{i}"
        tensors.append(ActivationTensor.from_array(
            img, 1, rng.uniform(0, 1, (2, 6, 6))))
        rois.append(RoiRecord(img, f"{img}_r0", (2.0, 2.0, 46.0, 46.0),
                              label, label, True, split))
    path = tmp_path / "bundle"
    write_bundle(path, manifest, iter(tensors), iter(rois))
    return path


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = []
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            if "test_acceptance" in rep.nodeid and rep.when == "call":
                lines.append((rep.nodeid.split("::")[-1], status.upper()))
    if lines:
        terminalreporter.section("acceptance criteria")
        for name, status in sorted(lines):
            terminalreporter.write_line(f"{status:6s} {name}")
