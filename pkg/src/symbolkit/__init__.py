"""symbolkit: discrete internal symbols from hidden-layer activations.

Pipeline: activation bundles -> ROI pooling -> 3-D embedding -> symbol
codebooks (X-means) -> symbol-class correlation maps -> prediction,
expected symbol scores, OOD/adversarial detection, temporary learning.
"""

from . import cluster, embed, metrics, report, roipool, symtab, synth, tensorio

__version__ = "0.1.0"

__all__ = [
    "cluster",
    "embed",
    "metrics",
    "report",
    "roipool",
    "symtab",
    "synth",
    "tensorio",
    "__version__",
]
