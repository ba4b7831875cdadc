"""Real-model activation-bundle extraction.

Hooks the analyzed layers of pretrained classifiers, certifies detector
boxes with second-thought re-classification, crafts adversarial copies,
runs the cropped-ROI study, and writes everything as neutral activation
bundles.
"""

__version__ = "0.1.0"
