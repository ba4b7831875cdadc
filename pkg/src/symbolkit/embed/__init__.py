from .model import (
    DEFAULT_PARAMS,
    EmbeddingModel,
    fit_embedding,
    transform,
    trustworthiness,
)
from ._knn import EXACT_MAX_POINTS, approx_knn, exact_knn

__all__ = [
    "DEFAULT_PARAMS",
    "EXACT_MAX_POINTS",
    "EmbeddingModel",
    "approx_knn",
    "exact_knn",
    "fit_embedding",
    "transform",
    "trustworthiness",
]
