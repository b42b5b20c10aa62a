"""Learned style similarity for processed X-ray-like images."""

from .metric import StyleComparison, distance_matrix, stylex_distance, stylex_similarity
from .pipelines import StyleParams, apply_lap, apply_surrogate
from .trainer import StyleModel, embed_corpus

__all__ = [
    "StyleComparison",
    "StyleModel",
    "StyleParams",
    "apply_lap",
    "apply_surrogate",
    "distance_matrix",
    "embed_corpus",
    "stylex_distance",
    "stylex_similarity",
]
__version__ = "0.1.0"
