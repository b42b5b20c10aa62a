"""StyleX similarity and distance between styled images."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import NORM_EPS, NormUnderflowError
from .images import StyledImage
from .trainer import StyleModel, embed_corpus, encode


@dataclass(frozen=True)
class StyleComparison:
    image_a_id: str
    image_b_id: str
    similarity: float

    @property
    def distance(self) -> float:
        return 1.0 - self.similarity


def _as_model(model) -> StyleModel:
    return model if isinstance(model, StyleModel) else StyleModel.load(model)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.sqrt(np.dot(a, a)), np.sqrt(np.dot(b, b))
    if na < NORM_EPS or nb < NORM_EPS:
        raise NormUnderflowError("embedding norm below 1e-12")
    # a*b and na*nb are commutative, so swapping arguments is bitwise symmetric
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def stylex_similarity(a: StyledImage, b: StyledImage, model) -> float:
    """Cosine similarity of the two eval-mode style embeddings."""
    model = _as_model(model)
    return cosine(encode(a, model), encode(b, model))


def stylex_distance(a: StyledImage, b: StyledImage, model) -> float:
    return 1.0 - stylex_similarity(a, b, model)


def compare(a: StyledImage, b: StyledImage, model, a_id: str = "a", b_id: str = "b") -> StyleComparison:
    return StyleComparison(a_id, b_id, stylex_similarity(a, b, model))


def similarity_from_embeddings(emb: np.ndarray) -> np.ndarray:
    z = np.asarray(emb, dtype=np.float64)
    norms = np.linalg.norm(z, axis=1)
    if (norms < NORM_EPS).any():
        raise NormUnderflowError("embedding norm below 1e-12")
    z = z / norms[:, None]
    sim = z @ z.T
    sim = (sim + sim.T) / 2.0
    return np.clip(sim, -1.0, 1.0)


def distance_matrix(images: Sequence[StyledImage], model) -> np.ndarray:
    """Symmetric matrix of ``1 - similarity`` with entries in [0, 2]."""
    if len(images) == 0:
        raise ValueError("distance_matrix needs at least one image")
    emb = embed_corpus(list(images), _as_model(model))
    return np.clip(1.0 - similarity_from_embeddings(emb), 0.0, 2.0)


def export_matrix(path, matrix: np.ndarray, ids: Sequence[str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([""] + list(ids))
        for name, row in zip(ids, matrix):
            writer.writerow([name] + [f"{v:.6f}" for v in row])
    return path
