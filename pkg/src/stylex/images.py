"""Image containers shared by the pipelines, the data layer and the trainer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

RAW_MAX = 16383.0


@dataclass
class RawImage:
    """Un-styled detector signal, nominally 14-bit."""

    pixels: np.ndarray
    content_seed: int
    mask: np.ndarray | None = None

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2:
            raise ValueError("RawImage pixels must be 2-d")
        if not np.isfinite(self.pixels).all():
            raise ValueError("RawImage pixels must be finite")

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    @property
    def content_id(self) -> str:
        return f"phantom-{self.content_seed}"


@dataclass
class StyledImage:
    """Display-range image in [0, 1] tagged with its style and content."""

    pixels: np.ndarray
    style_id: str
    content_id: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels)
        if self.pixels.ndim != 2:
            raise ValueError("StyledImage pixels must be 2-d")
        if self.pixels.size and (self.pixels.min() < 0.0 or self.pixels.max() > 1.0):
            raise ValueError("StyledImage pixels must lie in [0, 1]")

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape


def as_array(image) -> np.ndarray:
    if isinstance(image, (RawImage, StyledImage)):
        return np.asarray(image.pixels, dtype=np.float64)
    return np.asarray(image, dtype=np.float64)


def content_id_of(image) -> str:
    if isinstance(image, RawImage):
        return image.content_id
    if isinstance(image, StyledImage):
        return image.content_id
    return "array"
