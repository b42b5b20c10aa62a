"""Image styling pipelines.

LAP is a Laplacian-pyramid pipeline with three knobs, each in [0, 10]:

* ``h`` scales the fine bands (0 and 1),
* ``l`` scales the low-to-mid bands (2 and 3),
* ``w`` sets the width of a median-centred intensity window.

Band gains are ``p / 5`` so 5 is neutral. The window width is
``(0.2 + 0.08 * w) * (max - min)`` of the recomposed image.

The surrogate pipeline is an opaque, seed-driven style family: gamma, unsharp
masking, a monotone tone curve and min-max normalisation.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .images import RawImage, StyledImage, as_array, content_id_of

PARAM_MIN, PARAM_MAX = 0.0, 10.0
AXES = ("w", "l", "h")
_KERNEL = np.array([1.0, 4.0, 6.0, 4.0, 1.0])


class DegenerateWindowWarning(UserWarning):
    """The recomposed image has no dynamic range; output set to 0.5."""


@dataclass(frozen=True)
class StyleParams:
    w: float = 5.0
    l: float = 5.0
    h: float = 5.0

    def __post_init__(self):
        for axis in AXES:
            value = getattr(self, axis)
            if not (PARAM_MIN <= value <= PARAM_MAX) or not np.isfinite(value):
                raise ValueError(f"LAP parameter {axis}={value} outside [0, 10]")

    @property
    def style_id(self) -> str:
        return f"lap:w={self.w:g},l={self.l:g},h={self.h:g}"

    def replace(self, **changes) -> "StyleParams":
        values = {a: getattr(self, a) for a in AXES}
        values.update(changes)
        return StyleParams(**values)

    def as_dict(self) -> dict:
        return {a: float(getattr(self, a)) for a in AXES}


@dataclass(frozen=True)
class LapConfig:
    levels: int = 4
    high_bands: tuple = (0, 1)
    low_bands: tuple = (2, 3)


@dataclass
class LaplacianPyramid:
    bands: list
    residual: np.ndarray

    @property
    def levels(self) -> int:
        return len(self.bands)


# ---------------------------------------------------------------------------
# pyramid
# ---------------------------------------------------------------------------

@lru_cache(maxsize=64)
def _down_matrix(n: int) -> np.ndarray:
    """Binomial blur with mirror borders followed by 2x decimation, as a matrix."""
    return ndimage.convolve1d(np.eye(n), _KERNEL / 16.0, axis=0, mode="mirror")[::2]


@lru_cache(maxsize=64)
def _up_matrix(n: int) -> np.ndarray:
    """Right inverse of the down matrix built from the classic zero-insert expand.

    ``S (D S)^-1`` satisfies ``D U = I`` (bands carry no content the next level
    sees, so re-decomposing a band-weighted image returns the weighted bands) and
    keeps constants constant because both ``S`` and ``D`` do.
    """
    m = (n + 1) // 2
    inserted = np.zeros((n, m))
    inserted[::2] = np.eye(m)
    expand = ndimage.convolve1d(inserted, _KERNEL / 8.0, axis=0, mode="mirror")
    return expand @ np.linalg.inv(_down_matrix(n) @ expand)


def downsample(x: np.ndarray) -> np.ndarray:
    h, w = x.shape
    return _down_matrix(h) @ x @ _down_matrix(w).T


def upsample(x: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    h, w = shape
    if x.shape != ((h + 1) // 2, (w + 1) // 2):
        raise ValueError(f"cannot expand {x.shape} to {shape}")
    return _up_matrix(h) @ x @ _up_matrix(w).T


def build_pyramid(image, levels: int = 4) -> LaplacianPyramid:
    """Decompose into ``levels`` band-pass images plus a coarse residual."""
    g = as_array(image)
    if min(g.shape) < 2 ** levels:
        raise ValueError(f"image {g.shape} too small for a {levels}-level pyramid")
    bands = []
    for _ in range(levels):
        nxt = downsample(g)
        bands.append(g - upsample(nxt, g.shape))
        g = nxt
    return LaplacianPyramid(bands=bands, residual=g)


def reconstruct(pyramid: LaplacianPyramid, gains=None) -> np.ndarray:
    """Collapse the pyramid, scaling band k by ``gains[k]``."""
    gains = [1.0] * pyramid.levels if gains is None else list(gains)
    if len(gains) != pyramid.levels:
        raise ValueError("need one gain per band")
    x = pyramid.residual
    for k in range(pyramid.levels - 1, -1, -1):
        band = pyramid.bands[k]
        x = upsample(x, band.shape) + gains[k] * band
    return x


# ---------------------------------------------------------------------------
# LAP
# ---------------------------------------------------------------------------

def gain(p: float) -> float:
    return p / 5.0


def band_gains(params: StyleParams, config: LapConfig = LapConfig()) -> list[float]:
    gains = [1.0] * config.levels
    for k in config.high_bands:
        if k < config.levels:
            gains[k] = gain(params.h)
    for k in config.low_bands:
        if k < config.levels:
            gains[k] = gain(params.l)
    return gains


def lap_prewindow(image, params: StyleParams, config: LapConfig = LapConfig()) -> np.ndarray:
    """Band-weighted recomposition before the intensity window is applied."""
    pyramid = build_pyramid(image, config.levels)
    return reconstruct(pyramid, band_gains(params, config))


def window_width(w: float, dynamic_range: float) -> float:
    return (0.2 + 0.08 * w) * dynamic_range


def apply_window(x: np.ndarray, w: float) -> tuple[np.ndarray, dict]:
    """Median-centred window; returns pixels in [0, 1] and the constants used."""
    lo, hi = float(x.min()), float(x.max())
    if hi <= lo:
        warnings.warn("degenerate window: image has zero dynamic range", DegenerateWindowWarning, stacklevel=3)
        return np.full(x.shape, 0.5), {"center": lo, "width": 0.0, "degenerate": True}
    center = float(np.median(x))
    width = window_width(w, hi - lo)
    out = np.clip((x - (center - width / 2.0)) / width, 0.0, 1.0)
    return out, {"center": center, "width": width, "degenerate": False}


def apply_lap(image, params: StyleParams, config: LapConfig = LapConfig()) -> StyledImage:
    pre = lap_prewindow(image, params, config)
    pixels, consts = apply_window(pre, params.w)
    meta = {"pipeline": "lap", "params": params.as_dict(), "levels": config.levels, "window": consts}
    return StyledImage(pixels=pixels, style_id=params.style_id, content_id=content_id_of(image), meta=meta)


# ---------------------------------------------------------------------------
# surrogate black box
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SurrogateStyle:
    seed: int
    gamma: float
    radius: int
    amount: float
    knots: tuple = field(default=())

    @classmethod
    def from_seed(cls, seed: int) -> "SurrogateStyle":
        rng = np.random.default_rng([0x5A55, int(seed)])
        gamma = float(np.exp(rng.uniform(np.log(0.5), np.log(2.0))))
        radius = int(rng.choice([1, 2, 4]))
        amount = float(rng.uniform(0.0, 1.5))
        steps = rng.uniform(0.15, 1.0, size=3)
        ys = np.concatenate([[0.0], np.cumsum(steps)]) / steps.sum()
        return cls(seed=int(seed), gamma=gamma, radius=radius, amount=amount, knots=tuple(ys.tolist()))

    @property
    def style_id(self) -> str:
        return f"surrogate:seed={self.seed}"


def _minmax(x: np.ndarray) -> np.ndarray:
    lo, hi = x.min(), x.max()
    if hi <= lo:
        return np.full(x.shape, 0.5)
    return (x - lo) / (hi - lo)


def apply_surrogate(image, style_seed: int) -> StyledImage:
    style = SurrogateStyle.from_seed(style_seed)
    x = _minmax(as_array(image))
    x = x ** style.gamma
    blurred = ndimage.gaussian_filter(x, sigma=style.radius, mode="mirror")
    x = np.clip(x + style.amount * (x - blurred), 0.0, 1.0)
    x = np.interp(x, np.linspace(0.0, 1.0, len(style.knots)), style.knots)
    x = np.clip(_minmax(x), 0.0, 1.0)
    meta = {"pipeline": "surrogate", "seed": style.seed}
    return StyledImage(pixels=x, style_id=style.style_id, content_id=content_id_of(image), meta=meta)


# ---------------------------------------------------------------------------
# style sets
# ---------------------------------------------------------------------------

def sweep_values(steps: int) -> list[float]:
    if steps < 2:
        raise ValueError("a sweep needs at least 2 steps")
    return [PARAM_MAX * i / (steps - 1) for i in range(steps)]


def sweep_params(axis: str, steps: int, fixed: StyleParams) -> list[StyleParams]:
    if axis not in AXES:
        raise ValueError(f"sweep axis must be one of {AXES}, got {axis!r}")
    return [fixed.replace(**{axis: v}) for v in sweep_values(steps)]


def sweep_styles(images, axis: str, steps: int, fixed: StyleParams,
                 config: LapConfig = LapConfig()) -> list[list[StyledImage]]:
    """One group per sweep value, each covering every input image."""
    return [[apply_lap(img, p, config) for img in images] for p in sweep_params(axis, steps, fixed)]


def corner_styles() -> list[StyleParams]:
    """Every (w, l, h) with each parameter at its minimum or maximum."""
    return [StyleParams(w, l, h) for w, l, h in product((PARAM_MIN, PARAM_MAX), repeat=3)]


def even_grid() -> list[StyleParams]:
    evens = [0.0, 2.0, 4.0, 6.0, 8.0, 10.0]
    return [StyleParams(w, l, h) for w, l, h in product(evens, repeat=3)]


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_styled(path, image: StyledImage) -> Path:
    """16-bit grayscale PNG plus a JSON sidecar with identity and scaling."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    q = np.round(np.clip(image.pixels, 0.0, 1.0) * 65535.0).astype(np.uint16)
    Image.fromarray(q).save(path)
    meta = {
        "pipeline": image.meta.get("pipeline"),
        "style_id": image.style_id,
        "content_id": image.content_id,
        "params": image.meta.get("params"),
        "seed": image.meta.get("seed"),
        "normalization": {"scale": 65535.0, "offset": 0.0},
    }
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return path


def load_styled(path) -> StyledImage:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    norm = meta.get("normalization", {"scale": 65535.0, "offset": 0.0})
    raw = np.asarray(Image.open(path), dtype=np.float64)
    pixels = np.clip((raw - norm["offset"]) / norm["scale"], 0.0, 1.0)
    extra = {k: meta[k] for k in ("pipeline", "params", "seed") if meta.get(k) is not None}
    return StyledImage(pixels=pixels, style_id=meta["style_id"], content_id=meta["content_id"], meta=extra)
