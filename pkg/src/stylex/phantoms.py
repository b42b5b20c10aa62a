"""Synthetic X-ray-like phantoms, corpus splits and positive pairs."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

from .images import RAW_MAX, RawImage, StyledImage
from .pipelines import StyleParams, SurrogateStyle, apply_lap, apply_surrogate, LapConfig

POLICIES = ("same_content", "different_content", "mixed")


# ---------------------------------------------------------------------------
# phantom generation
# ---------------------------------------------------------------------------

def _value_noise(rng: np.random.Generator, shape, octaves: int = 4, persistence: float = 0.5,
                 base_cells: int = 4) -> np.ndarray:
    h, w = shape
    total = np.zeros(shape)
    amplitude, norm = 1.0, 0.0
    for o in range(octaves):
        cells = base_cells * 2 ** o
        lattice = rng.uniform(-1.0, 1.0, (cells + 1, cells + 1))
        layer = ndimage.zoom(lattice, (h / (cells + 1), w / (cells + 1)), order=3, mode="mirror", grid_mode=True)
        total += amplitude * layer[:h, :w]
        norm += amplitude
        amplitude *= persistence
    return total / norm


def _strands(rng: np.random.Generator, shape, mask: np.ndarray) -> np.ndarray:
    h, w = shape
    canvas = np.zeros(shape)
    ys, xs = np.nonzero(mask > 0.5)
    if ys.size == 0:
        return canvas
    for _ in range(int(rng.integers(5, 21))):
        i = rng.integers(ys.size)
        p0 = np.array([ys[i], xs[i]], dtype=float)
        direction = rng.uniform(0, 2 * np.pi)
        length = rng.uniform(0.2, 0.6) * min(h, w)
        p2 = p0 + length * np.array([np.sin(direction), np.cos(direction)])
        bend = rng.normal(0.0, 0.25 * length, 2)
        p1 = (p0 + p2) / 2 + bend
        t = np.linspace(0.0, 1.0, int(4 * length) + 2)[:, None]
        pts = (1 - t) ** 2 * p0 + 2 * (1 - t) * t * p1 + t ** 2 * p2
        r = np.round(pts).astype(int)
        keep = (r[:, 0] >= 0) & (r[:, 0] < h) & (r[:, 1] >= 0) & (r[:, 1] < w)
        stroke = np.zeros(shape)
        np.add.at(stroke, (r[keep, 0], r[keep, 1]), 1.0)
        stroke = ndimage.gaussian_filter(np.minimum(stroke, 1.0), rng.uniform(0.6, 1.6))
        peak = stroke.max()
        if peak > 0:
            canvas += rng.uniform(0.4, 1.0) * stroke / peak
    return canvas


def generate_phantom(content_seed: int, size=(128, 128)) -> RawImage:
    """Deterministic X-ray-like raw image for one content seed."""
    h, w = size
    if h < 64 or w < 64:
        raise ValueError("phantoms need H, W >= 64")
    rng = np.random.default_rng([0xFA17, int(content_seed)])
    yy, xx = np.mgrid[0:h, 0:w]
    v = (yy + 0.5) / h - 0.5
    u = (xx + 0.5) / w - 0.5

    # soft-edged elliptical body, possibly cut by the frame
    cy, cx = rng.uniform(-0.12, 0.12, 2)
    a, b = rng.uniform(0.38, 0.55, 2)
    theta = rng.uniform(0, np.pi)
    du, dv = u - cx, v - cy
    ru = du * np.cos(theta) + dv * np.sin(theta)
    rv = -du * np.sin(theta) + dv * np.cos(theta)
    r = np.sqrt((ru / a) ** 2 + (rv / b) ** 2)
    softness = rng.uniform(0.02, 0.06)
    mask = 1.0 / (1.0 + np.exp(-(1.0 - r) / softness))
    dome = np.sqrt(np.clip(1.0 - r ** 2, 0.0, 1.0))

    phi = rng.uniform(0, 2 * np.pi)
    illumination = 1.0 + rng.uniform(0.0, 0.2) * (u * np.cos(phi) + v * np.sin(phi))

    texture = _value_noise(rng, (h, w))
    strands = _strands(rng, (h, w), mask)

    background = rng.uniform(0.03, 0.08)
    tissue = rng.uniform(0.35, 0.5) + 0.25 * dome + rng.uniform(0.1, 0.2) * texture + 0.18 * strands
    signal = background + mask * (tissue - background)
    signal = signal * illumination * RAW_MAX
    signal = signal + rng.normal(0.0, 0.005 * RAW_MAX, (h, w))
    pixels = np.clip(signal, 0.0, RAW_MAX)
    return RawImage(pixels=pixels, content_seed=int(content_seed), mask=mask)


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------

@dataclass
class DatasetSplit:
    train_ids: list
    test_ids: list
    split_fraction: float = 0.7
    corpus_seed: int = 0

    def __post_init__(self):
        if set(self.train_ids) & set(self.test_ids):
            raise ValueError("train and test content seeds overlap")

    @property
    def all_ids(self) -> list:
        return sorted(self.train_ids + self.test_ids)


def make_split(n_contents: int = 800, split_fraction: float = 0.7, corpus_seed: int = 0) -> DatasetSplit:
    rng = np.random.default_rng([0xC0, int(corpus_seed)])
    seeds = [int(s) for s in rng.choice(2 ** 31 - 1, size=n_contents, replace=False)]
    n_train = int(round(split_fraction * n_contents))
    return DatasetSplit(train_ids=seeds[:n_train], test_ids=seeds[n_train:],
                        split_fraction=split_fraction, corpus_seed=int(corpus_seed))


# ---------------------------------------------------------------------------
# styles and views
# ---------------------------------------------------------------------------

def style_key(style) -> str:
    if isinstance(style, StyleParams):
        return style.style_id
    if isinstance(style, SurrogateStyle):
        return style.style_id
    return SurrogateStyle.from_seed(int(style)).style_id


def render(raw: RawImage, style, lap_config: LapConfig = LapConfig()) -> StyledImage:
    if isinstance(style, StyleParams):
        return apply_lap(raw, style, lap_config)
    seed = style.seed if isinstance(style, SurrogateStyle) else int(style)
    return apply_surrogate(raw, seed)


@dataclass(frozen=True)
class CropConfig:
    crop: int = 96
    out: int = 64
    flip: bool = True


@dataclass(frozen=True)
class View:
    content_seed: int
    top: int
    left: int
    flip: bool


def resize(x: np.ndarray, out: int) -> np.ndarray:
    zoomed = ndimage.zoom(x, (out / x.shape[0], out / x.shape[1]), order=1, mode="nearest", grid_mode=True)
    return np.clip(zoomed[:out, :out], 0.0, 1.0)


def crop_view(image: StyledImage, view: View, cfg: CropConfig) -> StyledImage:
    patch = image.pixels[view.top:view.top + cfg.crop, view.left:view.left + cfg.crop]
    if view.flip:
        patch = patch[:, ::-1]
    pixels = resize(patch, cfg.out) if cfg.crop != cfg.out else patch.copy()
    return StyledImage(pixels=pixels, style_id=image.style_id, content_id=image.content_id, meta=image.meta)


def sample_view(rng: np.random.Generator, content_seed: int, shape, cfg: CropConfig,
                mask: np.ndarray | None = None) -> View:
    h, w = shape
    span_y, span_x = h - cfg.crop, w - cfg.crop
    if span_y < 0 or span_x < 0:
        raise ValueError(f"crop {cfg.crop} larger than image {shape}")
    flip = bool(cfg.flip and rng.random() < 0.5)
    half = cfg.crop // 2
    for _ in range(32):
        top, left = int(rng.integers(span_y + 1)), int(rng.integers(span_x + 1))
        if mask is None or mask[top + half, left + half] > 0.5:
            return View(content_seed, top, left, flip)
    return View(content_seed, span_y // 2, span_x // 2, flip)


def eval_view(content_seed: int, shape, cfg: CropConfig, mask: np.ndarray | None = None) -> View:
    """Deterministic crop centred on the body."""
    h, w = shape
    span_y, span_x = h - cfg.crop, w - cfg.crop
    if mask is None or mask.sum() <= 0:
        return View(content_seed, span_y // 2, span_x // 2, False)
    cy, cx = ndimage.center_of_mass(mask)
    top = int(np.clip(round(cy - cfg.crop / 2), 0, span_y))
    left = int(np.clip(round(cx - cfg.crop / 2), 0, span_x))
    return View(content_seed, top, left, False)


# ---------------------------------------------------------------------------
# positive pairs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PairPlan:
    """Manifest entry that reproduces one positive pair exactly."""

    style: object
    view_a: View
    view_b: View

    def to_dict(self) -> dict:
        style = self.style.as_dict() if isinstance(self.style, StyleParams) else {"seed": int(getattr(self.style, "seed", self.style))}
        return {"style_id": style_key(self.style), "style": style,
                "view_a": asdict(self.view_a), "view_b": asdict(self.view_b)}


@dataclass
class PositivePair:
    view_a: StyledImage
    view_b: StyledImage
    plan: PairPlan

    def __post_init__(self):
        if self.view_a.style_id != self.view_b.style_id:
            raise ValueError("positive pair views must share a style")


def plan_pairs(content_ids: Sequence[int], styles: Sequence, policy: str, count: int, rng_seed: int,
               image_shape=(128, 128), crop: CropConfig = CropConfig(), masks: dict | None = None) -> list[PairPlan]:
    if count < 1:
        raise ValueError("count must be >= 1")
    if not styles:
        raise ValueError("style set is empty")
    if policy not in POLICIES:
        raise ValueError(f"unknown pairing policy {policy!r}")
    ids = list(content_ids)
    if policy in ("different_content", "mixed") and len(ids) < 2:
        raise ValueError(f"policy {policy!r} needs at least 2 contents")
    rng = np.random.default_rng([0xBA1, int(rng_seed)])
    masks = masks or {}
    plans = []
    for _ in range(count):
        style = styles[int(rng.integers(len(styles)))]
        a = ids[int(rng.integers(len(ids)))]
        same = policy == "same_content" or (policy == "mixed" and rng.random() < 0.5)
        if same:
            b = a
        else:
            b = ids[int(rng.integers(len(ids) - 1))]
            if b == a:
                b = ids[-1]
        va = sample_view(rng, a, image_shape, crop, masks.get(a))
        vb = sample_view(rng, b, image_shape, crop, masks.get(b))
        plans.append(PairPlan(style=style, view_a=va, view_b=vb))
    return plans


def render_pair(plan: PairPlan, raw_lookup: Callable[[int], RawImage], crop: CropConfig = CropConfig(),
                lap_config: LapConfig = LapConfig()) -> PositivePair:
    img_a = render(raw_lookup(plan.view_a.content_seed), plan.style, lap_config)
    if plan.view_b.content_seed == plan.view_a.content_seed:
        img_b = img_a
    else:
        img_b = render(raw_lookup(plan.view_b.content_seed), plan.style, lap_config)
    return PositivePair(crop_view(img_a, plan.view_a, crop), crop_view(img_b, plan.view_b, crop), plan)


def make_pairs(split: DatasetSplit, styles: Sequence, policy: str, count: int, rng_seed: int,
               raw_lookup: Callable[[int], RawImage] | None = None, crop: CropConfig = CropConfig(),
               subset: str = "train", image_shape=(128, 128)) -> list[PositivePair]:
    ids = split.train_ids if subset == "train" else split.test_ids
    if raw_lookup is None:
        cache: dict = {}

        def raw_lookup(seed):
            if seed not in cache:
                cache[seed] = generate_phantom(seed, image_shape)
            return cache[seed]

    masks = {s: raw_lookup(s).mask for s in ids}
    plans = plan_pairs(ids, styles, policy, count, rng_seed, image_shape, crop, masks)
    return [render_pair(p, raw_lookup, crop) for p in plans]


# ---------------------------------------------------------------------------
# on-disk corpus
# ---------------------------------------------------------------------------

def phantom_path(root, seed: int) -> Path:
    return Path(root) / "phantoms" / f"{seed}.png"


def save_phantom(path, raw: RawImage) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.round(raw.pixels).astype(np.uint16)).save(path)
    return file_sha256(path)


def load_phantom(path, seed: int, with_mask: bool = True) -> RawImage:
    pixels = np.asarray(Image.open(path), dtype=np.float64)
    mask = None
    if with_mask:
        mask = generate_phantom(seed, pixels.shape).mask
    return RawImage(pixels=pixels, content_seed=seed, mask=mask)


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class CorpusManifest:
    corpus_seed: int
    image_size: list
    split_fraction: float
    train_ids: list
    test_ids: list
    hashes: dict = field(default_factory=dict)

    @property
    def split(self) -> DatasetSplit:
        return DatasetSplit(list(self.train_ids), list(self.test_ids), self.split_fraction, self.corpus_seed)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=1, sort_keys=True))

    @classmethod
    def load(cls, path) -> "CorpusManifest":
        return cls(**json.loads(Path(path).read_text()))
