"""Positive-pair Siamese training of the style encoder.

Both views of a pair go through the shared encoder. The predictor is applied
to each branch and regresses the *other* branch's embedding, which is passed
through :func:`~stylex.autodiff.stop_gradient` so only the predicting side
receives gradient.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import CheckpointError, load_tensors, save_tensors
from .images import RawImage, StyledImage
from .nn import SGD, Encoder, EncoderConfig, Predictor, PredictorConfig, cosine_lr
from .phantoms import CropConfig, PairPlan, eval_view, plan_pairs, render, crop_view, style_key

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("epoch", "step", "loss", "lr", "collapse_std", "wall_ms")


class NumericAbort(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, manifest_path: Path | None = None):
        super().__init__(message)
        self.manifest_path = manifest_path


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 30
    base_lr: float | None = None
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0
    pairs_per_epoch: int | None = None
    policy: str = "different_content"
    fix_predictor_lr: bool = True
    probe_size: int = 64
    keep_checkpoints: int | None = None

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 for batch normalization")

    @property
    def lr(self) -> float:
        return self.base_lr if self.base_lr is not None else 0.05 * self.batch_size / 256

    @classmethod
    def paper_scale(cls) -> "TrainConfig":
        return cls(batch_size=200)


# ---------------------------------------------------------------------------
# model and loss
# ---------------------------------------------------------------------------

def to_batch(images: Sequence[StyledImage]) -> Tensor:
    """Stack [0, 1] images into a centred [B, 1, H, W] float32 tensor."""
    arr = np.stack([np.asarray(im.pixels, dtype=np.float32) for im in images])[:, None]
    return Tensor((arr - 0.5) / 0.25)


def simsiam_loss(z1: Tensor, z2: Tensor, p1: Tensor, p2: Tensor) -> Tensor:
    if not (z1.shape == z2.shape == p1.shape == p2.shape):
        raise ValueError("simsiam_loss needs four [B, D] batches of equal shape")
    left = ad.mean_all(ad.cosine_similarity(p1, ad.stop_gradient(z2)))
    right = ad.mean_all(ad.cosine_similarity(p2, ad.stop_gradient(z1)))
    return ad.scale(ad.add(left, right), -0.5)


@dataclass
class StyleModel:
    encoder: Encoder
    predictor: Predictor
    metadata: dict = field(default_factory=dict)

    @classmethod
    def create(cls, encoder_cfg: EncoderConfig, predictor_cfg: PredictorConfig | None = None,
               seed: int = 0) -> "StyleModel":
        predictor_cfg = predictor_cfg or PredictorConfig(output_dim=encoder_cfg.embedding_dim)
        if predictor_cfg.output_dim != encoder_cfg.embedding_dim:
            raise ValueError("predictor output_dim must equal the embedding dimension")
        rng = np.random.default_rng([0x1417, int(seed)])
        meta = {"encoder": asdict(encoder_cfg), "predictor": asdict(predictor_cfg)}
        return cls(Encoder(encoder_cfg, rng), Predictor(predictor_cfg, rng), meta)

    @property
    def embedding_dim(self) -> int:
        return self.encoder.cfg.embedding_dim

    @property
    def input_size(self) -> tuple:
        return tuple(self.encoder.cfg.input_size)

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.encoder.parameters()] + [p for _, p in self.predictor.parameters()]

    def state(self) -> dict[str, np.ndarray]:
        out = {f"encoder.{k}": v for k, v in self.encoder.state().items()}
        out.update({f"predictor.{k}": v for k, v in self.predictor.state().items()})
        return out

    def save(self, path, **extra) -> Path:
        meta = dict(self.metadata)
        meta.update(extra)
        return save_tensors(path, self.state(), meta)

    @classmethod
    def load(cls, path) -> "StyleModel":
        tensors, meta = load_tensors(path)
        if "encoder" not in meta:
            raise CheckpointError(f"{path}: missing metadata sidecar")
        enc_cfg = EncoderConfig(**meta["encoder"])
        pred_cfg = PredictorConfig(**meta["predictor"])
        model = cls.create(enc_cfg, pred_cfg)
        model.metadata = meta
        try:
            model.encoder.load_state({k[8:]: v for k, v in tensors.items() if k.startswith("encoder.")})
            model.predictor.load_state({k[10:]: v for k, v in tensors.items() if k.startswith("predictor.")})
        except (KeyError, ValueError) as exc:
            raise CheckpointError(f"{path}: {exc}") from exc
        return model


def _check_size(model: StyleModel, image: StyledImage) -> None:
    if tuple(image.shape) != model.input_size:
        raise ValueError(f"image {image.shape} does not match encoder input {model.input_size}")


def encode(image: StyledImage, model: StyleModel) -> np.ndarray:
    """Eval-mode embedding of one image."""
    return embed_corpus([image], model)[0]


def embed_corpus(images: Sequence[StyledImage], model, batch_size: int = 64) -> np.ndarray:
    """Order-preserving eval-mode embeddings, shape [n, D]."""
    if not isinstance(model, StyleModel):
        model = StyleModel.load(model)
    if len(images) == 0:
        return np.zeros((0, model.embedding_dim), dtype=np.float32)
    for im in images:
        _check_size(model, im)
    model.encoder.eval()
    out = []
    with ad.no_grad():
        for i in range(0, len(images), batch_size):
            out.append(model.encoder(to_batch(images[i:i + batch_size])).data)
    return np.concatenate(out)


def collapse_std(embeddings: np.ndarray) -> float:
    """Mean per-dimension std of L2-normalised embeddings (0 means collapse)."""
    z = embeddings / np.maximum(np.linalg.norm(embeddings, axis=1, keepdims=True), 1e-12)
    return float(z.std(axis=0).mean())


# ---------------------------------------------------------------------------
# pair stream
# ---------------------------------------------------------------------------

class PairStream:
    """Deterministic source of positive-pair batches for one training run."""

    def __init__(self, raw_lookup: Callable[[int], RawImage], content_ids: Sequence[int], styles: Sequence,
                 policy: str = "different_content", crop: CropConfig = CropConfig(), seed: int = 0,
                 image_shape=(128, 128)):
        self.raw_lookup = raw_lookup
        self.content_ids = list(content_ids)
        self.styles = list(styles)
        self.policy = policy
        self.crop = crop
        self.seed = seed
        self.image_shape = tuple(image_shape)
        self.masks = {c: raw_lookup(c).mask for c in self.content_ids}

    def epoch_plans(self, epoch: int, count: int) -> list[PairPlan]:
        return plan_pairs(self.content_ids, self.styles, self.policy, count, rng_seed=self.seed * 100003 + epoch,
                          image_shape=self.image_shape, crop=self.crop, masks=self.masks)

    def render(self, plans: Sequence[PairPlan]) -> tuple[list[StyledImage], list[StyledImage]]:
        cache: dict = {}
        a_views, b_views = [], []
        for plan in plans:
            for view, sink in ((plan.view_a, a_views), (plan.view_b, b_views)):
                key = (view.content_seed, style_key(plan.style))
                if key not in cache:
                    cache[key] = render(self.raw_lookup(view.content_seed), plan.style)
                sink.append(crop_view(cache[key], view, self.crop))
        return a_views, b_views

    def probe(self, size: int) -> list[StyledImage]:
        rng = np.random.default_rng([0x9B0, self.seed])
        out = []
        for _ in range(size):
            c = self.content_ids[int(rng.integers(len(self.content_ids)))]
            style = self.styles[int(rng.integers(len(self.styles)))]
            view = eval_view(c, self.image_shape, self.crop, self.masks[c])
            out.append(crop_view(render(self.raw_lookup(c), style), view, self.crop))
        return out


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: StyleModel
    checkpoint: Path | None
    epoch_loss: list
    epoch_collapse: list
    metrics_path: Path | None


def train(stream: PairStream, encoder_cfg: EncoderConfig, predictor_cfg: PredictorConfig | None,
          train_cfg: TrainConfig, out_dir=None, progress: Callable[[str], None] | None = None) -> TrainResult:
    model = StyleModel.create(encoder_cfg, predictor_cfg, seed=train_cfg.seed)
    model.metadata["train"] = asdict(train_cfg)
    model.metadata["styles"] = [style_key(s) for s in stream.styles]
    out = Path(out_dir) if out_dir is not None else None
    ckpt_dir = out / "checkpoints" if out is not None else None
    metrics_fh = writer = None
    if out is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        metrics_fh = open(out / "metrics.csv", "w", newline="")
        writer = csv.writer(metrics_fh)
        writer.writerow(METRIC_COLUMNS)

    enc_params = [p for _, p in model.encoder.parameters()]
    pred_params = [p for _, p in model.predictor.parameters()]
    base_lr = train_cfg.lr
    enc_opt = SGD(enc_params, base_lr, train_cfg.momentum, train_cfg.weight_decay)
    pred_opt = SGD(pred_params, base_lr, train_cfg.momentum, train_cfg.weight_decay)

    per_epoch = train_cfg.pairs_per_epoch or len(stream.content_ids)
    steps_per_epoch = max(per_epoch // train_cfg.batch_size, 1)
    total_steps = steps_per_epoch * train_cfg.epochs
    probe = stream.probe(train_cfg.probe_size)
    epoch_loss, epoch_collapse = [], []
    saved: list[Path] = []
    last_ckpt = None
    step = 0
    try:
        for epoch in range(train_cfg.epochs):
            plans = stream.epoch_plans(epoch, steps_per_epoch * train_cfg.batch_size)
            losses = []
            for s in range(steps_per_epoch):
                t0 = time.perf_counter()
                batch = plans[s * train_cfg.batch_size:(s + 1) * train_cfg.batch_size]
                lr = cosine_lr(base_lr, step, total_steps)
                enc_opt.lr = lr
                pred_opt.lr = base_lr if train_cfg.fix_predictor_lr else lr
                loss = _train_step(model, stream, batch, enc_opt, pred_opt)
                if not math.isfinite(loss):
                    raise NumericAbort(f"non-finite loss at epoch {epoch} step {s}",
                                       _dump_manifest(out, epoch, s, batch))
                losses.append(loss)
                wall_ms = (time.perf_counter() - t0) * 1e3
                collapse = ""
                if s == steps_per_epoch - 1:
                    collapse = collapse_std(embed_corpus(probe, model))
                    model.encoder.train()
                if writer is not None:
                    writer.writerow([epoch, step, f"{loss:.6f}", f"{lr:.6g}",
                                     f"{collapse:.6f}" if collapse != "" else "", f"{wall_ms:.1f}"])
                step += 1
            epoch_loss.append(float(np.mean(losses)))
            epoch_collapse.append(float(collapse))
            msg = f"epoch {epoch + 1}/{train_cfg.epochs} loss {epoch_loss[-1]:.4f} collapse_std {collapse:.4f}"
            log.info(msg)
            if progress is not None:
                progress(msg)
            if ckpt_dir is not None:
                path = model.save(ckpt_dir / f"epoch_{epoch + 1:03d}.styx", epoch=epoch + 1,
                                  epoch_loss=epoch_loss, epoch_collapse=epoch_collapse)
                saved.append(path)
                if train_cfg.keep_checkpoints and len(saved) > train_cfg.keep_checkpoints:
                    old = saved.pop(0)
                    old.unlink(missing_ok=True)
                    old.with_suffix(".json").unlink(missing_ok=True)
        if ckpt_dir is not None:
            last_ckpt = model.save(ckpt_dir / "final.styx", epoch=train_cfg.epochs,
                                   epoch_loss=epoch_loss, epoch_collapse=epoch_collapse)
    finally:
        if metrics_fh is not None:
            metrics_fh.close()
    model.encoder.eval()
    model.predictor.eval()
    return TrainResult(model, last_ckpt, epoch_loss, epoch_collapse, out / "metrics.csv" if out else None)


def _train_step(model: StyleModel, stream: PairStream, batch: Sequence[PairPlan], enc_opt: SGD, pred_opt: SGD) -> float:
    model.encoder.train()
    model.predictor.train()
    views_a, views_b = stream.render(batch)
    x1, x2 = to_batch(views_a), to_batch(views_b)
    z1 = model.encoder(x1)
    z2 = model.encoder(x2)
    p1 = model.predictor(z1)
    p2 = model.predictor(z2)
    loss = simsiam_loss(z1, z2, p1, p2)
    enc_opt.zero_grad()
    pred_opt.zero_grad()
    ad.backward(loss)
    enc_opt.step()
    pred_opt.step()
    return loss.item()


def _dump_manifest(out: Path | None, epoch: int, step: int, batch: Sequence[PairPlan]) -> Path | None:
    if out is None:
        return None
    path = out / f"nan_batch_e{epoch}_s{step}.json"
    path.write_text(json.dumps([p.to_dict() for p in batch], indent=1))
    return path
