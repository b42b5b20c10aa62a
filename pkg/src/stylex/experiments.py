"""Experiment ladder: corpus, training, sweeps, clustering and distance reports.

Everything here is driven by one :class:`ExperimentConfig`, which round-trips
through JSON so a run directory holds enough to reproduce itself.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .analysis import (TsneConfig, export_points, interpolation_check, knn_accuracy, knn_predict,
                       pair_auc, silhouette, sweep_rank_correlation, group_medians, tsne)
from .images import RawImage, StyledImage
from .metric import distance_matrix, export_matrix, similarity_from_embeddings
from .nn import EncoderConfig, PredictorConfig
from .phantoms import (CorpusManifest, CropConfig, crop_view, eval_view, generate_phantom, load_phantom,
                       make_split, phantom_path, render, style_key)
from .pipelines import AXES, StyleParams, corner_styles, even_grid, sweep_params
from .trainer import PairStream, StyleModel, TrainConfig, TrainResult, embed_corpus, train

SCHEMA_ID = "stylex-run/1"
LAP_TRAIN_VALUES = (0.0, 2.0, 4.0, 6.0, 8.0, 10.0)


class ConfigError(ValueError):
    """Malformed or unknown configuration keys."""


@dataclass
class CorpusSettings:
    n_contents: int = 800
    split_fraction: float = 0.7
    corpus_seed: int = 0
    image_size: int = 128


@dataclass
class PipelineSettings:
    kind: str = "lap"
    lap_levels: int = 4
    lap_train_styles: str = "corners"
    surrogate_styles: int = 32
    held_out: list = field(default_factory=lambda: [28, 29, 30, 31])

    def __post_init__(self):
        if self.kind not in ("lap", "surrogate"):
            raise ConfigError(f"pipeline.kind must be 'lap' or 'surrogate', got {self.kind!r}")
        if self.lap_train_styles not in ("corners", "even_grid"):
            raise ConfigError("pipeline.lap_train_styles must be 'corners' or 'even_grid', "
                              f"got {self.lap_train_styles!r}")
        self.held_out = [int(s) for s in self.held_out]


@dataclass
class AnalysisSettings:
    perplexity: float = 30.0
    iterations: int = 1000
    tsne_learning_rate: float | str = "auto"
    sweep_steps: int = 11
    sweep_fixed: list = field(default_factory=lambda: [6.0, 6.0, 6.0])
    sweep_contents: int = 20
    cluster_contents: int = 30
    surrogate_contents: int = 15
    knn_k: int = 5
    auc_pairs: int = 600
    auc_contents: int = 40
    distance_candidates: int = 4


@dataclass
class ExperimentConfig:
    corpus: CorpusSettings = field(default_factory=CorpusSettings)
    pipeline: PipelineSettings = field(default_factory=PipelineSettings)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    crop: CropConfig = field(default_factory=CropConfig)
    analysis: AnalysisSettings = field(default_factory=AnalysisSettings)
    seed: int = 0
    out: str = "runs/default"

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        return _build(cls, data, "")

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_dict(data)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Master seed feeding the trainer and t-SNE; the corpus keeps its own seed."""
        data = self.to_dict()
        data["seed"] = int(seed)
        data["train"]["seed"] = int(seed)
        return ExperimentConfig.from_dict(data)

    def tsne(self, out_dims: int, n_points: int | None = None) -> TsneConfig:
        """t-SNE settings; perplexity is lowered to the feasible maximum for small sets."""
        a = self.analysis
        perplexity = a.perplexity
        if n_points is not None and not perplexity < (n_points - 1) / 3.0:
            perplexity = max((n_points - 1) / 3.0 - 0.5, 1.0)
        return TsneConfig(out_dims=out_dims, perplexity=perplexity, iterations=a.iterations,
                          learning_rate=a.tsne_learning_rate, seed=self.seed)


def _build(cls, data, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or 'config'} must be an object")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(prefix + k for k in unknown)}")
    defaults = cls()
    kwargs = {}
    for name, value in data.items():
        current = getattr(defaults, name)
        if is_dataclass(current):
            kwargs[name] = _build(type(current), value, f"{prefix}{name}.")
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{prefix or 'config'}: {exc}") from exc


def write_snapshot(out_dir, cfg: ExperimentConfig, command: str, extra: dict | None = None) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"schema": SCHEMA_ID, "command": command, "config": cfg.to_dict(), **(extra or {})}
    path = out_dir / "config.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))
    return path


def write_summary(out_dir, summary: dict) -> Path:
    path = Path(out_dir) / "summary.json"
    path.write_text(json.dumps({"schema": SCHEMA_ID, **summary}, indent=2, sort_keys=True, default=float))
    return path


# ---------------------------------------------------------------------------
# corpus access
# ---------------------------------------------------------------------------

class Corpus:
    """Split plus a cached raw-image lookup, backed by disk or by generation."""

    def __init__(self, train_ids: Sequence[int], test_ids: Sequence[int], loader: Callable[[int], RawImage],
                 image_shape=(128, 128)):
        self.train_ids = list(train_ids)
        self.test_ids = list(test_ids)
        self.image_shape = tuple(image_shape)
        self._loader = loader
        self._cache: dict[int, RawImage] = {}

    def __call__(self, seed: int) -> RawImage:
        if seed not in self._cache:
            self._cache[seed] = self._loader(seed)
        return self._cache[seed]

    @classmethod
    def generated(cls, settings: CorpusSettings) -> "Corpus":
        split = make_split(settings.n_contents, settings.split_fraction, settings.corpus_seed)
        shape = (settings.image_size, settings.image_size)
        return cls(split.train_ids, split.test_ids, lambda s: generate_phantom(s, shape), shape)

    @classmethod
    def from_dir(cls, root) -> "Corpus":
        root = Path(root)
        manifest_path = root / "manifest.json"
        if not manifest_path.exists():
            raise FileNotFoundError(f"no corpus manifest at {manifest_path}")
        manifest = CorpusManifest.load(manifest_path)
        return cls(manifest.train_ids, manifest.test_ids, lambda s: load_phantom(phantom_path(root, s), s),
                   tuple(manifest.image_size))


def training_styles(pipeline: PipelineSettings) -> list:
    if pipeline.kind == "lap":
        return corner_styles() if pipeline.lap_train_styles == "corners" else even_grid()
    held = set(pipeline.held_out)
    return [s for s in range(pipeline.surrogate_styles) if s not in held]


def eval_images(corpus: Corpus, contents: Sequence[int], styles: Sequence,
                crop: CropConfig = CropConfig()) -> tuple[list[StyledImage], list]:
    """Deterministic body-centred crops of every (style, content) combination, style-major."""
    images, labels = [], []
    for style in styles:
        for c in contents:
            raw = corpus(c)
            view = eval_view(c, raw.shape, crop, raw.mask)
            images.append(crop_view(render(raw, style), view, crop))
            labels.append(style)
    return images, labels


def _take(ids: Sequence[int], n: int, what: str) -> list:
    if n < 1:
        raise ValueError(f"{what}: need at least one test image")
    if len(ids) < n:
        raise ValueError(f"{what}: asked for {n} test contents, corpus has {len(ids)}")
    return list(ids[:n])


# ---------------------------------------------------------------------------
# rungs
# ---------------------------------------------------------------------------

def run_training(corpus: Corpus, cfg: ExperimentConfig, out_dir=None,
                 progress: Callable[[str], None] | None = None) -> TrainResult:
    stream = PairStream(corpus, corpus.train_ids, training_styles(cfg.pipeline), cfg.train.policy, cfg.crop,
                        seed=cfg.train.seed, image_shape=corpus.image_shape)
    return train(stream, cfg.encoder, cfg.predictor, cfg.train, out_dir=out_dir, progress=progress)


def run_sweep(model: StyleModel, corpus: Corpus, cfg: ExperimentConfig, axis: str, out_dir=None,
              steps: int | None = None) -> dict:
    """1-D t-SNE of a one-parameter LAP sweep; rank correlation and interpolation verdict."""
    if axis not in AXES:
        raise ValueError(f"sweep axis must be one of {AXES}, got {axis!r}")
    a = cfg.analysis
    steps = a.sweep_steps if steps is None else steps
    fixed = StyleParams(*a.sweep_fixed)
    params = sweep_params(axis, steps, fixed)
    contents = _take(corpus.test_ids, a.sweep_contents, "sweep")
    images, labels = eval_images(corpus, contents, params, cfg.crop)
    values = np.array([getattr(p, axis) for p in labels])
    seen = np.array([np.isclose(values[i], LAP_TRAIN_VALUES).any() for i in range(len(values))])
    emb = embed_corpus(images, model)
    result = tsne(emb, cfg.tsne(1, len(images)), labels=[p.style_id for p in labels])
    rho = sweep_rank_correlation(result.points, values)
    passed, report = interpolation_check(result.points, values, seen)
    keys, medians = group_medians(result.points, values)
    summary = {
        "axis": axis, "steps": steps, "fixed": fixed.as_dict(), "n_points": len(images),
        "abs_spearman_rho": rho, "interpolation_passed": passed, "interpolation": report,
        "group_values": keys.tolist(), "group_medians": medians.tolist(),
        "tsne": result.config, "kl_final": float(result.kl_trace[-1]),
    }
    if out_dir is not None:
        from .plots import boxplot_1d

        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        export_points(out_dir / "points.csv", result, {"value": values, "seen": seen.astype(int)})
        boxplot_1d(result.points, values, out_dir / "sweep.png", title=f"LAP-{axis} sweep", seen=seen)
        write_summary(out_dir, summary)
    return summary


def cluster_styles(which: str, pipeline: PipelineSettings) -> tuple[list, list[bool]]:
    if which == "lap_x":
        styles = corner_styles()
        return styles, [False] * len(styles)
    if which == "surrogate_x":
        held = set(pipeline.held_out)
        styles = list(range(pipeline.surrogate_styles))
        return styles, [s in held for s in styles]
    raise ValueError(f"cluster set must be 'lap_x' or 'surrogate_x', got {which!r}")


def run_cluster(model: StyleModel, corpus: Corpus, cfg: ExperimentConfig, which: str, out_dir=None,
                with_tsne: bool = True) -> dict:
    """Full-D silhouette and 5-NN style accuracy, plus a 2-D t-SNE view."""
    styles, held_flags = cluster_styles(which, cfg.pipeline)
    a = cfg.analysis
    n_contents = a.cluster_contents if which == "lap_x" else a.surrogate_contents
    contents = _take(corpus.test_ids, n_contents, which)
    images, style_of = eval_images(corpus, contents, styles, cfg.crop)
    labels = [style_key(s) for s in style_of]
    held_keys = {style_key(s) for s, h in zip(styles, held_flags) if h}
    held_mask = np.array([lab in held_keys for lab in labels])
    emb = embed_corpus(images, model)
    pred = knn_predict(emb, labels, k=a.knn_k)
    labels_arr = np.array(labels)
    per_style = {style_key(s): {"knn_accuracy": float((pred[labels_arr == style_key(s)] == style_key(s)).mean()),
                                "held_out": bool(h)} for s, h in zip(styles, held_flags)}
    summary = {
        "set": which, "n_styles": len(styles), "n_points": len(images),
        "silhouette": silhouette(emb, labels), "knn_accuracy": knn_accuracy(emb, labels, a.knn_k),
        "held_out_knn_accuracy": knn_accuracy(emb, labels, a.knn_k, query_mask=held_mask) if held_mask.any() else None,
        "per_style": per_style,
    }
    if with_tsne:
        result = tsne(emb, cfg.tsne(2, len(images)), labels=labels)
        summary["tsne"] = result.config
        summary["kl_final"] = float(result.kl_trace[-1])
        if out_dir is not None:
            from .plots import scatter_2d

            out_dir = Path(out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            export_points(out_dir / "points.csv", result, {"held_out": held_mask.astype(int)})
            scatter_2d(result.points, labels, out_dir / "cluster.png", title=which, held_out=sorted(held_keys))
    if out_dir is not None:
        write_summary(out_dir, summary)
    return summary


def run_pair_auc(model: StyleModel, corpus: Corpus, cfg: ExperimentConfig, styles: Sequence,
                 n_pairs: int | None = None, seed: int | None = None) -> dict:
    """AUC separating same-style/different-content pairs from different-style/same-content pairs."""
    a = cfg.analysis
    n_pairs = a.auc_pairs if n_pairs is None else n_pairs
    contents = _take(corpus.test_ids, a.auc_contents, "pair_auc")
    images, _ = eval_images(corpus, contents, styles, cfg.crop)
    sim = similarity_from_embeddings(embed_corpus(images, model))
    n_c, n_s = len(contents), len(styles)
    rng = np.random.default_rng([0xA0C, cfg.seed if seed is None else seed])
    dist, same = [], []
    for i in range(n_pairs):
        if i % 2 == 0:
            s = int(rng.integers(n_s))
            c1, c2 = rng.choice(n_c, size=2, replace=False)
            dist.append(1.0 - sim[s * n_c + c1, s * n_c + c2])
            same.append(True)
        else:
            c = int(rng.integers(n_c))
            s1, s2 = rng.choice(n_s, size=2, replace=False)
            dist.append(1.0 - sim[s1 * n_c + c, s2 * n_c + c])
            same.append(False)
    dist, same = np.array(dist), np.array(same)
    return {"auc": pair_auc(dist, same), "n_pairs": int(n_pairs),
            "mean_same_style": float(dist[same].mean()), "mean_different_style": float(dist[~same].mean())}


def distance_styles(pipeline: PipelineSettings) -> list:
    if pipeline.kind == "lap":
        return corner_styles()
    return list(range(pipeline.surrogate_styles))


def default_candidates(corpus: Corpus, cfg: ExperimentConfig) -> tuple[StyledImage, list[tuple[str, StyledImage]]]:
    """Reference plus the reference itself, k restyled copies and k same-style other contents."""
    k = cfg.analysis.distance_candidates
    styles = distance_styles(cfg.pipeline)
    if len(styles) < k + 1:
        raise ValueError("not enough styles for the distance grid")
    contents = _take(corpus.test_ids, k + 1, "distance")
    ref_content, ref_style = contents[0], styles[0]
    (ref,), _ = eval_images(corpus, [ref_content], [ref_style], cfg.crop)
    restyled, _ = eval_images(corpus, [ref_content], styles[1:k + 1], cfg.crop)
    recontent, _ = eval_images(corpus, contents[1:], [ref_style], cfg.crop)
    cands = [("self", ref)] + [("different_style", im) for im in restyled] + \
            [("different_content", im) for im in recontent]
    return ref, cands


def run_distance(model: StyleModel, reference: StyledImage, candidates: Sequence[tuple[str, StyledImage]],
                 out_dir=None) -> dict:
    images = [reference] + [im for _, im in candidates]
    d = distance_matrix(images, model)[0, 1:]
    rows = [{"index": i, "relation": rel, "style_id": im.style_id, "content_id": im.content_id,
             "distance": float(d[i])} for i, (rel, im) in enumerate(candidates)]
    same_style = [r["distance"] for r in rows if r["style_id"] == reference.style_id and r["content_id"] != reference.content_id]
    diff_style = [r["distance"] for r in rows if r["style_id"] != reference.style_id]
    summary = {
        "reference": {"style_id": reference.style_id, "content_id": reference.content_id},
        "n_candidates": len(rows),
        "mean_same_style_different_content": float(np.mean(same_style)) if same_style else None,
        "mean_different_style": float(np.mean(diff_style)) if diff_style else None,
    }
    if out_dir is not None:
        from .plots import distance_grid

        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "distances.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["index"])
            writer.writeheader()
            writer.writerows(rows)
        restyle = [(im.pixels, r["distance"]) for (_, im), r in zip(candidates, rows) if r["content_id"] == reference.content_id]
        recontent = [(im.pixels, r["distance"]) for (_, im), r in zip(candidates, rows) if r["content_id"] != reference.content_id]
        grid = [g for g in (restyle, recontent) if g]
        distance_grid(reference.pixels, [[t for t, _ in g] for g in grid], [[v for _, v in g] for g in grid],
                      out_dir / "distance_grid.png",
                      row_titles=["same content", "same style"][:len(grid)])
        export_matrix(out_dir / "matrix.csv", distance_matrix(images, model),
                      ["reference"] + [f"{r['relation']}:{r['index']}" for r in rows])
        write_summary(out_dir, summary)
    return summary
