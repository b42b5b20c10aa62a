"""Exact t-SNE and the statistics used to score style embeddings."""

from __future__ import annotations

import csv
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats
from scipy.cluster.hierarchy import fcluster, linkage

MAX_POINTS = 5000


@dataclass
class TsneConfig:
    out_dims: int = 2
    perplexity: float = 30.0
    iterations: int = 1000
    early_exaggeration: float = 4.0
    exaggeration_iters: int = 100
    learning_rate: float | str = "auto"
    momentum: float = 0.5
    final_momentum: float = 0.8
    momentum_switch: int = 250
    seed: int = 0
    init: str = "pca"
    entropy_tol: float = 1e-4

    def __post_init__(self):
        if self.out_dims not in (1, 2):
            raise ValueError("t-SNE output must be 1-d or 2-d")
        if self.init not in ("pca", "random"):
            raise ValueError("init must be 'pca' or 'random'")
        if self.learning_rate != "auto" and not float(self.learning_rate) > 0:
            raise ValueError("learning_rate must be positive or 'auto'")

    def resolved_learning_rate(self, n: int) -> float:
        # lr 200 overshoots on small n; scaling with n matches it around n = 3200
        if self.learning_rate == "auto":
            return max(n / (4.0 * self.early_exaggeration), 50.0)
        return float(self.learning_rate)


@dataclass
class EmbeddingAnalysis:
    points: np.ndarray
    labels: list
    kl_trace: np.ndarray
    entropies: np.ndarray = field(repr=False, default=None)
    joint_p: np.ndarray = field(repr=False, default=None)
    config: dict = field(default_factory=dict)


def _sq_distances(x: np.ndarray) -> np.ndarray:
    sq = (x * x).sum(axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * x @ x.T
    np.fill_diagonal(d, 0.0)
    return np.maximum(d, 0.0)


def _row_entropy(d_row: np.ndarray, beta: float) -> tuple[float, np.ndarray]:
    shifted = d_row - d_row.min()
    p = np.exp(-shifted * beta)
    total = p.sum()
    p /= total
    # H = log(sum exp(-beta d)) + beta <d>_p, with the shift folded back in
    h = np.log(total) + beta * float((shifted * p).sum())
    return h, p


def conditional_affinities(x: np.ndarray, perplexity: float, tol: float = 1e-4,
                           max_iter: int = 200) -> tuple[np.ndarray, np.ndarray]:
    """Row-stochastic P_{j|i} with per-row Gaussian precision found by bisection.

    Returns the matrix and the attained entropies (nats).
    """
    n = x.shape[0]
    d = _sq_distances(np.asarray(x, dtype=np.float64))
    target = np.log(perplexity)
    p = np.zeros((n, n))
    entropies = np.zeros(n)
    for i in range(n):
        row = np.delete(d[i], i)
        beta, lo, hi = 1.0 / max(np.median(row), 1e-12), 0.0, np.inf
        for _ in range(max_iter):
            h, pi = _row_entropy(row, beta)
            diff = h - target
            if abs(diff) < tol:
                break
            if diff > 0:
                lo = beta
                beta = beta * 2.0 if hi == np.inf else (beta + hi) / 2.0
            else:
                hi = beta
                beta = (beta + lo) / 2.0
        entropies[i] = h
        p[i, np.arange(n) != i] = pi
    return p, entropies


def joint_affinities(p_cond: np.ndarray) -> np.ndarray:
    n = p_cond.shape[0]
    p = (p_cond + p_cond.T) / (2.0 * n)
    return p / p.sum()


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    mask = p > 0
    return float((p[mask] * np.log(p[mask] / np.maximum(q[mask], 1e-300))).sum())


def _student_q(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    num = 1.0 / (1.0 + _sq_distances(y))
    np.fill_diagonal(num, 0.0)
    return num / num.sum(), num


def _init_points(x: np.ndarray, cfg: TsneConfig) -> np.ndarray:
    rng = np.random.default_rng([0x75E, cfg.seed])
    if cfg.init == "random":
        return rng.normal(0.0, 1e-4, (x.shape[0], cfg.out_dims))
    xc = x - x.mean(axis=0)
    u, s, vt = np.linalg.svd(xc, full_matrices=False)
    y = u[:, :cfg.out_dims] * s[:cfg.out_dims]
    # fix SVD sign ambiguity so runs are reproducible across LAPACK builds
    signs = np.sign(y[np.abs(y).argmax(axis=0), np.arange(cfg.out_dims)])
    y = y * np.where(signs == 0, 1.0, signs)
    return y / max(y[:, 0].std(), 1e-12) * 1e-4


def tsne(embeddings, config: TsneConfig = TsneConfig(), labels: Sequence | None = None) -> EmbeddingAnalysis:
    """Exact (dense) t-SNE with early exaggeration, momentum and adaptive gains."""
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("embeddings must be an [n, D] array")
    n = x.shape[0]
    if n < 10:
        raise ValueError("t-SNE needs at least 10 points")
    if n > MAX_POINTS:
        raise ValueError(f"exact t-SNE is capped at {MAX_POINTS} points, got {n}")
    if not config.perplexity < (n - 1) / 3.0:
        raise ValueError(f"perplexity {config.perplexity} infeasible for n={n}; need < {(n - 1) / 3:.2f}")
    p_cond, entropies = conditional_affinities(x, config.perplexity, config.entropy_tol)
    p = joint_affinities(p_cond)
    y = _init_points(x, config)
    lr = config.resolved_learning_rate(n)
    update = np.zeros_like(y)
    gains = np.ones_like(y)
    kl_trace = np.zeros(config.iterations)
    for it in range(config.iterations):
        exaggeration = config.early_exaggeration if it < config.exaggeration_iters else 1.0
        momentum = config.momentum if it < config.momentum_switch else config.final_momentum
        q, num = _student_q(y)
        pq = (exaggeration * p - q) * num
        grad = 4.0 * (pq.sum(axis=1)[:, None] * y - pq @ y)
        kl_trace[it] = kl_divergence(p, q)
        flip = np.sign(grad) != np.sign(update)
        gains = np.where(flip, gains + 0.2, gains * 0.8)
        np.maximum(gains, 0.01, out=gains)
        update = momentum * update - lr * gains * grad
        y = y + update
        y = y - y.mean(axis=0)
    return EmbeddingAnalysis(points=y, labels=list(labels) if labels is not None else [],
                             kl_trace=kl_trace, entropies=entropies, joint_p=p,
                             config={**asdict(config), "resolved_learning_rate": lr})


# ---------------------------------------------------------------------------
# scores
# ---------------------------------------------------------------------------

def _groups(values) -> tuple[np.ndarray, list[np.ndarray]]:
    values = np.asarray(values, dtype=np.float64)
    keys = np.unique(values)
    return keys, [np.flatnonzero(values == k) for k in keys]


def group_medians(points_1d, param_values) -> tuple[np.ndarray, np.ndarray]:
    coords = np.asarray(points_1d, dtype=np.float64).reshape(-1)
    keys, idx = _groups(param_values)
    return keys, np.array([np.median(coords[i]) for i in idx])


def sweep_rank_correlation(points_1d, param_values) -> float:
    """|Spearman rho| between parameter value and per-group median coordinate."""
    keys, medians = group_medians(points_1d, param_values)
    if keys.size < 2:
        raise ValueError("rank correlation needs at least 2 parameter groups")
    if np.ptp(medians) == 0:
        return 0.0
    ranks = stats.rankdata(medians)
    n = keys.size
    if np.unique(ranks).size == n:
        # keys are sorted, so their ranks are 1..n; the d^2 form is exact for integer ranks
        d = ranks - np.arange(1, n + 1)
        rho = 1.0 - 6.0 * float((d * d).sum()) / (n * (n * n - 1))
    else:
        rho = stats.spearmanr(keys, medians).statistic
    return float(min(abs(rho), 1.0)) if np.isfinite(rho) else 0.0


def cosine_distances(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    z = x / np.maximum(np.linalg.norm(x, axis=1, keepdims=True), 1e-12)
    d = 1.0 - z @ z.T
    np.fill_diagonal(d, 0.0)
    return np.clip(d, 0.0, 2.0)


def _distances(x, metric: str) -> np.ndarray:
    if metric == "cosine":
        return cosine_distances(x)
    if metric == "euclidean":
        return np.sqrt(_sq_distances(np.asarray(x, dtype=np.float64)))
    raise ValueError(f"unsupported metric {metric!r}")


def silhouette_samples(embeddings, labels, metric: str = "cosine") -> np.ndarray:
    labels = np.asarray(labels)
    uniq = np.unique(labels)
    if uniq.size < 2:
        raise ValueError("silhouette needs at least 2 distinct labels")
    d = _distances(embeddings, metric)
    n = labels.size
    scores = np.zeros(n)
    members = {u: np.flatnonzero(labels == u) for u in uniq}
    singletons = [u for u, m in members.items() if m.size < 2]
    if singletons:
        warnings.warn(f"singleton clusters get silhouette 0: {singletons}", RuntimeWarning, stacklevel=2)
    for i in range(n):
        own = members[labels[i]]
        if own.size < 2:
            continue
        a = d[i, own].sum() / (own.size - 1)
        b = min(d[i, m].mean() for u, m in members.items() if u != labels[i])
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0 else (b - a) / denom
    return scores


def silhouette(embeddings, labels, metric: str = "cosine") -> float:
    """Mean silhouette in the full embedding space."""
    return float(silhouette_samples(embeddings, labels, metric).mean())


def knn_predict(embeddings, labels, k: int = 5, metric: str = "cosine") -> np.ndarray:
    """Leave-one-out k-NN majority vote; ties go to the label with the nearest member."""
    labels = np.asarray(labels)
    d = _distances(embeddings, metric)
    np.fill_diagonal(d, np.inf)
    order = np.argsort(d, axis=1, kind="stable")[:, :k]
    preds = []
    for row in order:
        votes: dict = {}
        for rank, j in enumerate(row):
            count, first = votes.get(labels[j], (0, rank))
            votes[labels[j]] = (count + 1, first)
        preds.append(max(votes.items(), key=lambda kv: (kv[1][0], -kv[1][1]))[0])
    return np.array(preds)


def knn_accuracy(embeddings, labels, k: int = 5, metric: str = "cosine", query_mask=None) -> float:
    labels = np.asarray(labels)
    preds = knn_predict(embeddings, labels, k, metric)
    hit = preds == labels
    if query_mask is not None:
        hit = hit[np.asarray(query_mask, dtype=bool)]
    return float(hit.mean())


def interpolation_check(points_1d, param_values, seen_flags, tie_tol: float = 1e-9) -> tuple[bool, dict]:
    """Each unseen group's median must fall strictly between its seen neighbours' medians."""
    values = np.asarray(param_values, dtype=np.float64)
    seen = np.asarray(seen_flags, dtype=bool)
    keys, medians = group_medians(points_1d, values)
    group_seen = {}
    for k in keys:
        flags = seen[values == k]
        if flags.any() != flags.all():
            raise ValueError(f"group {k} mixes seen and unseen points")
        group_seen[k] = bool(flags[0])
    median_of = dict(zip(keys.tolist(), medians.tolist()))
    seen_keys = sorted(k for k, s in group_seen.items() if s)
    results = []
    for k in sorted(k for k, s in group_seen.items() if not s):
        below = [s for s in seen_keys if s < k]
        above = [s for s in seen_keys if s > k]
        if not below or not above:
            results.append({"value": k, "passed": False, "reason": "no seen neighbour on both sides"})
            continue
        lo_k, hi_k = below[-1], above[0]
        m, m_lo, m_hi = median_of[k], median_of[lo_k], median_of[hi_k]
        lo, hi = min(m_lo, m_hi), max(m_lo, m_hi)
        passed = (m - lo) > tie_tol and (hi - m) > tie_tol
        results.append({"value": k, "median": m, "neighbours": [lo_k, hi_k],
                        "neighbour_medians": [m_lo, m_hi], "passed": bool(passed)})
    n_pass = sum(r["passed"] for r in results)
    report = {
        "groups": results,
        "passed": n_pass,
        "total": len(results),
        "fraction": n_pass / len(results) if results else 1.0,
        "violations": [r["value"] for r in results if not r["passed"]],
    }
    return bool(results) and n_pass == len(results), report


def pair_auc(distances, same_style) -> float:
    """Rank AUC of distance as a score for 'different style' (ties count half)."""
    d = np.asarray(distances, dtype=np.float64)
    same = np.asarray(same_style, dtype=bool)
    n_same, n_diff = int(same.sum()), int((~same).sum())
    if n_same == 0 or n_diff == 0:
        raise ValueError("pair_auc needs both same-style and different-style pairs")
    ranks = stats.rankdata(d)
    u = ranks[~same].sum() - n_diff * (n_diff + 1) / 2.0
    return float(u / (n_same * n_diff))


def cluster_purity(points, labels, n_clusters: int) -> float:
    """Purity of a single-linkage clustering cut at ``n_clusters``."""
    labels = np.asarray(labels)
    assign = fcluster(linkage(np.asarray(points, dtype=np.float64), method="single"), n_clusters, "maxclust")
    total = 0
    for c in np.unique(assign):
        _, counts = np.unique(labels[assign == c], return_counts=True)
        total += counts.max()
    return total / labels.size


def export_points(path, analysis: EmbeddingAnalysis, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    extra = extra or {}
    dims = analysis.points.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i}" for i in range(dims)] + ["label"] + list(extra))
        for i, row in enumerate(analysis.points):
            label = analysis.labels[i] if analysis.labels else ""
            writer.writerow([f"{v:.6g}" for v in row] + [label] + [extra[k][i] for k in extra])
    return path
