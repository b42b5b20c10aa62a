"""Exact t-SNE and the statistics used to read the style embeddings.

Three Gaussian blobs go through 2-D t-SNE, then a toy 1-D sweep shows how
rank correlation on group medians and the interpolation check behave.

    python demos/03_tsne_and_statistics.py [out_dir]
"""

import sys
from pathlib import Path

import numpy as np

from stylex.analysis import (TsneConfig, cluster_purity, interpolation_check, knn_accuracy, silhouette,
                             sweep_rank_correlation, tsne)
from stylex.plots import boxplot_1d, scatter_2d

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)
rng = np.random.default_rng(0)

centres = 10.0 / np.sqrt(2) * np.eye(3, 16)
x = np.concatenate([c + rng.normal(size=(20, 16)) for c in centres])
labels = np.repeat(["a", "b", "c"], 20)
result = tsne(x, TsneConfig(perplexity=10, seed=0), labels=labels.tolist())
print(f"KL after exaggeration {result.kl_trace[100]:.3f}, final {result.kl_trace[-1]:.3f}")
print(f"worst entropy miss {np.abs(result.entropies - np.log(10)).max():.1e} nats")
print(f"purity {cluster_purity(result.points, labels, 3)}, silhouette {silhouette(x, labels):.3f}, "
      f"5-NN {knn_accuracy(x, labels):.3f}")
scatter_2d(result.points, labels.tolist(), out / "blobs.png", "three blobs", held_out=set())

# a 1-D feature that drifts with a parameter, with odd values never "trained"
values = np.repeat(np.arange(11.0), 8)
feature = np.tanh((values - 5) / 4) + 0.05 * rng.normal(size=values.size)
emb = np.stack([feature, rng.normal(size=values.size) * 0.05], axis=1)
line = tsne(emb, TsneConfig(out_dims=1, perplexity=15, seed=0)).points
print(f"|rho| of medians against the parameter: {sweep_rank_correlation(line, values):.3f}")
ok, report = interpolation_check(line, values, values % 2 == 0)
print(f"interpolation: {report['passed']}/{report['total']} odd groups between their neighbours")
boxplot_1d(line, values, out / "sweep.png", "toy sweep", seen=np.asarray(values) % 2 == 0)
print(f"wrote {out / 'blobs.png'} and {out / 'sweep.png'}")
