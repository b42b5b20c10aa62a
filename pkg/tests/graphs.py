"""Random differentiable graphs that touch every op, for finite-difference checks."""

import numpy as np

from stylex import autodiff as ad
from stylex.autodiff import Tensor

OPS = ("conv2d", "normalize_batch", "relu", "max_pool", "average_pool", "global_average_pool", "reshape",
       "matmul", "linear", "add", "mul", "scale", "neg", "sub", "cosine_similarity", "mean", "sum")


def _leaf(rng, shape, scale=1.0):
    return Tensor(rng.normal(0.0, scale, shape), requires_grad=True, dtype=np.float64)


def random_graph(seed: int):
    """Returns ``(fn, leaves, used_ops)`` for one randomized composite graph."""
    rng = np.random.default_rng([77, seed])
    b = int(rng.integers(2, 4))
    c = int(rng.integers(1, 3))
    f = int(rng.integers(2, 4))
    size = int(rng.integers(6, 9))
    stride = int(rng.integers(1, 3))
    pad = int(rng.integers(0, 2))
    m = int(rng.integers(2, 5))
    bn_train = bool(rng.random() < 0.5)
    pool = str(rng.choice(["max", "average"]))

    x = _leaf(rng, (b, c, size, size))
    kernel = _leaf(rng, (f, c, 3, 3), 0.5)
    gamma = _leaf(rng, (f,))
    beta = _leaf(rng, (f,))
    running_mean = rng.normal(0.0, 0.3, f)
    running_var = rng.uniform(0.5, 2.0, f)
    out_size = (size + 2 * pad - 3) // stride + 1
    pooled = out_size // 2
    w_lin = _leaf(rng, (m, f))
    bias = _leaf(rng, (m,))
    w_mat = _leaf(rng, (f * pooled * pooled, m), 0.3)
    row = _leaf(rng, (1, m))
    other = _leaf(rng, (b, m))

    def fn():
        h = ad.conv2d(x, kernel, stride, pad)
        h = ad.normalize_batch(h, gamma, beta, bn_train,
                               None if bn_train else running_mean.copy(),
                               None if bn_train else running_var.copy())
        h = ad.relu(h)
        h = ad.max_pool(h, 2) if pool == "max" else ad.average_pool(h, 2)
        head_a = ad.linear(ad.global_average_pool(h), w_lin, bias)
        head_b = ad.matmul(ad.reshape(h, (b, -1)), w_mat)
        mixed = ad.add(head_a, row) * other - ad.scale(head_b, 0.5)
        mixed = ad.neg(mixed) + head_b
        cos = ad.cosine_similarity(mixed, other)
        return ad.mean_all(cos) + ad.scale(ad.sum_all(head_a), 0.1)

    used = set(OPS) - {"average_pool" if pool == "max" else "max_pool"}
    return fn, [x, kernel, gamma, beta, w_lin, bias, w_mat, row, other], used
