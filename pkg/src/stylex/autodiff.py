"""Dense tensors with define-by-run reverse-mode differentiation.

Every differentiable operation records a :class:`Node` holding references to
its inputs and a closure that maps the output gradient to input gradients.
Nodes carry a global creation index, so the recorded order of the tape is
recoverable from the graph alone; :func:`backward` replays it in reverse.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DEFAULT_DTYPE = np.float32
NORM_EPS = 1e-12
VARIANCE_EPS = 1e-5

_sequence = itertools.count()
_grad_enabled = True


class NormUnderflowError(ValueError):
    """A vector norm fell below the underflow floor."""


class GraphConsumedError(RuntimeError):
    """backward() was called on a graph whose tape was already replayed."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Node:
    __slots__ = ("op", "inputs", "backward_fn", "index", "consumed")

    def __init__(self, op: str, inputs: Sequence["Tensor"], backward_fn: Callable):
        self.op = op
        self.inputs = tuple(inputs)
        self.backward_fn = backward_fn
        self.index = next(_sequence)
        self.consumed = False


class Tensor:
    """An n-d array of reals with an optional gradient buffer."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        dtype = DEFAULT_DTYPE if dtype is None else dtype
        self.data = np.ascontiguousarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.node: Optional[Node] = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other, self)))

    def __rsub__(self, other):
        return add(_as_tensor(other, self), neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x), dtype=dtype)


def _record(op: str, out_data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    needs = _grad_enabled and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs, dtype=out_data.dtype)
    if needs:
        out.node = Node(op, inputs, backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def _collect_nodes(root: Tensor) -> list[Tensor]:
    seen: set[int] = set()
    found: list[Tensor] = []
    stack = [root]
    while stack:
        t = stack.pop()
        if t.node is None or id(t) in seen:
            continue
        seen.add(id(t))
        found.append(t)
        stack.extend(t.node.inputs)
    return found


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires_grad leaf."""
    if loss.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if loss.node is None:
        if loss.requires_grad:
            loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1
            return
        raise RuntimeError("loss does not depend on any tensor that requires grad")
    tensors = _collect_nodes(loss)
    if any(t.node.consumed for t in tensors):
        raise GraphConsumedError("backward() called twice on the same recorded graph")
    # reverse creation order is a valid topological order for define-by-run graphs
    tensors.sort(key=lambda t: t.node.index, reverse=True)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for t in tensors:
        node = t.node
        g = grads.pop(id(t), None)
        node.consumed = True
        if g is None:
            continue
        input_grads = node.backward_fn(g)
        for inp, ig in zip(node.inputs, input_grads):
            if ig is None or not inp.requires_grad:
                continue
            if inp.node is None:
                ig = ig.astype(inp.dtype, copy=False)
                inp.grad = ig.copy() if inp.grad is None else inp.grad + ig
            else:
                key = id(inp)
                grads[key] = ig if key not in grads else grads[key] + ig
        # drop saved activations early
        node.backward_fn = _consumed_backward


def _consumed_backward(_g):
    raise GraphConsumedError("graph already consumed")


# ---------------------------------------------------------------------------
# elementwise and shape operations
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a)
    sa, sb = a.shape, b.shape
    return _record("add", a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def neg(a: Tensor) -> Tensor:
    return _record("neg", -a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a)
    ad, bd = a.data, b.data
    return _record("mul", ad * bd, (a, b),
                   lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def scale(a: Tensor, factor: float) -> Tensor:
    f = a.dtype.type(factor)
    return _record("scale", a.data * f, (a,), lambda g: (g * f,))


def reshape(a: Tensor, shape) -> Tensor:
    original = a.shape
    return _record("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(original),))


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _record("sum", np.asarray(a.data.sum(), dtype=a.dtype), (a,),
                   lambda g: (np.broadcast_to(g, shape).copy(),))


def mean_all(a: Tensor) -> Tensor:
    shape, n = a.shape, a.size
    return _record("mean", np.asarray(a.data.mean(), dtype=a.dtype), (a,),
                   lambda g: (np.full(shape, g / n, dtype=g.dtype),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _record("relu", a.data * mask, (a,), lambda g: (g * mask,))


def stop_gradient(a: Tensor) -> Tensor:
    """Forward identity that is invisible to the backward pass."""
    return Tensor(a.data.copy(), requires_grad=False, dtype=a.dtype)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _record("matmul", ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Row-wise affine map ``x @ weight.T + bias`` with weight shaped [M, N]."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ValueError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    inputs: tuple = (x, weight)
    if bias is not None:
        out = out + bias.data
        inputs = (x, weight, bias)

    def backward_fn(g):
        grads = [g @ wd, g.T @ xd]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    return _record("linear", out, inputs, backward_fn)


# ---------------------------------------------------------------------------
# convolution and pooling
# ---------------------------------------------------------------------------

def _windows(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    """View of shape [B, C, Ho, Wo, k, k]."""
    return sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]


def _fold(cols: np.ndarray, padded_shape: tuple, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Adjoint of :func:`_windows`; cols is [B, C, Ho, Wo, k, k]."""
    out = np.zeros(padded_shape, dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, :, :, :, i, j]
    return out


def _im2col(xd: np.ndarray, k: int, stride: int, padding: int):
    """Patch matrix [B*Ho*Wo, k*k*C], channels fastest."""
    xt = xd.transpose(0, 2, 3, 1)
    if padding:
        xt = np.pad(xt, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    b, hp, wp, c = xt.shape
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    cols = np.empty((b, ho, wo, k * k, c), dtype=xd.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, :, i * k + j, :] = xt[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride, :]
    return cols.reshape(b * ho * wo, k * k * c), ho, wo


def _kernel_matrix(wd: np.ndarray) -> np.ndarray:
    f, c, k, _ = wd.shape
    return wd.transpose(0, 2, 3, 1).reshape(f, k * k * c)


def _conv_forward(xd: np.ndarray, wd: np.ndarray, stride: int, padding: int):
    b = xd.shape[0]
    f, c, k, _ = wd.shape
    cols, ho, wo = _im2col(xd, k, stride, padding)
    out = (cols @ _kernel_matrix(wd).T).reshape(b, ho, wo, f).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out), cols


def _conv_input_grad(g: np.ndarray, wd: np.ndarray, in_shape: tuple, stride: int, padding: int) -> np.ndarray:
    """Transposed convolution: dilate, pad, correlate with the flipped kernel."""
    b, f, ho, wo = g.shape
    _, c, h, w = in_shape
    k = wd.shape[2]
    if stride > 1:
        dil = np.zeros((b, f, (ho - 1) * stride + 1, (wo - 1) * stride + 1), dtype=g.dtype)
        dil[:, :, ::stride, ::stride] = g
        g = dil
    lead = k - 1 - padding
    if lead < 0:
        g = g[:, :, -lead:, -lead:]
        lead_h = lead_w = 0
    else:
        lead_h = lead_w = lead
    trail_h = h - (g.shape[2] + lead_h - k + 1)
    trail_w = w - (g.shape[3] + lead_w - k + 1)
    g = np.pad(g, ((0, 0), (0, 0), (lead_h, max(trail_h, 0)), (lead_w, max(trail_w, 0))))
    if trail_h < 0 or trail_w < 0:
        g = g[:, :, :g.shape[2] + min(trail_h, 0), :g.shape[3] + min(trail_w, 0)]
    flipped = np.ascontiguousarray(wd[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    out, _ = _conv_forward(g, flipped, 1, 0)
    return out


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of [B,C,H,W] input with an [F,C,k,k] kernel."""
    if x.ndim != 4 or kernel.ndim != 4:
        raise ValueError(f"conv2d expects 4-d input and kernel, got {x.shape} and {kernel.shape}")
    b, c, h, w = x.shape
    f, kc, k, k2 = kernel.shape
    if kc != c:
        raise ValueError(f"conv2d channel mismatch: input has {c} channels, kernel expects {kc}")
    if k != k2:
        raise ValueError("conv2d supports square kernels only")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if k > h + 2 * padding or k > w + 2 * padding:
        raise ValueError(f"kernel {k} larger than padded input {h + 2 * padding}x{w + 2 * padding}")
    wd = kernel.data
    out, cols = _conv_forward(x.data, wd, stride, padding)
    ho, wo = out.shape[2], out.shape[3]
    in_shape = x.shape

    def backward_fn(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(b * ho * wo, f)
        gk = (gmat.T @ cols).reshape(f, k, k, c).transpose(0, 3, 1, 2)
        gx = _conv_input_grad(g, wd, in_shape, stride, padding) if x.requires_grad else None
        return gx, gk

    return _record("conv2d", out, (x, kernel), backward_fn)


def max_pool(x: Tensor, kernel: int = 2, stride: int | None = None, padding: int = 0) -> Tensor:
    stride = kernel if stride is None else stride
    b, c, h, w = x.shape
    xd = x.data
    if padding:
        xd = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                    constant_values=-np.inf)
    ho = (h + 2 * padding - kernel) // stride + 1
    wo = (w + 2 * padding - kernel) // stride + 1
    win = _windows(xd, kernel, stride).reshape(b, c, ho, wo, kernel * kernel)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    padded_shape = xd.shape

    def backward_fn(g):
        cols = np.zeros((b, c, ho, wo, kernel * kernel), dtype=g.dtype)
        np.put_along_axis(cols, arg[..., None], g[..., None], axis=-1)
        gx = _fold(cols.reshape(b, c, ho, wo, kernel, kernel), padded_shape, kernel, stride, ho, wo)
        if padding:
            gx = gx[:, :, padding:padding + h, padding:padding + w]
        return (gx,)

    return _record("max_pool", np.ascontiguousarray(out), (x,), backward_fn)


def average_pool(x: Tensor, kernel: int = 2, stride: int | None = None) -> Tensor:
    stride = kernel if stride is None else stride
    b, c, h, w = x.shape
    ho = (h - kernel) // stride + 1
    wo = (w - kernel) // stride + 1
    out = _windows(x.data, kernel, stride).mean(axis=(-2, -1))
    area = kernel * kernel

    def backward_fn(g):
        cols = np.broadcast_to((g / area)[..., None, None], (b, c, ho, wo, kernel, kernel))
        return (_fold(cols, x.shape, kernel, stride, ho, wo),)

    return _record("average_pool", np.ascontiguousarray(out), (x,), backward_fn)


def global_average_pool(x: Tensor) -> Tensor:
    """[B, C, H, W] -> [B, C]."""
    b, c, h, w = x.shape
    n = h * w
    return _record("global_average_pool", x.data.mean(axis=(2, 3)), (x,),
                   lambda g: (np.broadcast_to((g / n)[:, :, None, None], (b, c, h, w)).copy(),))


# ---------------------------------------------------------------------------
# normalization and similarity
# ---------------------------------------------------------------------------

def normalize_batch(x: Tensor, gamma: Tensor | None, beta: Tensor | None, training: bool,
                    running_mean: np.ndarray | None = None, running_var: np.ndarray | None = None,
                    momentum: float = 0.1, eps: float = VARIANCE_EPS) -> Tensor:
    """Batch normalization over all axes except the channel axis 1.

    Works for [B, C] and [B, C, H, W] inputs. In training mode the running
    buffers are updated in place with the unbiased batch variance.
    """
    if x.ndim not in (2, 4):
        raise ValueError(f"normalize_batch expects 2-d or 4-d input, got {x.shape}")
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    bshape = (1, -1) if x.ndim == 2 else (1, -1, 1, 1)
    xd = x.data
    if training:
        if x.shape[0] < 2:
            raise ValueError("normalize_batch in train mode needs a batch of at least 2")
        mu = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        if running_mean is not None:
            n = xd.size // xd.shape[1]
            running_mean *= 1 - momentum
            running_mean += momentum * mu
            running_var *= 1 - momentum
            running_var += momentum * var * (n / max(n - 1, 1))
    else:
        if running_mean is None:
            raise ValueError("eval mode requires running statistics")
        mu, var = running_mean.astype(xd.dtype), running_var.astype(xd.dtype)
    inv = (1.0 / np.sqrt(var + eps)).astype(xd.dtype)
    xhat = (xd - mu.reshape(bshape)) * inv.reshape(bshape)
    out = xhat
    if gamma is not None:
        out = out * gamma.data.reshape(bshape)
    if beta is not None:
        out = out + beta.data.reshape(bshape)
    inputs = [x] + [t for t in (gamma, beta) if t is not None]

    def backward_fn(g):
        grads = []
        gx_hat = g * gamma.data.reshape(bshape) if gamma is not None else g
        if training:
            mean_g = gx_hat.mean(axis=axes, keepdims=True)
            mean_gx = (gx_hat * xhat).mean(axis=axes, keepdims=True)
            gx = (gx_hat - mean_g - xhat * mean_gx) * inv.reshape(bshape)
        else:
            gx = gx_hat * inv.reshape(bshape)
        grads.append(gx)
        if gamma is not None:
            grads.append((g * xhat).sum(axis=axes))
        if beta is not None:
            grads.append(g.sum(axis=axes))
        return grads

    return _record("normalize_batch", out, inputs, backward_fn)


def cosine_similarity(a: Tensor, b: Tensor, eps: float = NORM_EPS) -> Tensor:
    """Row-wise cosine similarity of two [B, D] tensors -> [B]."""
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError(f"cosine_similarity needs equal [B, D] shapes, got {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    na = np.sqrt((ad * ad).sum(axis=1))
    nb = np.sqrt((bd * bd).sum(axis=1))
    if (na < eps).any() or (nb < eps).any():
        raise NormUnderflowError("cosine_similarity: row norm below 1e-12")
    dot = (ad * bd).sum(axis=1)
    denom = na * nb
    cos = dot / denom

    def backward_fn(g):
        gcol = g[:, None]
        ga = gcol * (bd / denom[:, None] - (cos / (na * na))[:, None] * ad)
        gb = gcol * (ad / denom[:, None] - (cos / (nb * nb))[:, None] * bd)
        return ga, gb

    return _record("cosine_similarity", cos, (a, b), backward_fn)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def numerical_gradient(fn: Callable[[], Tensor], leaf: Tensor, step: float = 1e-3) -> np.ndarray:
    """Central differences of scalar ``fn()`` w.r.t. each element of ``leaf``."""
    grad = np.zeros(leaf.shape, dtype=np.float64)
    flat = leaf.data.reshape(-1)
    out = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = np.float64(fn().data.sum())
            flat[i] = orig - step
            down = np.float64(fn().data.sum())
            flat[i] = orig
            out[i] = (up - down) / (2 * step)
    return grad


def gradcheck(fn: Callable[[], Tensor], leaves: Sequence[Tensor], step: float = 1e-3) -> list[float]:
    """Relative error ``|analytic - numeric| / max(|analytic|, |numeric|)`` per leaf.

    Norms are Euclidean over the whole leaf. Use 64-bit leaves for tight checks.
    """
    for leaf in leaves:
        leaf.grad = None
    backward(fn())
    errors = []
    for leaf in leaves:
        analytic = np.zeros(leaf.shape) if leaf.grad is None else leaf.grad.astype(np.float64)
        numeric = numerical_gradient(fn, leaf, step)
        scale_ = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
        errors.append(float(np.linalg.norm(analytic - numeric) / scale_))
    return errors
