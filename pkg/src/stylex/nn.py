"""Layers, the residual style encoder, the predictor head and SGD."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class Module:
    training = True

    def parameters(self) -> Iterator[tuple[str, Tensor]]:
        yield from self._walk("params")

    def buffers(self) -> Iterator[tuple[str, np.ndarray]]:
        yield from self._walk("buffers")

    def state(self) -> dict[str, np.ndarray]:
        """Parameters and buffers by dotted name, in a fixed order."""
        out = {name: p.data for name, p in self.parameters()}
        out.update(dict(self.buffers()))
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.parameters())
        buffers = dict(self.buffers())
        expected = set(params) | set(buffers)
        if set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={extra[:5]}")
        for name, value in state.items():
            target = params[name].data if name in params else buffers[name]
            if target.shape != value.shape:
                raise ValueError(f"{name}: shape {value.shape} != {target.shape}")
            target[...] = value

    def _walk(self, kind: str, prefix: str = ""):
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if kind == "params" and isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif kind == "buffers" and key.startswith("running_") and isinstance(value, np.ndarray):
                yield name, value
            elif isinstance(value, Module):
                yield from value._walk(kind, name + ".")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item._walk(kind, f"{name}.{i}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, list):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator, stride: int = 1, padding: int = 0):
        # He init, fan-out mode
        std = math.sqrt(2.0 / (cout * k * k))
        self.weight = Tensor(rng.normal(0.0, std, (cout, cin, k, k)), requires_grad=True)
        self.stride = stride
        self.padding = padding

    def forward(self, x):
        return ad.conv2d(x, self.weight, self.stride, self.padding)


class BatchNorm(Module):
    def __init__(self, channels: int, affine: bool = True, momentum: float = 0.1):
        self.gamma = Tensor(np.ones(channels), requires_grad=True) if affine else None
        self.beta = Tensor(np.zeros(channels), requires_grad=True) if affine else None
        self.running_mean = np.zeros(channels, dtype=np.float32)
        self.running_var = np.ones(channels, dtype=np.float32)
        self.momentum = momentum

    def forward(self, x):
        return ad.normalize_batch(x, self.gamma, self.beta, self.training,
                                  self.running_mean, self.running_var, self.momentum)


class Linear(Module):
    def __init__(self, nin: int, nout: int, rng: np.random.Generator, bias: bool = True):
        bound = 1.0 / math.sqrt(nin)
        self.weight = Tensor(rng.uniform(-bound, bound, (nout, nin)), requires_grad=True)
        self.bias = Tensor(rng.uniform(-bound, bound, nout), requires_grad=True) if bias else None

    def forward(self, x):
        return ad.linear(x, self.weight, self.bias)


class Sequential(Module):
    def __init__(self, *layers):
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x


class ReLU(Module):
    def forward(self, x):
        return ad.relu(x)


class BasicBlock(Module):
    def __init__(self, cin: int, cout: int, stride: int, rng: np.random.Generator):
        self.conv1 = Conv2d(cin, cout, 3, rng, stride=stride, padding=1)
        self.bn1 = BatchNorm(cout)
        self.conv2 = Conv2d(cout, cout, 3, rng, padding=1)
        self.bn2 = BatchNorm(cout)
        self.shortcut = None
        if stride != 1 or cin != cout:
            self.shortcut = Sequential(Conv2d(cin, cout, 1, rng, stride=stride), BatchNorm(cout))

    def forward(self, x):
        out = ad.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        skip = x if self.shortcut is None else self.shortcut(x)
        return ad.relu(out + skip)


@dataclass
class EncoderConfig:
    stages: list = field(default_factory=lambda: [(16, 2), (32, 2), (64, 2), (128, 2)])
    embedding_dim: int = 128
    projection_hidden: int = 128
    input_size: tuple = (64, 64)
    stem_channels: int = 16
    stem_stride: int = 2

    def __post_init__(self):
        self.stages = [tuple(s) for s in self.stages]
        self.input_size = tuple(self.input_size)
        if self.embedding_dim < 8:
            raise ValueError("embedding_dim must be >= 8")

    @classmethod
    def paper_scale(cls) -> "EncoderConfig":
        """ResNet-18 layout with a 2048-d embedding on 400x400 inputs."""
        return cls(stages=[(64, 2), (128, 2), (256, 2), (512, 2)], embedding_dim=2048,
                   projection_hidden=2048, input_size=(400, 400), stem_channels=64, stem_stride=2)


@dataclass
class PredictorConfig:
    hidden_dim: int = 64
    output_dim: int = 128

    def __post_init__(self):
        if self.hidden_dim >= self.output_dim:
            raise ValueError("predictor needs a bottleneck: hidden_dim < output_dim")


class Encoder(Module):
    """Residual backbone, global average pooling, 3-layer projection MLP."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.stem = Conv2d(1, cfg.stem_channels, 3, rng, stride=cfg.stem_stride, padding=1)
        self.stem_bn = BatchNorm(cfg.stem_channels)
        blocks = []
        cin = cfg.stem_channels
        for i, (channels, n_blocks) in enumerate(cfg.stages):
            for j in range(n_blocks):
                stride = 2 if (i > 0 and j == 0) else 1
                blocks.append(BasicBlock(cin, channels, stride, rng))
                cin = channels
        self.blocks = blocks
        hid, d = cfg.projection_hidden, cfg.embedding_dim
        self.projection = Sequential(
            Linear(cin, hid, rng, bias=False), BatchNorm(hid), ReLU(),
            Linear(hid, hid, rng, bias=False), BatchNorm(hid), ReLU(),
            Linear(hid, d, rng, bias=False), BatchNorm(d, affine=False),
        )

    def forward(self, x):
        h, w = self.cfg.input_size
        if x.ndim != 4 or x.shape[1:] != (1, h, w):
            raise ValueError(f"encoder expects [B, 1, {h}, {w}] input, got {x.shape}")
        out = ad.relu(self.stem_bn(self.stem(x)))
        for block in self.blocks:
            out = block(out)
        return self.projection(ad.global_average_pool(out))


class Predictor(Module):
    def __init__(self, cfg: PredictorConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.net = Sequential(
            Linear(cfg.output_dim, cfg.hidden_dim, rng, bias=False), BatchNorm(cfg.hidden_dim), ReLU(),
            Linear(cfg.hidden_dim, cfg.output_dim, rng),
        )

    def forward(self, x):
        return self.net(x)


class SGD:
    """SGD with heavy-ball momentum; weight decay is added to the gradient."""

    def __init__(self, params: list[Tensor], lr: float, momentum: float = 0.9, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            g = p.grad + self.weight_decay * p.data if self.weight_decay else p.grad
            v *= self.momentum
            v += g
            p.data -= self.lr * v


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / max(total_steps, 1)))
