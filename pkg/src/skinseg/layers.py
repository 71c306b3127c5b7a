"""Layers with explicit forward and backward passes.

Every layer caches what its backward pass needs during ``forward`` and
overwrites the ``grad`` of each of its :class:`Param` objects during
``backward``.  A layer instance appears at exactly one place in a network, so
overwriting (rather than accumulating) gradients is safe.

All convolutions are 3x3, stride 1, zero padding 1.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ParameterError, ShapeError, StateError
from .tensor import DTYPE, Rng, concat_channels, split_channels


@dataclass(eq=False)
class Param:
    """One parameter tensor plus its gradient and momentum buffer.

    ``value`` stays ``None`` until :meth:`initialize` runs, so paper-scale
    networks can be built (and counted) without allocating 150M doubles.
    """

    name: str
    shape: tuple[int, ...]
    init: str = "zeros"  # "he", "glorot" or "zeros"
    fan_in: int = 1
    fan_out: int = 1
    value: np.ndarray | None = field(default=None, repr=False)
    grad: np.ndarray | None = field(default=None, repr=False)
    velocity: np.ndarray | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))

    def initialize(self, rng: Rng) -> None:
        if self.init == "he":
            limit = np.sqrt(6.0 / self.fan_in)
        elif self.init == "glorot":
            limit = np.sqrt(6.0 / (self.fan_in + self.fan_out))
        elif self.init == "zeros":
            limit = 0.0
        else:
            raise ParameterError(f"unknown initializer {self.init!r}")
        if limit == 0.0:
            self.value = np.zeros(self.shape, dtype=DTYPE)
        else:
            self.value = rng.uniform(-limit, limit, self.shape).astype(DTYPE)
        self.grad = np.zeros(self.shape, dtype=DTYPE)
        self.velocity = np.zeros(self.shape, dtype=DTYPE)


@dataclass
class BlockConfig:
    """Sizes of one structural block: filters ``n``, spatial extent ``m``,
    merge arity ``z``, dense depth and dense growth."""

    n: int = 1
    m: int = 1
    z: int = 1
    depth: int = 1
    growth: int = 1

    def __post_init__(self):
        for k in ("n", "m", "z", "depth", "growth"):
            if getattr(self, k) < 1:
                raise ParameterError(f"BlockConfig.{k} must be >= 1")


class Layer:
    stochastic = False

    def parameters(self) -> list[Param]:
        return []

    def forward(self, x, train: bool = False, rng: Rng | None = None):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def _need_cache(self):
        cache = getattr(self, "_cache", None)
        if cache is None:
            raise StateError(f"{type(self).__name__}.backward called without a cached forward")
        return cache


def _im2col(x: np.ndarray) -> np.ndarray:
    """(N,C,H,W) -> (N,H,W,C*9); column index is c*9 + dy*3 + dx."""
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))  # N,C,H,W,3,3
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n, h, w, c * 9)


def _col2im(dcols: np.ndarray, xshape: tuple[int, ...]) -> np.ndarray:
    n, c, h, w = xshape
    d = dcols.reshape(n, h, w, c, 3, 3)
    dxp = np.zeros((n, c, h + 2, w + 2), dtype=dcols.dtype)
    for ky in range(3):
        for kx in range(3):
            dxp[:, :, ky:ky + h, kx:kx + w] += d[:, :, :, :, ky, kx].transpose(0, 3, 1, 2)
    return dxp[:, :, 1:-1, 1:-1]


class Conv2d(Layer):
    """3x3 same-padded convolution: out[n,o] = bias[o] + sum_c w[o,c] * in[n,c]."""

    def __init__(self, in_channels: int, out_channels: int, name: str = "conv", init: str = "he"):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.weight = Param(f"{name}.weight", (out_channels, in_channels, 3, 3), init,
                            fan_in=in_channels * 9, fan_out=out_channels * 9)
        self.bias = Param(f"{name}.bias", (out_channels,))
        self._cache = None

    def parameters(self):
        return [self.weight, self.bias]

    def forward(self, x, train=False, rng=None):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(f"{self.weight.name}: expected [N,{self.in_channels},H,W], got {x.shape}")
        cols = _im2col(x)
        wmat = self.weight.value.reshape(self.out_channels, -1)
        y = cols @ wmat.T + self.bias.value
        self._cache = (cols, x.shape)
        return np.ascontiguousarray(y.transpose(0, 3, 1, 2))

    def backward(self, dy):
        cols, xshape = self._need_cache()
        o = self.out_channels
        dy_t = dy.transpose(0, 2, 3, 1)  # N,H,W,O
        dy_flat = dy_t.reshape(-1, o)
        self.weight.grad = (dy_flat.T @ cols.reshape(-1, cols.shape[-1])).reshape(self.weight.shape)
        self.bias.grad = dy_flat.sum(axis=0)
        dcols = dy_t @ self.weight.value.reshape(o, -1)
        return _col2im(dcols, xshape)


class MaxPool2(Layer):
    """2x2 max pooling; ties go to the first position in row-major window order."""

    def __init__(self):
        self._cache = None

    def forward(self, x, train=False, rng=None):
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ShapeError(f"maxpool2 needs even H and W, got {x.shape}")
        win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
        idx = win.argmax(axis=-1)
        self._cache = (idx, x.shape)
        return np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    @property
    def index_map(self) -> np.ndarray:
        return self._need_cache()[0]

    def backward(self, dy):
        idx, (n, c, h, w) = self._need_cache()
        dwin = np.zeros((n, c, h // 2, w // 2, 4), dtype=dy.dtype)
        np.put_along_axis(dwin, idx[..., None], dy[..., None], axis=-1)
        return dwin.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)


class Upsample2(Layer):
    """Nearest-neighbour 2x upsampling."""

    def forward(self, x, train=False, rng=None):
        if x.ndim != 4:
            raise ShapeError(f"upsample2 expects rank 4, got {x.shape}")
        self._cache = x.shape
        return x.repeat(2, axis=2).repeat(2, axis=3)

    def backward(self, dy):
        n, c, h, w = self._need_cache()
        return dy.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5))


class FullyConnected(Layer):
    """out = x @ W.T + b with W of shape [out, in]."""

    def __init__(self, in_features: int, out_features: int, name: str = "fc", init: str = "he"):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Param(f"{name}.weight", (out_features, in_features), init,
                            fan_in=in_features, fan_out=out_features)
        self.bias = Param(f"{name}.bias", (out_features,))
        self._cache = None

    def parameters(self):
        return [self.weight, self.bias]

    def forward(self, x, train=False, rng=None):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"{self.weight.name}: expected [N,{self.in_features}], got {x.shape}")
        self._cache = x
        return x @ self.weight.value.T + self.bias.value

    def backward(self, dy):
        x = self._need_cache()
        self.weight.grad = dy.T @ x
        self.bias.grad = dy.sum(axis=0)
        return dy @ self.weight.value


class ReLU(Layer):
    def forward(self, x, train=False, rng=None):
        self._cache = x > 0
        return np.where(self._cache, x, 0.0)

    def backward(self, dy):
        return np.where(self._need_cache(), dy, 0.0)


class Tanh01(Layer):
    """(tanh(x) + 1) / 2, a confidence in (0, 1)."""

    def forward(self, x, train=False, rng=None):
        t = np.tanh(x)
        self._cache = t
        return (t + 1.0) * 0.5

    def backward(self, dy):
        t = self._need_cache()
        return dy * (1.0 - t * t) * 0.5


class _Stochastic(Layer):
    """Shared freeze logic: a frozen layer replays its last random draw."""

    stochastic = True

    def __init__(self):
        self.frozen = False
        self._draw = None
        self._cache = None

    def freeze(self):
        self.frozen = True

    def unfreeze(self):
        self.frozen = False
        self._draw = None

    def _reuse(self, shape) -> bool:
        return self.frozen and self._draw is not None and self._draw.shape == shape


class Dropout(_Stochastic):
    """Inverted elementwise dropout; identity in eval mode."""

    def __init__(self, rate: float = 0.5):
        super().__init__()
        if not 0 <= rate < 1:
            raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0:
            self._cache = None
            return x
        if not self._reuse(x.shape):
            if rng is None:
                raise StateError("dropout in train mode needs an rng")
            keep = rng.uniform(0.0, 1.0, x.shape) >= self.rate
            self._draw = keep / (1.0 - self.rate)
        self._cache = self._draw
        return x * self._draw

    def backward(self, dy):
        return dy if self._cache is None else dy * self._cache


class GaussianNoise(_Stochastic):
    """Additive N(0, sigma^2) noise in train mode; identity in eval mode."""

    def __init__(self, sigma: float = 0.025):
        super().__init__()
        if sigma < 0:
            raise ParameterError(f"noise sigma must be >= 0, got {sigma}")
        self.sigma = sigma

    def forward(self, x, train=False, rng=None):
        if not train or self.sigma == 0:
            return x
        if not self._reuse(x.shape):
            if rng is None:
                raise StateError("gaussian noise in train mode needs an rng")
            self._draw = rng.normal(x.shape, 0.0, self.sigma)
        return x + self._draw

    def backward(self, dy):
        return dy


class ConvPair(Layer):
    """Plain U-Net block: conv -> ReLU -> conv -> ReLU."""

    def __init__(self, in_channels: int, out_channels: int, name: str):
        self.conv1 = Conv2d(in_channels, out_channels, f"{name}.conv1")
        self.relu1 = ReLU()
        self.conv2 = Conv2d(out_channels, out_channels, f"{name}.conv2")
        self.relu2 = ReLU()
        self.out_channels = out_channels

    def parameters(self):
        return self.conv1.parameters() + self.conv2.parameters()

    def forward(self, x, train=False, rng=None):
        return self.relu2.forward(self.conv2.forward(self.relu1.forward(self.conv1.forward(x))))

    def backward(self, dy):
        return self.conv1.backward(self.relu1.backward(self.conv2.backward(self.relu2.backward(dy))))


class DenseBlock(Layer):
    """Densely connected convolutions.

    Conv ``i`` sees ``concat(input, out_1, ..., out_{i-1})`` and emits
    ``growth`` channels through a ReLU.  The block output is
    ``concat(out_1, ..., out_depth)``, optionally prefixed by the block input
    when ``include_input`` is set.
    """

    def __init__(self, in_channels: int, cfg: BlockConfig, name: str, include_input: bool = False):
        self.in_channels = in_channels
        self.depth = cfg.depth
        self.growth = cfg.growth
        self.include_input = include_input
        self.convs = [Conv2d(in_channels + i * cfg.growth, cfg.growth, f"{name}.conv{i + 1}")
                      for i in range(cfg.depth)]
        self.relus = [ReLU() for _ in range(cfg.depth)]
        self.per_conv_outputs: list[np.ndarray] = []

    @property
    def out_channels(self) -> int:
        return self.depth * self.growth + (self.in_channels if self.include_input else 0)

    def parameters(self):
        return [p for c in self.convs for p in c.parameters()]

    def forward(self, x, train=False, rng=None):
        feats = [x]
        for conv, relu in zip(self.convs, self.relus):
            feats.append(relu.forward(conv.forward(concat_channels(feats))))
        self.per_conv_outputs = feats[1:]
        self._cache = x.shape
        parts = feats if self.include_input else feats[1:]
        return concat_channels(parts)

    def backward(self, dy):
        self._need_cache()
        sizes = ([self.in_channels] if self.include_input else []) + [self.growth] * self.depth
        parts = split_channels(dy, sizes)
        if self.include_input:
            dx = parts[0]
            douts = parts[1:]
        else:
            dx = np.zeros(self._cache, dtype=dy.dtype)
            douts = parts
        for i in reversed(range(self.depth)):
            dz = self.convs[i].backward(self.relus[i].backward(douts[i]))
            pieces = split_channels(dz, [self.in_channels] + [self.growth] * i)
            dx = dx + pieces[0]
            for j in range(i):
                douts[j] = douts[j] + pieces[j + 1]
        return dx


class ResidualBlock(Layer):
    """out = ReLU(x + conv2(ReLU(conv1(x)))), channel count preserved.

    ``conv2`` starts at zero so a freshly built block is an identity on
    non-negative inputs; otherwise each block roughly doubles the activation
    variance and a chain of them saturates the output tanh.
    """

    def __init__(self, channels: int, name: str):
        self.channels = channels
        self.conv1 = Conv2d(channels, channels, f"{name}.conv1")
        self.relu1 = ReLU()
        self.conv2 = Conv2d(channels, channels, f"{name}.conv2", init="zeros")
        self.relu_out = ReLU()

    def parameters(self):
        return self.conv1.parameters() + self.conv2.parameters()

    def forward(self, x, train=False, rng=None):
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError(f"residual block expects {self.channels} channels, got {x.shape}")
        h = self.conv2.forward(self.relu1.forward(self.conv1.forward(x)))
        return self.relu_out.forward(x + h)

    def backward(self, dy):
        ds = self.relu_out.backward(dy)
        return ds + self.conv1.backward(self.relu1.backward(self.conv2.backward(ds)))


class MergeBlock(Layer):
    """Concatenate ``z`` aligned inputs, then one conv and an activation."""

    def __init__(self, in_channels: list[int], out_channels: int, name: str, activation: str = "relu",
                 init: str | None = None):
        self.in_channels = list(in_channels)
        if init is None:
            init = "glorot" if activation == "tanh01" else "he"
        self.conv = Conv2d(sum(in_channels), out_channels, f"{name}.conv", init=init)
        if activation == "relu":
            self.act = ReLU()
        elif activation == "tanh01":
            self.act = Tanh01()
        else:
            raise ParameterError(f"unknown activation {activation!r}")

    @property
    def z(self) -> int:
        return len(self.in_channels)

    def parameters(self):
        return self.conv.parameters()

    def forward(self, inputs, train=False, rng=None):
        if len(inputs) != self.z:
            raise ShapeError(f"merge expects {self.z} inputs, got {len(inputs)}")
        return self.act.forward(self.conv.forward(concat_channels(inputs)))

    def backward(self, dy):
        return split_channels(self.conv.backward(self.act.backward(dy)), self.in_channels)


# Functional forms for one-off use and tests.

def conv2d(x, weight, bias):
    layer = Conv2d(weight.shape[1], weight.shape[0])
    layer.weight.value, layer.bias.value = np.asarray(weight, DTYPE), np.asarray(bias, DTYPE)
    return layer.forward(np.asarray(x, DTYPE))


def maxpool2(x):
    layer = MaxPool2()
    y = layer.forward(np.asarray(x, DTYPE))
    return y, layer.index_map


def upsample2_nearest(x):
    return Upsample2().forward(np.asarray(x, DTYPE))


def fully_connected(x, weight, bias):
    layer = FullyConnected(weight.shape[1], weight.shape[0])
    layer.weight.value, layer.bias.value = np.asarray(weight, DTYPE), np.asarray(bias, DTYPE)
    return layer.forward(np.asarray(x, DTYPE))


def relu(x):
    return np.maximum(np.asarray(x, DTYPE), 0.0)


def tanh01(x):
    return (np.tanh(np.asarray(x, DTYPE)) + 1.0) * 0.5
