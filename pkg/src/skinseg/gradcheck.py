"""Central finite-difference checks of analytic backward passes.

The probe loss is ``sum(output * R)`` for a fixed random ``R``, so the
upstream gradient fed to ``backward`` is exactly ``R``.  Errors are reported
as ``|a - n| / max(|a|, |n|, 1e-8)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ContractError, ParameterError
from .layers import (
    BlockConfig, Conv2d, ConvPair, DenseBlock, Dropout, FullyConnected, GaussianNoise,
    Layer, MaxPool2, MergeBlock, ReLU, ResidualBlock, Tanh01, Upsample2,
)
from .tensor import Rng

LAYER_TOLERANCE = 1e-4
NETWORK_TOLERANCE = 1e-3


def relative_error(a, n) -> float:
    a = np.asarray(a, dtype=float)
    n = np.asarray(n, dtype=float)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def _as_list(x):
    return list(x) if isinstance(x, (list, tuple)) else [x]


def _stochastic_layers(layer) -> list:
    found = []
    stack = [layer]
    while stack:
        obj = stack.pop()
        if getattr(obj, "stochastic", False):
            found.append(obj)
        for v in vars(obj).values():
            if isinstance(v, Layer):
                stack.append(v)
            elif isinstance(v, list):
                stack.extend(i for i in v if isinstance(i, Layer))
    return found


def gradient_check(layer: Layer, x, epsilon: float = 1e-6, seed: int = 0, train: bool = False,
                   rng: Rng | None = None) -> float:
    """Worst relative error between analytic and numerical gradients of ``layer``.

    Checks the gradient w.r.t. every input element and every parameter element.
    In train mode every stochastic sub-layer must be frozen first, otherwise
    the function being differentiated changes between evaluations.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ParameterError(f"epsilon must be in [1e-7, 1e-3], got {epsilon}")
    if train:
        loose = [s for s in _stochastic_layers(layer) if not s.frozen]
        if loose:
            raise ContractError(f"{type(loose[0]).__name__} must be frozen for a train-mode gradient check")

    multi = isinstance(x, (list, tuple))
    xs = [np.array(v, dtype=np.float64) for v in _as_list(x)]
    fwd_rng = rng if rng is not None else Rng(seed + 1)

    def run():
        return layer.forward(xs if multi else xs[0], train=train, rng=fwd_rng)

    y = run()
    probe = Rng(seed).normal(y.shape)
    dxs = _as_list(layer.backward(probe))
    analytic = [d.copy() for d in dxs] + [p.grad.copy() for p in layer.parameters()]
    targets = xs + [p.value for p in layer.parameters()]

    def f():
        return float(np.sum(run() * probe))

    worst = 0.0
    for arr, a in zip(targets, analytic):
        num = np.zeros_like(arr)
        flat = arr.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + epsilon
            fp = f()
            flat[i] = old - epsilon
            fm = f()
            flat[i] = old
            num.reshape(-1)[i] = (fp - fm) / (2 * epsilon)
        worst = max(worst, relative_error(a, num))
    return worst


def network_gradient_check(net, x, n_params: int = 200, epsilon: float = 1e-4, seed: int = 0,
                           n_inputs: int = 20) -> float:
    """Whole-network check over a random subsample of parameter scalars.

    The probe is ``sum(output * R)``; its central difference is summed
    elementwise with ``math.fsum`` so tiny gradients are not lost in the
    rounding of a large total.

    Samples ``n_params`` scalar parameters (uniformly over the flattened
    registry) plus ``n_inputs`` input elements, in eval mode.  A coordinate
    whose +/-epsilon evaluations change any ReLU state or max-pool winner
    straddles a kink, where the derivative is undefined; it is skipped and
    another coordinate is drawn in its place.
    """
    rng = Rng(seed)
    x = np.array(x, dtype=np.float64)
    y = net.forward(x)
    base = net.activation_pattern()
    probe = rng.normal(y.shape)
    dx = net.backward(probe)
    grads = [p.grad.copy() for p in net.parameters()]
    analytic, numeric = [], []

    def central(buf, j, a) -> bool:
        old = buf[j]
        buf[j] = old + epsilon
        yp = net.forward(x)
        same = net.activation_pattern() == base
        buf[j] = old - epsilon
        ym = net.forward(x)
        same = same and net.activation_pattern() == base
        buf[j] = old
        if same:
            analytic.append(a)
            # exact-rounded sum of differences avoids cancellation in f(+) - f(-)
            numeric.append(math.fsum(((yp - ym) * probe).ravel()) / (2 * epsilon))
        return same

    params = net.parameters()
    offsets = np.concatenate([[0], np.cumsum([p.size for p in params])])
    total = int(offsets[-1])
    order = rng.permutation(total)
    taken = 0
    for flat_idx in order:
        if taken == min(n_params, total):
            break
        k = int(np.searchsorted(offsets, flat_idx, side="right") - 1)
        j = int(flat_idx - offsets[k])
        taken += central(params[k].value.reshape(-1), j, grads[k].reshape(-1)[j])
    flat_x = x.reshape(-1)
    taken = 0
    for i in rng.permutation(x.size):
        if taken == min(n_inputs, x.size):
            break
        taken += central(flat_x, int(i), dx.reshape(-1)[i])
    net.forward(x)
    return relative_error(analytic, numeric)


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.error < self.tolerance


def _init(layer: Layer, rng: Rng, bias_scale: float = 0.1):
    for p in layer.parameters():
        p.initialize(rng)
        if p.init == "zeros":
            # nonzero biases so the check also exercises them away from relu kinks
            p.value = rng.uniform(-bias_scale, bias_scale, p.shape)
    return layer


def _frozen(layer, x, rng):
    for s in _stochastic_layers(layer):
        s.freeze()
    layer.forward(x, train=True, rng=rng)
    return layer


# name -> factory(rng) returning (layer, input, train flag)
LayerCase = Callable[[Rng], tuple]


def _case_conv(rng):
    return _init(Conv2d(2, 3, "conv"), rng), rng.normal((2, 2, 5, 5)), False


def _case_maxpool(rng):
    # distinct values, so no window sits within epsilon of a tie
    x = rng.permutation(2 * 3 * 4 * 6).reshape(2, 3, 4, 6) * 0.1
    return MaxPool2(), x, False


def _case_upsample(rng):
    return Upsample2(), rng.normal((2, 3, 3, 4)), False


def _case_fc(rng):
    return _init(FullyConnected(7, 5, "fc"), rng), rng.normal((3, 7)), False


def _case_relu(rng):
    x = rng.normal((2, 3, 4, 4))
    x = np.where(np.abs(x) < 0.05, 0.5, x)
    return ReLU(), x, False


def _case_tanh01(rng):
    return Tanh01(), rng.normal((2, 3, 4, 4)), False


def _case_dropout(rng):
    x = rng.normal((2, 3, 4, 4))
    layer = _frozen(Dropout(0.5), x, rng)
    return layer, x, True


def _case_noise(rng):
    x = rng.normal((2, 3, 4, 4))
    layer = _frozen(GaussianNoise(0.025), x, rng)
    return layer, x, True


def _case_conv_pair(rng):
    return _init(ConvPair(3, 4, "pair"), rng), rng.normal((1, 3, 4, 4)), False


def _case_dense(rng):
    return _init(DenseBlock(3, BlockConfig(depth=3, growth=2), "dense"), rng), rng.normal((1, 3, 4, 4)), False


def _case_residual(rng):
    return _init(ResidualBlock(3, "res"), rng), rng.normal((1, 3, 4, 4)), False


def _case_merge(rng):
    layer = _init(MergeBlock([2, 3, 1], 2, "merge"), rng)
    return layer, [rng.normal((1, c, 4, 4)) for c in (2, 3, 1)], False


def _case_merge_tanh(rng):
    layer = _init(MergeBlock([2, 2], 1, "out", activation="tanh01"), rng)
    return layer, [rng.normal((1, 2, 4, 4)) for _ in range(2)], False


LAYER_CASES: dict[str, LayerCase] = {
    "conv2d": _case_conv,
    "maxpool2": _case_maxpool,
    "upsample2_nearest": _case_upsample,
    "fully_connected": _case_fc,
    "relu": _case_relu,
    "tanh01": _case_tanh01,
    "dropout": _case_dropout,
    "gaussian_noise": _case_noise,
    "conv_pair": _case_conv_pair,
    "dense_block": _case_dense,
    "residual_block": _case_residual,
    "merge_block": _case_merge,
    "merge_block_tanh01": _case_merge_tanh,
}


def check_layers(cases: dict[str, LayerCase] | None = None, seeds=(0, 1, 2),
                 epsilon: float = 1e-6) -> list[CheckResult]:
    """Run each layer case on every seed and keep the worst error per layer."""
    results = []
    for name, factory in (cases or LAYER_CASES).items():
        worst = 0.0
        for s in seeds:
            rng = Rng(1000 + s)
            layer, x, train = factory(rng)
            worst = max(worst, gradient_check(layer, x, epsilon=epsilon, seed=s, train=train, rng=rng))
        results.append(CheckResult(name, worst, LAYER_TOLERANCE))
    return results


def check_networks(variants=("unet", "dense_residual_unet"), seed: int = 0,
                   n_params: int = 200) -> list[CheckResult]:
    from .models import ModelConfig, build_network

    results = []
    for variant in variants:
        net = build_network(ModelConfig.toy(variant), seed=seed)
        rng = Rng(seed + 7)
        for p in net.parameters():
            if p.init == "zeros":
                p.value = rng.uniform(-0.05, 0.05, p.shape)
        x = rng.normal((2, 6, net.cfg.input_size, net.cfg.input_size))
        err = network_gradient_check(net, x, n_params=n_params, seed=seed)
        results.append(CheckResult(f"network:{variant}", err, NETWORK_TOLERANCE))
    return results
