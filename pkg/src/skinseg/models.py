"""U-Net, U-Net Large and Dense Residual U-Net assembled from :mod:`skinseg.layers`.

All three share one skeleton: ``S`` encoder stages (block, then 2x2 max
pool), a fully connected bottleneck that maps the flattened feature volume to
``fc_width`` units and back, and ``S`` decoder stages (upsample, concatenate
the encoder skip of equal resolution, block).  The U-Nets use conv pairs and a
single 1-channel head; the dense residual variant uses dense blocks, a merge
over the last decoder's per-conv outputs, a chain of residual blocks and a
final merge over every residual output.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ConfigError, ShapeError, StateError
from .layers import (
    BlockConfig, Conv2d, ConvPair, DenseBlock, Dropout, FullyConnected, GaussianNoise, Layer,
    MaxPool2, MergeBlock, Param, ReLU, ResidualBlock, Tanh01, Upsample2,
)
from .tensor import Rng, concat_channels, split_channels

VARIANTS = ("unet", "unet_large", "dense_residual_unet")

# Full-size configurations.  U-Net Large filter and FC widths are fixed;
# the others are chosen so the parameter totals land near 7.5M / 149.9M.
_PAPER_DEFAULTS = {
    "unet": dict(stage_filters=[48, 96, 192], fc_width=56),
    "unet_large": dict(stage_filters=[45, 90, 180], fc_width=1450),
    "dense_residual_unet": dict(stage_filters=[48, 96, 192], fc_width=1507,
                                dense_depth=4, dense_growth=[12, 24, 48], residual_blocks=4),
}
_TOY_DEFAULTS = {
    "unet": dict(stage_filters=[8, 16], fc_width=32, input_size=32),
    "unet_large": dict(stage_filters=[12, 24], fc_width=48, input_size=32),
    "dense_residual_unet": dict(stage_filters=[8, 16], fc_width=32, input_size=32,
                                dense_depth=2, dense_growth=[4, 8], residual_blocks=4),
}


@dataclass
class ModelConfig:
    variant: str = "dense_residual_unet"
    input_channels: int = 6
    stage_filters: list[int] = field(default_factory=list)
    fc_width: int = 0
    dense_depth: int = 4
    dense_growth: list[int] = field(default_factory=list)
    residual_blocks: int = 4
    input_size: int = 128
    scale: str = "paper"
    dense_include_input: bool = False
    dropout_rate: float = 0.5
    noise_sigma: float = 0.025
    # initializer of the final 1-channel conv feeding the tanh; "zeros" starts
    # every output at 0.5, "glorot" can start (and stay) saturated
    output_init: str = "zeros"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.scale not in ("paper", "toy"):
            raise ConfigError(f"scale must be 'paper' or 'toy', got {self.scale!r}")
        defaults = (_PAPER_DEFAULTS if self.scale == "paper" else _TOY_DEFAULTS)[self.variant]
        for key, value in defaults.items():
            if key == "input_size":
                continue
            current = getattr(self, key)
            if current in ([], 0):
                setattr(self, key, list(value) if isinstance(value, list) else value)
        self.stage_filters = [int(v) for v in self.stage_filters]
        self.dense_growth = [int(v) for v in self.dense_growth]
        self.validate()

    @classmethod
    def toy(cls, variant: str, **overrides) -> "ModelConfig":
        base = dict(_TOY_DEFAULTS[variant])
        base.update(overrides)
        return cls(variant=variant, scale="toy", **base)

    @property
    def dense(self) -> bool:
        return self.variant == "dense_residual_unet"

    @property
    def stages(self) -> int:
        return len(self.stage_filters)

    def validate(self):
        if self.input_channels != 6:
            raise ConfigError("input_channels must be 6 (R, G, B, H, S, V)")
        if self.stages < 1 or any(f < 1 for f in self.stage_filters):
            raise ConfigError(f"stage_filters must be a non-empty list of positive counts, got {self.stage_filters}")
        if self.fc_width < 1:
            raise ConfigError("fc_width must be >= 1")
        if self.input_size < 1 or self.input_size % (2 ** self.stages):
            raise ConfigError(f"input_size {self.input_size} is not divisible by 2^{self.stages}")
        if self.dense:
            if self.dense_depth < 1:
                raise ConfigError("dense_depth must be >= 1")
            if len(self.dense_growth) != self.stages or any(g < 1 for g in self.dense_growth):
                raise ConfigError("dense_growth needs one positive entry per stage")
            if self.residual_blocks < 1:
                raise ConfigError("residual_blocks must be >= 1")
        if self.output_init not in ("zeros", "glorot"):
            raise ConfigError("output_init must be 'zeros' or 'glorot'")
        if not 0 <= self.dropout_rate < 1 or self.noise_sigma < 0:
            raise ConfigError("dropout_rate must be in [0, 1) and noise_sigma >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class SegmentationNet:
    """A built network: ordered blocks, skip table and parameter registry."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self.blocks: list[tuple[str, object]] = []
        self.skips: dict[str, str] = {}
        self.train_mode = False
        self._cache = None
        S = cfg.stages
        dense = cfg.dense

        def add(name, block):
            self.blocks.append((name, block))
            setattr(self, "_b_" + name, block)
            return block

        ch = cfg.input_channels
        self.enc_channels = []
        for i in range(S):
            if dense:
                add(f"noise{i}", GaussianNoise(cfg.noise_sigma))
                blk = add(f"enc{i}", DenseBlock(ch, BlockConfig(n=cfg.stage_filters[i], depth=cfg.dense_depth,
                                                                growth=cfg.dense_growth[i]),
                                                f"enc{i}", cfg.dense_include_input))
                if i == S - 1:
                    add(f"enc{i}_drop", Dropout(cfg.dropout_rate))
            else:
                blk = add(f"enc{i}", ConvPair(ch, cfg.stage_filters[i], f"enc{i}"))
            ch = blk.out_channels
            self.enc_channels.append(ch)
            add(f"pool{i}", MaxPool2())

        m = cfg.input_size // 2 ** S
        self.bottleneck_shape = (ch, m, m)
        volume = ch * m * m
        add("fc1", FullyConnected(volume, cfg.fc_width, "fc1"))
        add("fc1_relu", ReLU())
        add("fc_drop", Dropout(cfg.dropout_rate))
        add("fc2", FullyConnected(cfg.fc_width, volume, "fc2"))
        add("fc2_relu", ReLU())

        for i in reversed(range(S)):
            add(f"up{i}", Upsample2())
            in_ch = ch + self.enc_channels[i]
            self.skips[f"dec{i}"] = f"enc{i}"
            if dense:
                blk = add(f"dec{i}", DenseBlock(in_ch, BlockConfig(n=cfg.stage_filters[i], depth=cfg.dense_depth,
                                                                   growth=cfg.dense_growth[i]),
                                                f"dec{i}", cfg.dense_include_input))
                add(f"dec{i}_drop", Dropout(cfg.dropout_rate))
            else:
                blk = add(f"dec{i}", ConvPair(in_ch, cfg.stage_filters[i], f"dec{i}"))
            ch = blk.out_channels

        if dense:
            last = self._b_dec0
            self.merge_inputs = ([last.in_channels] if last.include_input else []) + [last.growth] * last.depth
            n = cfg.stage_filters[0]
            add("merge", MergeBlock(self.merge_inputs, n, "merge"))
            for k in range(cfg.residual_blocks):
                add(f"res{k}", ResidualBlock(n, f"res{k}"))
            add("out_merge", MergeBlock([n] * cfg.residual_blocks, 1, "out_merge", activation="tanh01",
                                        init=cfg.output_init))
        else:
            add("head", Conv2d(ch, 1, "head", init=cfg.output_init))
            add("head_act", Tanh01())

    def block(self, name: str):
        return getattr(self, "_b_" + name)

    def parameters(self) -> list[Param]:
        return [p for _, b in self.blocks for p in b.parameters()]

    def count_blocks(self, kind: type) -> int:
        return sum(isinstance(b, kind) for _, b in self.blocks)

    def initialize(self, rng: Rng) -> "SegmentationNet":
        for p in self.parameters():
            p.initialize(rng)
        return self

    # -- passes ---------------------------------------------------------------

    def forward(self, x: np.ndarray, train: bool = False, rng: Rng | None = None) -> np.ndarray:
        cfg = self.cfg
        if x.ndim != 4 or x.shape[1] != cfg.input_channels:
            raise ShapeError(f"expected input [N,{cfg.input_channels},H,W], got {x.shape}")
        if x.shape[2] != cfg.input_size or x.shape[3] != cfg.input_size:
            raise ShapeError(f"expected spatial size {cfg.input_size}, got {x.shape[2:]}")
        if train and rng is None:
            raise StateError("train-mode forward needs an rng")
        self.train_mode = train
        S = cfg.stages
        b = self.block
        kw = dict(train=train, rng=rng)

        h = x
        for i in range(S):
            if cfg.dense:
                h = b(f"noise{i}").forward(h, **kw)
            h = b(f"enc{i}").forward(h, **kw)
            if cfg.dense and i == S - 1:
                h = b(f"enc{i}_drop").forward(h, **kw)
            setattr(self, f"_skip{i}", h)
            h = b(f"pool{i}").forward(h)

        n = h.shape[0]
        f = h.reshape(n, -1)
        f = b("fc1_relu").forward(b("fc1").forward(f))
        f = b("fc_drop").forward(f, **kw)
        f = b("fc2_relu").forward(b("fc2").forward(f))
        h = f.reshape((n,) + self.bottleneck_shape)

        self._up_channels = {}
        for i in reversed(range(S)):
            h = b(f"up{i}").forward(h)
            self._up_channels[i] = h.shape[1]
            h = concat_channels([h, getattr(self, f"_skip{i}")])
            h = b(f"dec{i}").forward(h, **kw)
            if cfg.dense:
                h = b(f"dec{i}_drop").forward(h, **kw)

        if cfg.dense:
            r = b("merge").forward(split_channels(h, self.merge_inputs))
            outs = []
            for k in range(cfg.residual_blocks):
                r = b(f"res{k}").forward(r)
                outs.append(r)
            y = b("out_merge").forward(outs)
        else:
            y = b("head_act").forward(b("head").forward(h))
        self._cache = True
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        """Backpropagate ``dLoss/dOutput``; fills every ``Param.grad`` and
        returns ``dLoss/dInput``."""
        if self._cache is None:
            raise StateError("backward called before forward")
        cfg = self.cfg
        S = cfg.stages
        b = self.block

        if cfg.dense:
            d_outs = b("out_merge").backward(dy)
            dr = np.zeros_like(d_outs[-1])
            for k in reversed(range(cfg.residual_blocks)):
                dr = b(f"res{k}").backward(dr + d_outs[k])
            dh = concat_channels(b("merge").backward(dr))
        else:
            dh = b("head").backward(b("head_act").backward(dy))

        d_skip = {}
        for i in range(S):
            if cfg.dense:
                dh = b(f"dec{i}_drop").backward(dh)
            dh = b(f"dec{i}").backward(dh)
            d_up, d_skip[i] = split_channels(dh, [self._up_channels[i], self.enc_channels[i]])
            dh = b(f"up{i}").backward(d_up)

        n = dh.shape[0]
        df = dh.reshape(n, -1)
        df = b("fc2").backward(b("fc2_relu").backward(df))
        df = b("fc_drop").backward(df)
        df = b("fc1").backward(b("fc1_relu").backward(df))
        dh = df.reshape((n,) + self.bottleneck_shape)

        for i in reversed(range(S)):
            dh = b(f"pool{i}").backward(dh) + d_skip[i]
            if cfg.dense and i == S - 1:
                dh = b(f"enc{i}_drop").backward(dh)
            dh = b(f"enc{i}").backward(dh)
            if cfg.dense:
                dh = b(f"noise{i}").backward(dh)
        return dh

    def activation_pattern(self) -> bytes:
        """Signature of every ReLU on/off state and max-pool winner of the last forward.

        Two forwards with equal patterns lie on the same linear piece of the
        network, which is what finite-difference checks need."""
        parts = []
        stack = [b for _, b in self.blocks]
        while stack:
            obj = stack.pop(0)
            if isinstance(obj, ReLU):
                parts.append(np.packbits(obj._cache).tobytes())
            elif isinstance(obj, MaxPool2):
                parts.append(obj._cache[0].astype(np.uint8).tobytes())
            for v in vars(obj).values():
                if isinstance(v, list):
                    stack.extend(i for i in v if isinstance(i, Layer))
                elif isinstance(v, Layer):
                    stack.append(v)
        return b"".join(parts)

    def gradients(self) -> list[np.ndarray]:
        return [p.grad for p in self.parameters()]


def build_unet(cfg: ModelConfig) -> SegmentationNet:
    if cfg.variant not in ("unet", "unet_large"):
        raise ConfigError(f"build_unet needs variant unet or unet_large, got {cfg.variant!r}")
    return SegmentationNet(cfg)


def build_dense_residual_unet(cfg: ModelConfig) -> SegmentationNet:
    if cfg.variant != "dense_residual_unet":
        raise ConfigError(f"build_dense_residual_unet needs variant dense_residual_unet, got {cfg.variant!r}")
    return SegmentationNet(cfg)


def build_network(cfg: ModelConfig, seed: int | None = 0) -> SegmentationNet:
    """Build the network for ``cfg.variant``; initialize weights unless ``seed`` is None."""
    net = build_dense_residual_unet(cfg) if cfg.dense else build_unet(cfg)
    if seed is not None:
        net.initialize(Rng(seed))
    return net


def count_params(net_or_cfg) -> int:
    """Exact number of scalar weights and biases.  Works on unallocated nets."""
    net = net_or_cfg if isinstance(net_or_cfg, SegmentationNet) else build_network(net_or_cfg, seed=None)
    return sum(p.size for p in net.parameters())


def with_overrides(cfg: ModelConfig, **kw) -> ModelConfig:
    return replace(cfg, **kw)
