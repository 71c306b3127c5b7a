"""SGD with momentum, validation split, early stopping and the three training scenarios.

Scenarios:

* ``direct_transfer``: evaluate a pretrained checkpoint, no optimization.
* ``fine_tuning``: continue training a pretrained checkpoint (lr 0.001).
* ``direct_training``: train from a seeded random init (lr 0.01).

Every random choice is drawn from ``Rng.derive(seed, purpose, epoch, ...)``
so a run is bit-reproducible and independent of data-loading parallelism.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checkpoint as ckpt_io
from .checkpoint import Checkpoint
from .data import AugmentParams, DatasetManifest, Sample, augment, load_samples, make_input
from .errors import ConfigError, StateError
from .metrics import EvalReport, evaluate, jaccard_loss, jaccard_loss_grad
from .models import ModelConfig, SegmentationNet, build_network
from .tensor import Rng

log = logging.getLogger(__name__)

SCENARIOS = ("direct_transfer", "direct_training", "fine_tuning")
DEFAULT_LR = {"direct_training": 0.01, "fine_tuning": 0.001}

# purposes for derived rng streams
_SHUFFLE, _AUGMENT, _FORWARD, _SPLIT, _INIT = range(5)


@dataclass
class TrainConfig:
    scenario: str = "direct_training"
    learning_rate: float | None = None  # None -> scenario default
    momentum: float = 0.9
    batch_size: int = 16
    max_epochs: int = 500
    patience: int = 50
    val_fraction: float = 0.2
    seed: int = 0
    augment: AugmentParams | None = field(default_factory=AugmentParams)
    min_delta: float = 1e-7
    # stop as soon as the training split's aggregate Jaccard exceeds this
    target_jaccard: float | None = None

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        if not 0 < self.val_fraction < 1:
            raise ConfigError("val_fraction must lie in (0, 1)")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("batch_size, max_epochs and patience must be >= 1")
        if self.patience > self.max_epochs:
            raise ConfigError("patience must not exceed max_epochs")
        if self.learning_rate is not None and self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")

    @property
    def lr(self) -> float:
        if self.learning_rate is not None:
            return self.learning_rate
        return DEFAULT_LR.get(self.scenario, 0.0)

    def effective(self) -> dict:
        d = asdict(self)
        d["learning_rate"] = self.lr
        return d


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    train_jaccard: float | None = None


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[EpochRecord]
    best_epoch: int
    epochs_run: int

    def epochs_to_jaccard(self, target: float) -> int | None:
        for rec in self.history:
            if rec.train_jaccard is not None and rec.train_jaccard > target:
                return rec.epoch
        return None


def history_tsv(history: Sequence[EpochRecord]) -> str:
    lines = ["epoch\ttrain_loss\tval_loss"]
    lines += [f"{r.epoch}\t{r.train_loss:.8f}\t{r.val_loss:.8f}" for r in history]
    return "\n".join(lines) + "\n"


def sgd_momentum_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
                      velocities: Sequence[np.ndarray], lr: float, mu: float) -> None:
    """Classical momentum, in place: ``v <- mu*v - lr*g``, ``w <- w + v``."""
    if not len(params) == len(grads) == len(velocities):
        raise StateError("parameter, gradient and velocity registries differ in length")
    for w, g, v in zip(params, grads, velocities):
        if not w.shape == g.shape == v.shape:
            raise StateError(f"registry shape mismatch: {w.shape}, {g.shape}, {v.shape}")
        v *= mu
        v -= lr * g
        w += v


def split_validation(items: Sequence, val_fraction: float = 0.2, seed: int = 0):
    """Seeded shuffle; the first ceil(val_fraction * n) items form the validation set."""
    if len(items) == 0:
        raise ConfigError("cannot split an empty dataset")
    order = Rng.derive(seed, _SPLIT).permutation(len(items))
    n_val = math.ceil(val_fraction * len(items))
    val = [items[i] for i in order[:n_val]]
    train = [items[i] for i in order[n_val:]]
    return train, val


class EarlyStopping:
    """Tracks the best validation loss; a new best must beat it by ``min_delta``."""

    def __init__(self, patience: int, min_delta: float = 1e-7):
        self.patience = patience
        self.min_delta = min_delta
        self.best = math.inf
        self.best_epoch = 0
        self.since_best = 0

    def update(self, epoch: int, val_loss: float) -> bool:
        """Record an epoch; returns True when the loss is a new best."""
        if val_loss < self.best - self.min_delta:
            self.best, self.best_epoch, self.since_best = val_loss, epoch, 0
            return True
        self.since_best += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.since_best >= self.patience


def _stack(samples: Sequence[Sample]):
    x = np.stack([make_input(s.image) for s in samples])
    t = np.stack([s.mask for s in samples]).astype(np.float64)[:, None]
    return x, t


def predict(net: SegmentationNet, images: Sequence[np.ndarray], batch_size: int = 16) -> list[np.ndarray]:
    """Eval-mode confidence maps [H,W] for RGB images already at network size."""
    out = []
    for i in range(0, len(images), batch_size):
        x = np.stack([make_input(im) for im in images[i:i + batch_size]])
        out.extend(net.forward(x)[:, 0])
    return out


def evaluate_samples(net: SegmentationNet, samples: Sequence[Sample], batch_size: int = 16) -> EvalReport:
    preds = predict(net, [s.image for s in samples], batch_size)
    return evaluate(preds, [s.mask for s in samples], [s.id for s in samples])


def validation_loss(net: SegmentationNet, samples: Sequence[Sample], batch_size: int) -> float:
    """Mean per-image loss over ``samples`` in eval mode, no augmentation."""
    total = 0.0
    for i in range(0, len(samples), batch_size):
        chunk = samples[i:i + batch_size]
        x, t = _stack(chunk)
        total += jaccard_loss(net.forward(x), t) * len(chunk)
    return total / len(samples)


def train(net: SegmentationNet, samples: Sequence[Sample], cfg: TrainConfig,
          start_epoch: int = 0) -> TrainResult:
    """Minibatch SGD on the soft Jaccard loss with early stopping.

    Returns the parameters of the epoch with the lowest validation loss.
    """
    if cfg.scenario == "direct_transfer":
        raise ConfigError("direct_transfer performs no optimization")
    train_set, val_set = split_validation(list(samples), cfg.val_fraction, cfg.seed)
    if not train_set:
        raise ConfigError("training split is empty")
    params = net.parameters()
    for p in params:
        if p.velocity is None:
            p.velocity = np.zeros(p.shape)
    stopper = EarlyStopping(cfg.patience, cfg.min_delta)
    best = None
    history = []
    lr, mu, bs = cfg.lr, cfg.momentum, cfg.batch_size
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = Rng.derive(cfg.seed, _SHUFFLE, start_epoch + epoch).permutation(len(train_set))
        losses = []
        for b, lo in enumerate(range(0, len(order), bs)):
            batch = []
            for idx in order[lo:lo + bs]:
                s = train_set[idx]
                if cfg.augment is not None:
                    s = augment(s, cfg.augment, Rng.derive(cfg.seed, _AUGMENT, start_epoch + epoch, int(idx)))
                batch.append(s)
            x, t = _stack(batch)
            y = net.forward(x, train=True, rng=Rng.derive(cfg.seed, _FORWARD, start_epoch + epoch, b))
            loss = jaccard_loss(y, t)
            if not math.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}, batch {b}")
            net.backward(jaccard_loss_grad(y, t))
            sgd_momentum_step([p.value for p in params], [p.grad for p in params],
                              [p.velocity for p in params], lr, mu)
            losses.append(loss * len(batch))
        train_loss = sum(losses) / len(train_set)
        val_loss = validation_loss(net, val_set, bs)
        rec = EpochRecord(epoch, train_loss, val_loss)
        if cfg.target_jaccard is not None:
            rec.train_jaccard = evaluate_samples(net, train_set, bs).agg_jaccard
        history.append(rec)
        log.debug("epoch %d train %.6f val %.6f", epoch, train_loss, val_loss)
        if stopper.update(epoch, val_loss):
            best = ckpt_io.from_network(net, epochs_completed=start_epoch + epoch, best_val_loss=val_loss,
                                        rng_state={"seed": cfg.seed, "epoch": start_epoch + epoch})
        if stopper.should_stop:
            break
        if cfg.target_jaccard is not None and rec.train_jaccard > cfg.target_jaccard:
            break
    ckpt_io.load_into(net, best)
    return TrainResult(best, history, stopper.best_epoch, epoch)


@dataclass
class ScenarioResult:
    report: EvalReport | None
    checkpoint: Checkpoint
    effective_config: dict
    train: TrainResult | None = None


def _as_samples(data, input_size: int, workers: int) -> tuple[list[Sample], list[Sample]]:
    if isinstance(data, DatasetManifest):
        pool = load_samples(data.split("train", "finetune"), input_size, workers)
        held = load_samples(data.split("eval"), input_size, workers)
        return pool, held
    if isinstance(data, tuple):
        return list(data[0]), list(data[1])
    return list(data), []


def run_scenario(cfg: TrainConfig, data, pretrained: Checkpoint | None = None,
                 model_cfg: ModelConfig | None = None, workers: int = 1) -> ScenarioResult:
    """Run one training scenario and evaluate on the held-out samples.

    ``data`` is a manifest (entries tagged train/finetune are trained on,
    ``eval`` entries are evaluated), a ``(train_samples, eval_samples)`` pair,
    or a plain list of training samples.
    """
    if cfg.scenario in ("direct_transfer", "fine_tuning") and pretrained is None:
        raise ConfigError(f"{cfg.scenario} needs a pretrained checkpoint")
    if cfg.scenario == "direct_training" and pretrained is not None:
        raise ConfigError("direct_training starts from random weights; do not pass a checkpoint")
    if cfg.scenario == "direct_training":
        if model_cfg is None:
            raise ConfigError("direct_training needs a model config")
        net = build_network(model_cfg, seed=None)
        net.initialize(Rng.derive(cfg.seed, _INIT))
    else:
        net = ckpt_io.to_network(pretrained)
    effective = {"scenario": cfg.scenario, "train": cfg.effective(), "model": net.cfg.to_dict()}
    log.info("effective config: %s", effective)
    pool, held = _as_samples(data, net.cfg.input_size, workers)

    result = None
    if cfg.scenario == "direct_transfer":
        out = pretrained
    else:
        start = pretrained.epochs_completed if pretrained is not None else 0
        if cfg.scenario == "fine_tuning":
            # momentum history from pretraining does not carry over
            for p in net.parameters():
                p.velocity = np.zeros(p.shape)
        result = train(net, pool, cfg, start_epoch=start)
        out = result.checkpoint
        out.meta = {"scenario": cfg.scenario, "effective_config": effective}
    report = evaluate_samples(net, held) if held else None
    return ScenarioResult(report, out, effective, result)


def write_history(history: Sequence[EpochRecord], path) -> None:
    Path(path).write_text(history_tsv(history), encoding="utf-8")
