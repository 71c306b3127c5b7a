"""Soft Jaccard loss, thresholding, and Jaccard / Dice evaluation."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContractError, ShapeError

THRESHOLD = 0.5


def _check_pair(p, t):
    p = np.asarray(p, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeError(f"prediction shape {p.shape} != target shape {t.shape}")
    if not np.all((t == 0) | (t == 1)):
        raise ContractError("target mask must be binary (0/1)")
    return p, t


def _per_image(p, t):
    """Views with one row per image: rank-4 [N,1,H,W] batches, else one image."""
    if p.ndim == 4:
        return p.reshape(p.shape[0], -1), t.reshape(t.shape[0], -1)
    return p.reshape(1, -1), t.reshape(1, -1)


def soft_jaccard_terms(p, t):
    """Per-image intersection ``sum(t*p)`` and union ``sum(t^2) + sum(p^2) - sum(t*p)``."""
    inter = np.sum(t * p, axis=1)
    union = np.sum(t * t, axis=1) + np.sum(p * p, axis=1) - inter
    return inter, union


def jaccard_loss(p, t) -> float:
    """1 - soft Jaccard per image, averaged over the batch.

    ``p`` and ``t`` are a single image (any rank < 4) or an [N,1,H,W] batch.
    An image whose target and prediction are both all-zero has loss 0.
    """
    p, t = _check_pair(p, t)
    inter, union = soft_jaccard_terms(*_per_image(p, t))
    safe = np.where(union > 0, union, 1.0)
    losses = np.where(union > 0, 1.0 - inter / safe, 0.0)
    return float(losses.mean())


def jaccard_loss_grad(p, t) -> np.ndarray:
    """d jaccard_loss / d p, including the 1/N of the batch mean."""
    p, t = _check_pair(p, t)
    pf, tf = _per_image(p, t)
    inter, union = soft_jaccard_terms(pf, tf)
    safe = np.where(union > 0, union, 1.0)[:, None]
    g = -(tf * safe - inter[:, None] * (2.0 * pf - tf)) / safe**2
    g = np.where(union[:, None] > 0, g, 0.0) / pf.shape[0]
    return g.reshape(p.shape)


def binarize(p, threshold: float = THRESHOLD) -> np.ndarray:
    """1 where ``p >= threshold`` (ties count as skin), else 0."""
    return (np.asarray(p) >= threshold).astype(np.uint8)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion(pred, truth) -> ConfusionCounts:
    pred = np.asarray(pred).astype(bool)
    truth = np.asarray(truth).astype(bool)
    if pred.shape != truth.shape:
        raise ShapeError(f"prediction shape {pred.shape} != truth shape {truth.shape}")
    tp = int(np.count_nonzero(pred & truth))
    fp = int(np.count_nonzero(pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    return ConfusionCounts(tp, fp, fn, pred.size - tp - fp - fn)


def jaccard_index(c: ConfusionCounts) -> float:
    denom = c.tp + c.fp + c.fn
    return 1.0 if denom == 0 else c.tp / denom


def dice(c: ConfusionCounts) -> float:
    denom = 2 * c.tp + c.fp + c.fn
    return 1.0 if denom == 0 else 2 * c.tp / denom


def dice_from_jaccard(j: float) -> float:
    return 2 * j / (1 + j)


@dataclass
class EvalReport:
    per_image: list[tuple[str, float, float]] = field(default_factory=list)
    mean_jaccard: float = float("nan")
    mean_dice: float = float("nan")
    agg_jaccard: float = float("nan")
    agg_dice: float = float("nan")
    counts: ConfusionCounts = field(default_factory=ConfusionCounts)

    def summary(self) -> str:
        """Headline ``J (D)`` from aggregate counts, two decimals."""
        return format_jd(self.agg_jaccard, self.agg_dice)

    def to_tsv(self) -> str:
        lines = ["id\tjaccard\tdice"]
        lines += [f"{i}\t{j:.6f}\t{d:.6f}" for i, j, d in self.per_image]
        lines.append(f"MEAN\t{self.mean_jaccard:.6f}\t{self.mean_dice:.6f}")
        lines.append(f"AGGREGATE\t{self.agg_jaccard:.6f}\t{self.agg_dice:.6f}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_tsv(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "EvalReport":
        rows = [line.split("\t") for line in Path(path).read_text(encoding="utf-8").splitlines()[1:] if line]
        rep = cls()
        for ident, j, d in rows:
            if ident == "MEAN":
                rep.mean_jaccard, rep.mean_dice = float(j), float(d)
            elif ident == "AGGREGATE":
                rep.agg_jaccard, rep.agg_dice = float(j), float(d)
            else:
                rep.per_image.append((ident, float(j), float(d)))
        return rep


def format_jd(j: float, d: float) -> str:
    return f"{j:.2f} ({d:.2f})"


def evaluate(predictions: Sequence, truths: Sequence, ids: Sequence[str] | None = None,
             threshold: float = THRESHOLD) -> EvalReport:
    """Per-image and aggregate Jaccard / Dice of thresholded confidence maps."""
    if len(predictions) != len(truths):
        raise ShapeError(f"{len(predictions)} predictions vs {len(truths)} ground truths")
    if ids is None:
        ids = [str(i) for i in range(len(predictions))]
    report = EvalReport()
    total = ConfusionCounts()
    for ident, p, t in zip(ids, predictions, truths):
        c = confusion(binarize(np.squeeze(p), threshold), np.squeeze(t))
        total = total + c
        report.per_image.append((ident, jaccard_index(c), dice(c)))
    if report.per_image:
        report.mean_jaccard = float(np.mean([r[1] for r in report.per_image]))
        report.mean_dice = float(np.mean([r[2] for r in report.per_image]))
        report.agg_jaccard = jaccard_index(total)
        report.agg_dice = dice(total)
    report.counts = total
    return report
