"""Synthetic colour-blob segmentation data for smoke tests and toy experiments.

Each image has a smooth random background and one to three ellipses painted
in a "skin" colour; the mask marks the ellipses.  ``domain`` shifts the skin
and background palettes so a model trained on one domain can be transferred
to another.
"""
from __future__ import annotations

import numpy as np

from .data import Sample
from .tensor import Rng

DOMAINS = {
    # (skin rgb centre, background rgb centre)
    "public": ((0.85, 0.60, 0.45), (0.25, 0.45, 0.35)),
    "clinical": ((0.80, 0.55, 0.45), (0.30, 0.42, 0.42)),
}


def blob_sample(rng: Rng, size: int = 32, domain: str = "public", ident: str = "blob") -> Sample:
    skin, bg = (np.array(c) for c in DOMAINS[domain])
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    gy, gx = rng.uniform(-0.15, 0.15), rng.uniform(-0.15, 0.15)
    background = bg[:, None, None] + gy * (yy - 0.5) + gx * (xx - 0.5)
    background = background + rng.uniform(-0.08, 0.08, (3, 1, 1))
    mask = np.zeros((size, size), dtype=np.uint8)
    for _ in range(rng.integers(1, 4)):
        cy, cx = rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8)
        ry, rx = rng.uniform(0.12, 0.3), rng.uniform(0.12, 0.3)
        mask |= (((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1).astype(np.uint8)
    tone = skin + rng.uniform(-0.05, 0.05, 3)
    img = np.where(mask[None] > 0, tone[:, None, None], background)
    img = img + rng.normal(img.shape, 0.0, 0.02)
    return Sample(ident, np.clip(img, 0.0, 1.0), mask)


def blob_dataset(n: int, size: int = 32, seed: int = 0, domain: str = "public") -> list[Sample]:
    return [blob_sample(Rng.derive(seed, i), size, domain, f"{domain}{i:04d}") for i in range(n)]
