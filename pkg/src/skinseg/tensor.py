"""Array substrate: float64 numpy arrays plus a pinned, seedable generator.

Tensors are plain ``numpy.ndarray`` objects in C order with dtype float64.
Rank-4 tensors are laid out (batch, channels, height, width).

Randomness comes from :class:`Rng`, a thin wrapper over numpy's PCG64 bit
generator seeded through ``SeedSequence``.  Normal variates use numpy's
ziggurat sampler, uniform variates the 53-bit double construction.  Both are
part of numpy's stream-compatibility guarantee for ``Generator``, so a seed
reproduces the same stream across platforms.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ParameterError, ShapeError

DTYPE = np.float64

# 2**31 doubles = 16 GiB; anything past this is a bug, not a model.
MAX_ELEMENTS = 2**31


def _check_shape(shape: Sequence[int]) -> tuple[int, ...]:
    shape = tuple(int(s) for s in shape)
    if not 1 <= len(shape) <= 4:
        raise ShapeError(f"rank must be 1..4, got shape {shape}")
    if any(s < 1 for s in shape):
        raise ShapeError(f"all extents must be >= 1, got {shape}")
    if int(np.prod(shape, dtype=np.int64)) > MAX_ELEMENTS:
        raise ShapeError(f"shape {shape} exceeds the memory cap of {MAX_ELEMENTS} elements")
    return shape


def zeros(shape: Sequence[int]) -> np.ndarray:
    return np.zeros(_check_shape(shape), dtype=DTYPE)


def concat_channels(inputs: Sequence[np.ndarray]) -> np.ndarray:
    """Concatenate rank-4 tensors along the channel axis, in list order."""
    if len(inputs) == 0:
        raise ShapeError("concat_channels needs at least one input")
    ref = inputs[0]
    for t in inputs:
        if t.ndim != 4:
            raise ShapeError(f"concat_channels expects rank-4 inputs, got shape {t.shape}")
        if (t.shape[0], t.shape[2], t.shape[3]) != (ref.shape[0], ref.shape[2], ref.shape[3]):
            raise ShapeError(f"N/H/W mismatch: {ref.shape} vs {t.shape}")
    if len(inputs) == 1:
        return inputs[0].copy()
    return np.concatenate(inputs, axis=1)


def split_channels(t: np.ndarray, sizes: Sequence[int]) -> list[np.ndarray]:
    """Inverse of :func:`concat_channels`: cut ``t`` into consecutive channel ranges."""
    if sum(sizes) != t.shape[1]:
        raise ShapeError(f"channel sizes {list(sizes)} do not sum to {t.shape[1]}")
    bounds = np.cumsum(sizes)[:-1]
    return [np.ascontiguousarray(p) for p in np.split(t, bounds, axis=1)]


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner extents differ: {a.shape} @ {b.shape}")
    return a @ b


class Rng:
    """Seeded PCG64 stream.

    ``Rng.derive(seed, *keys)`` gives an independent stream for a tuple of
    integer keys (e.g. ``(epoch, sample_index)``), so per-sample randomness does
    not depend on the order in which samples are processed.
    """

    def __init__(self, seed: int | np.random.SeedSequence = 0):
        if isinstance(seed, np.random.SeedSequence):
            seq = seed
        else:
            seq = np.random.SeedSequence(int(seed))
        self._gen = np.random.Generator(np.random.PCG64(seq))

    @classmethod
    def derive(cls, seed: int, *keys: int) -> "Rng":
        return cls(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys)))

    def normal(self, shape, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        return mean + std * self._gen.standard_normal(shape, dtype=DTYPE)

    def uniform(self, low: float = 0.0, high: float = 1.0, shape=None):
        return self._gen.uniform(low, high, shape)

    def integers(self, low: int, high: int) -> int:
        return int(self._gen.integers(low, high))

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, k: int) -> np.ndarray:
        """``k`` distinct indices from ``range(n)``."""
        return self._gen.choice(n, size=k, replace=False)

    def get_state(self) -> dict:
        return self._gen.bit_generator.state

    def set_state(self, state: dict) -> None:
        self._gen.bit_generator.state = state


def sample_gaussian(rng: Rng, shape: Sequence[int], mean: float, std: float) -> np.ndarray:
    if std < 0:
        raise ParameterError(f"std must be >= 0, got {std}")
    shape = _check_shape(shape)
    if std == 0:
        return np.full(shape, float(mean), dtype=DTYPE)
    return rng.normal(shape, mean, std)
