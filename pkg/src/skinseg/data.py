"""Image and mask ingestion, the 6-channel input, augmentation and dataset manifests.

Pipeline per sample: decode -> resize to the network size -> (train only)
augment -> RGB+HSV stacking and per-image, per-channel standardization.
"""
from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from .errors import ConfigError, ContractError, DecodeError
from .tensor import DTYPE, Rng

SPLITS = ("train", "finetune", "eval")
MASK_ON_READ = 128
DEFAULT_SIZE = 128  # network input side


@dataclass
class Sample:
    """``image`` is RGB [3,H,W] in [0,1] before :func:`make_input`, [6,H,W] after."""

    id: str
    image: np.ndarray
    mask: np.ndarray


@dataclass
class ManifestEntry:
    image: Path
    mask: Path
    split: str


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    source: str = "generic"

    def split(self, *names: str) -> "DatasetManifest":
        return DatasetManifest([e for e in self.entries if e.split in names], self.source)

    def __len__(self):
        return len(self.entries)


@dataclass
class AugmentParams:
    rotation_degrees: float = 30.0
    scale_min: float = 0.8
    scale_max: float = 1.25
    crop: bool = True

    def __post_init__(self):
        if not 0 <= self.rotation_degrees <= 180:
            raise ConfigError("rotation_degrees must lie in [0, 180]")
        if not 0 < self.scale_min <= self.scale_max:
            raise ConfigError("need 0 < scale_min <= scale_max")

    @classmethod
    def none(cls) -> "AugmentParams":
        return cls(rotation_degrees=0.0, scale_min=1.0, scale_max=1.0, crop=False)


# -- decoding ------------------------------------------------------------------

def _open(path) -> Image.Image:
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            return im.copy()
    except (OSError, UnidentifiedImageError, SyntaxError) as exc:
        raise DecodeError(f"cannot decode {path}: {exc}") from exc


def decode_image(path) -> np.ndarray:
    """8-bit RGB file -> [3,H,W] float64 with value/255."""
    im = _open(path).convert("RGB")
    return np.asarray(im, dtype=DTYPE).transpose(2, 0, 1) / 255.0


def decode_mask(path) -> np.ndarray:
    """Grayscale mask -> [H,W] uint8 in {0,1}; pixels >= 128 are skin."""
    im = _open(path).convert("L")
    return (np.asarray(im) >= MASK_ON_READ).astype(np.uint8)


def write_mask_png(mask, path) -> None:
    Image.fromarray((np.asarray(mask) > 0).astype(np.uint8) * 255, mode="L").save(path)


def write_rgb_png(rgb, path) -> None:
    arr = np.clip(np.round(np.asarray(rgb).transpose(1, 2, 0) * 255), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


# -- colour and standardization ------------------------------------------------

def rgb_to_hsv(rgb) -> np.ndarray:
    """Hexcone RGB -> HSV, all channels in [0,1] (hue = degrees/360).

    Hue and saturation are 0 when the pixel is black or gray."""
    rgb = np.asarray(rgb, dtype=DTYPE)
    if rgb.shape[0] != 3:
        raise ContractError(f"expected [3,H,W] RGB, got {rgb.shape}")
    if rgb.size and (rgb.min() < 0 or rgb.max() > 1):
        raise ContractError("RGB values must lie in [0, 1]")
    r, g, b = rgb
    v = rgb.max(axis=0)
    chroma = v - rgb.min(axis=0)
    s = np.where(v > 0, chroma / np.where(v > 0, v, 1.0), 0.0)
    c = np.where(chroma > 0, chroma, 1.0)
    h = np.where(v == r, ((g - b) / c) % 6.0,
                 np.where(v == g, (b - r) / c + 2.0, (r - g) / c + 4.0))
    h = np.where(chroma > 0, h / 6.0, 0.0)
    return np.stack([h, s, v])


def standardize(x, floor: float = 1e-8) -> np.ndarray:
    """Zero mean, unit std per channel; near-constant channels become all zeros."""
    x = np.asarray(x, dtype=DTYPE)
    mean = x.mean(axis=(1, 2), keepdims=True)
    centered = x - mean
    std = np.sqrt((centered**2).mean(axis=(1, 2), keepdims=True))
    return np.where(std < floor, 0.0, centered / np.where(std < floor, 1.0, std))


def make_input(rgb) -> np.ndarray:
    """[3,H,W] RGB -> standardized [6,H,W] stack ordered R, G, B, H, S, V."""
    rgb = np.asarray(rgb, dtype=DTYPE)
    return standardize(np.concatenate([rgb, rgb_to_hsv(rgb)], axis=0))


# -- resizing ------------------------------------------------------------------

def _src_coords(n_in: int, n_out: int) -> np.ndarray:
    return (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5


def _hw(size) -> tuple[int, int]:
    return (size, size) if np.isscalar(size) else (int(size[0]), int(size[1]))


def resize_bilinear(image, size) -> np.ndarray:
    """Half-pixel-centred bilinear resize of [C,H,W] to [C,size,size]
    (or [C,*size] for an (h, w) pair)."""
    image = np.asarray(image, dtype=DTYPE)
    _, h, w = image.shape
    out_h, out_w = _hw(size)
    if (h, w) == (out_h, out_w):
        return image.copy()

    def axis_weights(n_in, n_out):
        src = np.clip(_src_coords(n_in, n_out), 0, n_in - 1)
        lo = np.floor(src).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    y0, y1, wy = axis_weights(h, out_h)
    x0, x1, wx = axis_weights(w, out_w)
    # a + w*(b - a) keeps constant regions exactly constant
    rows = image[:, y0, :] + wy[None, :, None] * (image[:, y1, :] - image[:, y0, :])
    return rows[:, :, x0] + wx[None, None, :] * (rows[:, :, x1] - rows[:, :, x0])


def resize_nearest(mask, size) -> np.ndarray:
    """Nearest-neighbour resize of the last two axes; keeps masks binary."""
    mask = np.asarray(mask)
    h, w = mask.shape[-2:]
    out_h, out_w = _hw(size)
    ys = np.minimum(np.floor((np.arange(out_h) + 0.5) * h / out_h).astype(int), h - 1)
    xs = np.minimum(np.floor((np.arange(out_w) + 0.5) * w / out_w).astype(int), w - 1)
    return mask[..., ys[:, None], xs[None, :]].copy()


# -- augmentation ----------------------------------------------------------------

def _snap(v: float) -> float:
    r = round(v)
    return float(r) if abs(v - r) < 1e-12 else v


def affine_warp(image, mask, angle_deg: float = 0.0, scale: float = 1.0,
                offset: tuple[float, float] = (0.0, 0.0)):
    """Rotate by ``angle_deg`` and zoom by ``scale`` about the image centre, then
    shift by ``offset`` (the crop window), keeping the original size.

    The image is sampled bilinearly and the mask by nearest neighbour; both use
    half-sample reflection outside the source."""
    image = np.asarray(image, dtype=DTYPE)
    h, w = image.shape[-2:]
    theta = math.radians(angle_deg)
    cos, sin = _snap(math.cos(theta)), _snap(math.sin(theta))
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h, dtype=DTYPE), np.arange(w, dtype=DTYPE), indexing="ij")
    dy = (yy - cy - offset[0]) / scale
    dx = (xx - cx - offset[1]) / scale
    # inverse rotation maps output pixels back to source positions
    sy = cos * dy + sin * dx + cy
    sx = -sin * dy + cos * dx + cx
    coords = np.stack([sy, sx])
    out = np.stack([ndimage.map_coordinates(ch, coords, order=1, mode="reflect") for ch in image])
    m = ndimage.map_coordinates(np.asarray(mask, dtype=DTYPE), coords, order=0, mode="reflect")
    return out, (m >= 0.5).astype(np.uint8)


def augment(sample: Sample, params: AugmentParams, rng: Rng) -> Sample:
    """Random rotation, scale and crop, applied identically to image and mask.

    Four numbers are always drawn (angle, log-scale, two crop offsets) so the
    stream position does not depend on the parameter values."""
    h, w = sample.image.shape[-2:]
    angle = rng.uniform(-1.0, 1.0) * params.rotation_degrees
    scale = math.exp(rng.uniform(math.log(params.scale_min), math.log(params.scale_max)))
    uy, ux = rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)
    if params.crop and scale > 1:
        offset = (uy * (scale - 1) * h / 2, ux * (scale - 1) * w / 2)
    else:
        offset = (0.0, 0.0)
    if angle == 0 and scale == 1 and offset == (0.0, 0.0):
        return Sample(sample.id, sample.image.copy(), sample.mask.copy())
    image, mask = affine_warp(sample.image, sample.mask, angle, scale, offset)
    return Sample(sample.id, image, mask)


# -- manifests -------------------------------------------------------------------

def read_manifest(path, source: str = "generic") -> DatasetManifest:
    """Tab-separated ``image<TAB>mask<TAB>split`` lines; relative paths resolve
    against the manifest's directory."""
    path = Path(path)
    base = path.parent
    entries = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3 or parts[2] not in SPLITS:
            raise ConfigError(f"{path}:{lineno}: expected image<TAB>mask<TAB>split with split in {SPLITS}")
        entries.append(ManifestEntry(base / parts[0], base / parts[1], parts[2]))
    return DatasetManifest(entries, source)


def write_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    lines = []
    for e in manifest.entries:
        img, msk = Path(e.image), Path(e.mask)
        try:
            img, msk = img.resolve().relative_to(path.parent.resolve()), msk.resolve().relative_to(path.parent.resolve())
        except ValueError:
            img, msk = img.resolve(), msk.resolve()
        lines.append(f"{img.as_posix()}\t{msk.as_posix()}\t{e.split}")
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def check_manifest(manifest: DatasetManifest) -> None:
    missing = [str(p) for e in manifest.entries for p in (e.image, e.mask) if not Path(p).is_file()]
    if missing:
        raise DecodeError(f"{len(missing)} manifest file(s) missing, first: {missing[0]}")


def load_sample(entry: ManifestEntry, size: int = DEFAULT_SIZE) -> Sample:
    rgb = resize_bilinear(decode_image(entry.image), size)
    mask = resize_nearest(decode_mask(entry.mask), size)
    return Sample(Path(entry.image).stem, rgb, mask)


def load_samples(manifest: DatasetManifest, size: int = DEFAULT_SIZE, workers: int = 1) -> list[Sample]:
    """Decode and resize every entry; output order follows the manifest."""
    check_manifest(manifest)
    if workers <= 1:
        return [load_sample(e, size) for e in manifest.entries]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda e: load_sample(e, size), manifest.entries))


def pair_directory(images_dir, masks_dir, split: str = "train", source: str = "generic",
                   mask_suffix: str = "") -> DatasetManifest:
    """Converter contract for public datasets: pair images with masks sharing a
    file stem (optionally ``stem + mask_suffix``)."""
    if split not in SPLITS:
        raise ConfigError(f"split must be one of {SPLITS}")
    masks = {p.stem: p for p in Path(masks_dir).iterdir() if p.is_file()}
    entries = []
    for img in sorted(Path(images_dir).iterdir()):
        if not img.is_file():
            continue
        m = masks.get(img.stem + mask_suffix)
        if m is not None:
            entries.append(ManifestEntry(img, m, split))
    return DatasetManifest(entries, source)


# -- dataset procedures -------------------------------------------------------------

def md5_hex(path) -> str:
    h = hashlib.md5()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def select_subset_md5(paths: Sequence, n: int) -> list:
    """First ``n`` paths in ascending order of the MD5 of their file bytes."""
    if n > len(paths):
        raise ConfigError(f"asked for {n} files out of {len(paths)}")
    if n == 0:
        return []
    try:
        keyed = sorted((md5_hex(p), i) for i, p in enumerate(paths))
    except OSError as exc:
        raise DecodeError(f"cannot hash file: {exc}") from exc
    return [paths[i] for _, i in keyed[:n]]


def balance_sources(manifests: Sequence[DatasetManifest], targets: Sequence[int], seed: int) -> DatasetManifest:
    """Uniformly downsample each source to its target count and merge.

    Each source draws from its own stream ``Rng.derive(seed, index)``; kept
    entries retain their original relative order."""
    if len(manifests) != len(targets):
        raise ConfigError("one target count per manifest is required")
    merged = []
    for k, (man, target) in enumerate(zip(manifests, targets)):
        if target > len(man) or target < 0:
            raise ConfigError(f"target {target} exceeds source {man.source!r} of size {len(man)}")
        keep = np.sort(Rng.derive(seed, k).choice(len(man), target)) if target else []
        merged.extend(man.entries[i] for i in keep)
    return DatasetManifest(merged, "+".join(m.source for m in manifests))
