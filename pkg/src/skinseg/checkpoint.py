"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"DRUS"                      magic
    uint32 version               currently 1
    uint32 header length H
    H bytes UTF-8 JSON header    model config, parameter names/shapes, metadata
    float64[...]                 parameters in registry order
    float64[...]                 momentum velocities in registry order
    uint32 CRC-32                over every preceding byte
"""
from __future__ import annotations

import hashlib
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .models import ModelConfig, SegmentationNet, build_network, count_params

MAGIC = b"DRUS"
VERSION = 1


class ChecksumError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    model_config: ModelConfig
    names: list[str]
    params: list[np.ndarray]
    velocities: list[np.ndarray]
    epochs_completed: int = 0
    best_val_loss: float | None = None
    rng_state: dict | None = None
    meta: dict = field(default_factory=dict)
    version: int = VERSION

    def digest(self) -> str:
        """SHA-256 over parameter bytes in registry order."""
        h = hashlib.sha256()
        for p in self.params:
            h.update(np.ascontiguousarray(p, dtype="<f8").tobytes())
        return h.hexdigest()


def from_network(net: SegmentationNet, **meta) -> Checkpoint:
    ps = net.parameters()
    return Checkpoint(
        model_config=net.cfg,
        names=[p.name for p in ps],
        params=[p.value.copy() for p in ps],
        velocities=[(p.velocity if p.velocity is not None else np.zeros(p.shape)).copy() for p in ps],
        **meta,
    )


def to_network(ckpt: Checkpoint) -> SegmentationNet:
    """Fresh network carrying the checkpoint's parameters and velocities."""
    net = build_network(ckpt.model_config, seed=None)
    load_into(net, ckpt)
    return net


def load_into(net: SegmentationNet, ckpt: Checkpoint) -> None:
    ps = net.parameters()
    if [p.name for p in ps] != ckpt.names:
        raise CheckpointError("checkpoint parameter registry does not match the network")
    for p, v, vel in zip(ps, ckpt.params, ckpt.velocities):
        if v.shape != p.shape:
            raise CheckpointError(f"{p.name}: shape {v.shape} != {p.shape}")
        p.value = v.copy()
        p.velocity = vel.copy()
        p.grad = np.zeros(p.shape)


def encode(ckpt: Checkpoint) -> bytes:
    header = {
        "model_config": ckpt.model_config.to_dict(),
        "names": ckpt.names,
        "shapes": [list(p.shape) for p in ckpt.params],
        "epochs_completed": ckpt.epochs_completed,
        "best_val_loss": ckpt.best_val_loss,
        "rng_state": ckpt.rng_state,
        "meta": ckpt.meta,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = [MAGIC, struct.pack("<II", ckpt.version, len(hbytes)), hbytes]
    body += [np.ascontiguousarray(a, dtype="<f8").tobytes() for a in ckpt.params]
    body += [np.ascontiguousarray(a, dtype="<f8").tobytes() for a in ckpt.velocities]
    blob = b"".join(body)
    return blob + struct.pack("<I", zlib.crc32(blob))


def decode(blob: bytes) -> Checkpoint:
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic or truncated)")
    version, hlen = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise UnsupportedVersionError(f"checkpoint version {version} is not supported (expected {VERSION})")
    (stored,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if zlib.crc32(blob[:-4]) != stored:
        raise ChecksumError("checkpoint checksum mismatch (file corrupt or truncated)")
    try:
        header = json.loads(blob[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint header: {exc}") from exc
    shapes = [tuple(s) for s in header["shapes"]]
    sizes = [int(np.prod(s)) for s in shapes]
    data = np.frombuffer(blob, dtype="<f8", offset=12 + hlen, count=(len(blob) - 16 - hlen) // 8)
    if data.size != 2 * sum(sizes):
        raise CheckpointError("checkpoint payload size does not match its header")
    arrays, pos = [], 0
    for _ in range(2):
        for shape, size in zip(shapes, sizes):
            arrays.append(data[pos:pos + size].reshape(shape).astype(np.float64))
            pos += size
    cfg = ModelConfig.from_dict(header["model_config"])
    if sum(sizes) != count_params(cfg):
        raise CheckpointError("parameter count does not match the stored model config")
    n = len(shapes)
    return Checkpoint(cfg, header["names"], arrays[:n], arrays[n:], header["epochs_completed"],
                      header["best_val_loss"], header["rng_state"], header.get("meta", {}), version)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(encode(ckpt))


def load_checkpoint(path) -> Checkpoint:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode(blob)
