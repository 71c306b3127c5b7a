"""Write a synthetic colour-blob dataset as PNGs plus a manifest.

    python scripts/make_synthetic_dataset.py out/blobs --train 12 --eval 4 --size 48
"""
from __future__ import annotations

import argparse
from pathlib import Path

from skinseg.data import DatasetManifest, ManifestEntry, write_manifest, write_mask_png, write_rgb_png
from skinseg.synthetic import DOMAINS, blob_dataset


def write_dataset(out: Path, n_train: int, n_eval: int, size: int, seed: int, domain: str,
                  train_split: str = "train") -> Path:
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    entries = []
    for k, s in enumerate(blob_dataset(n_train + n_eval, size, seed, domain)):
        img, msk = out / "images" / f"{s.id}.png", out / "masks" / f"{s.id}.png"
        write_rgb_png(s.image, img)
        write_mask_png(s.mask, msk)
        entries.append(ManifestEntry(img, msk, train_split if k < n_train else "eval"))
    path = out / "manifest.tsv"
    write_manifest(DatasetManifest(entries, domain), path)
    return path


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out", type=Path)
    ap.add_argument("--train", type=int, default=12)
    ap.add_argument("--eval", type=int, default=4)
    ap.add_argument("--size", type=int, default=32)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--domain", choices=sorted(DOMAINS), default="public")
    ap.add_argument("--train-split", choices=("train", "finetune"), default="train")
    a = ap.parse_args(argv)
    path = write_dataset(a.out, a.train, a.eval, a.size, a.seed, a.domain, a.train_split)
    print(f"wrote {a.train + a.eval} samples -> {path}")


if __name__ == "__main__":
    main()
