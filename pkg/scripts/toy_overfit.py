"""Overfit a toy network on 8 synthetic 32x32 colour-blob samples.

    python scripts/toy_overfit.py --variant dense_residual_unet --target 0.95
"""
from __future__ import annotations

import argparse
import time

from skinseg.models import VARIANTS, ModelConfig, build_network
from skinseg.synthetic import blob_dataset
from skinseg.training import TrainConfig, train


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--variant", choices=VARIANTS, default="dense_residual_unet")
    ap.add_argument("--samples", type=int, default=8)
    ap.add_argument("--epochs", type=int, default=300)
    ap.add_argument("--target", type=float, default=0.95)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args(argv)

    net = build_network(ModelConfig.toy(a.variant), seed=a.seed)
    cfg = TrainConfig(max_epochs=a.epochs, patience=a.epochs, augment=None, seed=a.seed, target_jaccard=a.target)
    t0 = time.perf_counter()
    res = train(net, blob_dataset(a.samples, 32, seed=a.seed), cfg)
    for rec in res.history[:: max(1, len(res.history) // 15)] + res.history[-1:]:
        print(f"epoch {rec.epoch:4d}  train loss {rec.train_loss:.4f}  val loss {rec.val_loss:.4f}  "
              f"train J {rec.train_jaccard:.3f}")
    reached = res.epochs_to_jaccard(a.target)
    print(f"{a.variant}: J > {a.target} at epoch {reached} ({time.perf_counter() - t0:.1f}s)")


if __name__ == "__main__":
    main()
