"""The three training scenarios at toy scale.

Pretrains on a synthetic "public" domain, then compares direct transfer,
fine-tuning and direct training on a shifted "clinical" domain.  Reports the
held-out J (D) of each and the epochs needed to reach a training Jaccard target.
"""
from __future__ import annotations

import argparse

from skinseg.models import ModelConfig
from skinseg.synthetic import blob_dataset
from skinseg.training import TrainConfig, run_scenario


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--variant", default="unet")
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--target", type=float, default=0.95)
    a = ap.parse_args(argv)

    public = blob_dataset(16, 32, seed=100, domain="public")
    clinical = blob_dataset(8, 32, seed=200, domain="clinical")
    held_out = blob_dataset(8, 32, seed=300, domain="clinical")
    mcfg = ModelConfig.toy(a.variant)
    pre = run_scenario(TrainConfig(max_epochs=120, patience=50, augment=None, seed=99), (public, held_out),
                       model_cfg=mcfg)
    print(f"pretrained {pre.train.epochs_run} epochs (best {pre.train.best_epoch})")
    print(f"direct transfer   J (D) {pre.report.summary()}")
    for seed in range(a.seeds):
        kw = dict(max_epochs=300, patience=300, augment=None, target_jaccard=a.target, seed=seed)
        ft = run_scenario(TrainConfig(scenario="fine_tuning", **kw), (clinical, held_out), pretrained=pre.checkpoint)
        dt = run_scenario(TrainConfig(scenario="direct_training", **kw), (clinical, held_out), model_cfg=mcfg)
        print(f"seed {seed}: fine-tuning {ft.report.summary()} in {ft.train.epochs_to_jaccard(a.target)} epochs, "
              f"direct training {dt.report.summary()} in {dt.train.epochs_to_jaccard(a.target)} epochs")


if __name__ == "__main__":
    main()
