"""Command line entry point: ``skinseg <command> [options]``.

Commands: pretrain, train, finetune, eval, predict, gradcheck, params, import.
Exit status is 0 on success, 1 when an operation failed (a gradient check,
one or more predictions) and 2 on configuration or input errors.
"""
from __future__ import annotations

import argparse
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from PIL import Image

from . import checkpoint as ckpt_io
from .config import RunConfig
from .data import (
    balance_sources, decode_image, make_input, pair_directory, read_manifest, resize_bilinear,
    resize_nearest, write_manifest,
)
from .errors import ConfigError, SkinSegError
from .gradcheck import check_layers, check_networks
from .metrics import binarize
from .models import build_network, count_params
from .training import run_scenario, write_history

log = logging.getLogger("skinseg")

SCENARIO_OF = {"pretrain": "direct_training", "train": "direct_training", "finetune": "fine_tuning"}


def confidence_to_u8(p) -> np.ndarray:
    """Confidence in [0,1] -> 8-bit intensity, rounding halves up (0.5 -> 128)."""
    return np.floor(np.clip(np.asarray(p, dtype=np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def mask_to_u8(p, threshold: float = 0.5) -> np.ndarray:
    return binarize(p, threshold) * np.uint8(255)


def _write_run_log(out: Path, command: str, rc: RunConfig, scenario: str | None, extra: dict | None = None):
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"# skinseg {command} {datetime.now(timezone.utc).isoformat(timespec='seconds')}"]
    if scenario:
        lines.append(f"scenario={scenario}")
    lines += rc.effective_lines(scenario)
    for k, v in (extra or {}).items():
        lines.append(f"{k}={v}")
    (out / "run.log").write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_train(args, rc: RunConfig) -> int:
    scenario = SCENARIO_OF[args.command]
    out = Path(args.out)
    pretrained = ckpt_io.load_checkpoint(args.checkpoint) if args.checkpoint else None
    manifest = read_manifest(args.manifest)
    tcfg = rc.train_config(scenario)
    _write_run_log(out, args.command, rc, scenario,
                   {"manifest": args.manifest, "checkpoint": args.checkpoint or "none"})
    res = run_scenario(tcfg, manifest, pretrained=pretrained,
                       model_cfg=None if pretrained else rc.model_config(), workers=rc["data.workers"])
    ckpt_io.save_checkpoint(res.checkpoint, out / "model.ckpt")
    write_history(res.train.history, out / "history.tsv")
    print(f"best epoch {res.train.best_epoch} of {res.train.epochs_run}, "
          f"val loss {res.checkpoint.best_val_loss:.4f} -> {out / 'model.ckpt'}")
    if res.report is not None:
        res.report.save(out / "report.tsv")
        print(f"eval J (D): {res.report.summary()}")
    return 0


def cmd_eval(args, rc: RunConfig) -> int:
    out = Path(args.out)
    ckpt = ckpt_io.load_checkpoint(args.checkpoint)
    manifest = read_manifest(args.manifest)
    if not manifest.split("eval").entries:
        raise ConfigError("manifest has no entries with split 'eval'")
    _write_run_log(out, "eval", rc, None, {"manifest": args.manifest, "checkpoint": args.checkpoint})
    tcfg = rc.train_config("direct_transfer")
    res = run_scenario(tcfg, manifest.split("eval"), pretrained=ckpt, workers=rc["data.workers"])
    res.report.save(out / "report.tsv")
    print(f"{len(res.report.per_image)} images  J (D): {res.report.summary()}  "
          f"[per-image mean {res.report.mean_jaccard:.2f} ({res.report.mean_dice:.2f})]")
    return 0


def cmd_predict(args, rc: RunConfig) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    net = ckpt_io.to_network(ckpt_io.load_checkpoint(args.checkpoint))
    size = net.cfg.input_size
    failed = 0
    for path in args.images:
        path = Path(path)
        try:
            rgb = decode_image(path)
            h, w = rgb.shape[1:]
            p = net.forward(make_input(resize_bilinear(rgb, size))[None])[0, 0]
            full = np.clip(resize_bilinear(p[None], (h, w))[0], 0.0, 1.0)
            Image.fromarray(confidence_to_u8(p), mode="L").save(out / f"{path.stem}_conf.png")
            Image.fromarray(mask_to_u8(p), mode="L").save(out / f"{path.stem}_mask.png")
            Image.fromarray(confidence_to_u8(full), mode="L").save(out / f"{path.stem}_conf_full.png")
            Image.fromarray(resize_nearest(mask_to_u8(p), (h, w)), mode="L").save(out / f"{path.stem}_mask_full.png")
            print(f"ok   {path}")
        except (SkinSegError, OSError, ValueError) as exc:
            failed += 1
            print(f"FAIL {path}: {exc}", file=sys.stderr)
    return 1 if failed else 0


def cmd_gradcheck(args, rc: RunConfig, layer_cases=None) -> int:
    results = check_layers(layer_cases)
    if not args.layers_only:
        results += check_networks(seed=rc["train.seed"])
    width = max(len(r.name) for r in results)
    print(f"{'layer':<{width}}  {'max rel err':>12}  {'tol':>8}  status")
    for r in results:
        print(f"{r.name:<{width}}  {r.error:12.3e}  {r.tolerance:8.0e}  {'pass' if r.passed else 'FAIL'}")
    bad = [r.name for r in results if not r.passed]
    if bad:
        print(f"gradient check failed: {', '.join(bad)}")
        return 1
    return 0


def cmd_params(args, rc: RunConfig) -> int:
    cfg = rc.model_config()
    n = count_params(build_network(cfg, seed=None))
    print(f"{cfg.variant} ({cfg.scale}): {n} parameters ({n / 1e6:.1f}M)")
    return 0


def cmd_import(args, rc: RunConfig) -> int:
    manifest = pair_directory(args.images, args.masks, args.split, args.source, args.mask_suffix)
    if args.sample is not None:
        manifest = balance_sources([manifest], [args.sample], rc["train.seed"])
    write_manifest(manifest, args.output)
    print(f"{len(manifest)} entries -> {args.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    common.add_argument("--seed", type=int, help="shorthand for --set train.seed=N")
    common.add_argument("--workers", type=int, help="data loading threads (1 = deterministic default)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="skinseg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("pretrain", "train", "finetune"):
        p = sub.add_parser(name, parents=[common], help=f"{SCENARIO_OF[name].replace('_', ' ')} on a manifest")
        p.add_argument("--manifest", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--checkpoint", required=(name == "finetune"))
    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on the eval split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p = sub.add_parser("predict", parents=[common], help="write confidence maps and masks")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("images", nargs="+")
    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    p.add_argument("--layers-only", action="store_true")
    sub.add_parser("params", parents=[common], help="parameter count of the configured model")
    p = sub.add_parser("import", parents=[common], help="pair an image and a mask directory into a manifest")
    p.add_argument("--images", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--source", default="generic")
    p.add_argument("--mask-suffix", default="")
    p.add_argument("--sample", type=int, help="uniformly keep N entries (seeded)")
    p.add_argument("--output", required=True)
    return parser


COMMANDS = {"pretrain": cmd_train, "train": cmd_train, "finetune": cmd_train, "eval": cmd_eval,
            "predict": cmd_predict, "gradcheck": cmd_gradcheck, "params": cmd_params, "import": cmd_import}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = list(args.set)
        if args.seed is not None:
            overrides.append(f"train.seed={args.seed}")
        if args.workers is not None:
            overrides.append(f"data.workers={args.workers}")
        rc = RunConfig.load(args.config, overrides)
        return COMMANDS[args.command](args, rc)
    except (SkinSegError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
