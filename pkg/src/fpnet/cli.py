"""Command-line interface: gen-data, train, infer, eval, ablate.

Exit codes: 0 ok, 2 usage/config error, 3 data/format error, 4 numeric error.
Every run writes a provenance record (config hash, seed, code version) into
its artifacts; no timestamps, so identical runs produce identical bytes.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__
from .checkpoint import load_checkpoint, restore_state, save_checkpoint
from .data import SynthSpec, gen_dataset, load_split
from .errors import ConfigError, DataError, FormatError, NumericError, UsageError
from .metrics import evaluate_dataset
from .model import FPNet, FPNetConfig, ablation_config
from .tensor import Tensor, resize_bilinear
from .training import CSV_HEADER, train_loop, write_trace

ABLATION_ROWS = ("baseline", "fpm", "fpm_hrp", "full")
FREQ_ROWS = ("freq_low", "freq_high", "freq_both")


def _provenance(config: FPNetConfig) -> dict:
    return {"config_hash": config.config_hash(), "seed": config.seed,
            "version": __version__}


def _load_config(args) -> FPNetConfig:
    if getattr(args, "config", None):
        config = FPNetConfig.from_file(args.config)
    else:
        config = FPNetConfig()
    overrides = {}
    for flag, key in (("seed", "seed"), ("epochs", "epochs"),
                      ("batch", "batch_size"), ("size", "input_size")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "freq", None):
        overrides["freq_mode"] = args.freq
    for item in getattr(args, "ablation", None) or []:
        if "=" not in item:
            raise ConfigError(f"--ablation expects name=on|off; got {item!r}")
        name, state = item.split("=", 1)
        if name not in ("fpm", "hrp", "cfm") or state not in ("on", "off"):
            raise ConfigError(f"--ablation expects {{fpm,hrp,cfm}}=on|off; got {item!r}")
        overrides[f"use_{name}"] = state == "on"
    return replace(config, **overrides).validate()


# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    spec = SynthSpec(size=args.size or 64, n_train=args.train_count,
                     n_test=args.test_count, lam=args.lam,
                     octaves=args.octaves, seed=args.seed or 0)
    out = Path(args.out)
    gen_dataset(spec, out)
    with open(out / "provenance.json", "w", encoding="utf-8") as fh:
        json.dump({"seed": spec.seed, "version": __version__,
                   "spec": spec.__dict__}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {spec.n_train}+{spec.n_test} samples to {out}")
    return 0


def _fit(config: FPNetConfig, data_dir, out_dir: Path, *,
         checkpoint=None, steps=None) -> FPNet:
    images, masks, _ = load_split(data_dir, "train")
    model = FPNet(config)
    if checkpoint:
        restore_state(model.store, load_checkpoint(checkpoint))
    n = images.shape[0]
    batch = min(config.batch_size, n)
    steps_per_epoch = max(1, (n + batch - 1) // batch)
    total_steps = steps if steps is not None else config.epochs * steps_per_epoch
    rows = train_loop(model, images, masks, total_steps=total_steps)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_trace(out_dir / "loss.csv", rows, _provenance(config))
    save_checkpoint(model.store, out_dir / "model.ckpt")
    with open(out_dir / "config.cfg", "w", encoding="utf-8") as fh:
        fh.write(config.to_text())
    return model


def cmd_train(args) -> int:
    config = _load_config(args)
    if not args.data:
        raise UsageError("train requires --data pointing at a generated dataset")
    out_dir = Path(args.out or "runs/train")
    _fit(config, args.data, out_dir, checkpoint=args.checkpoint, steps=args.steps)
    print(f"trained {config.epochs} epochs; artifacts in {out_dir}")
    return 0


def _predict_dir(model: FPNet, src: Path, out_dir: Path) -> list[str]:
    img_dir = src / "images" if (src / "images").is_dir() else src
    stems = sorted(p.stem for p in img_dir.glob("*.png"))
    if not stems:
        raise DataError(f"no .png images found in {img_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)
    n = model.config.input_size
    for stem in stems:
        with Image.open(img_dir / f"{stem}.png") as im:
            arr = np.moveaxis(np.asarray(im.convert("RGB"), np.float32), -1, 0) / 255.0
        h, w = arr.shape[1:]
        x = Tensor(arr[None])
        if (h, w) != (n, n):
            x = resize_bilinear(x, n, n)
        prob = model.predict(x)
        if (h, w) != (n, n):
            prob = resize_bilinear(Tensor(prob), h, w).data
        out = (np.clip(prob[0, 0], 0, 1) * 255.0).round().astype(np.uint8)
        Image.fromarray(out).save(out_dir / f"{stem}.png", format="PNG")
    return stems


def cmd_infer(args) -> int:
    if not args.checkpoint:
        raise UsageError("infer requires --checkpoint")
    if not args.data:
        raise UsageError("infer requires --data with input images")
    ckpt_path = Path(args.checkpoint)
    if args.config:
        config = FPNetConfig.from_file(args.config)
    elif (ckpt_path.parent / "config.cfg").exists():
        config = FPNetConfig.from_file(ckpt_path.parent / "config.cfg")
    else:
        raise UsageError("infer needs --config (no config.cfg next to the checkpoint)")
    model = FPNet(config)
    restore_state(model.store, load_checkpoint(ckpt_path))
    out_dir = Path(args.out or "runs/infer")
    stems = _predict_dir(model, Path(args.data), out_dir)
    with open(out_dir / "provenance.json", "w", encoding="utf-8") as fh:
        json.dump(_provenance(config), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(stems)} predictions to {out_dir}")
    return 0


def cmd_eval(args) -> int:
    if not args.pred or not args.gt:
        raise UsageError("eval requires --pred and --gt directories")
    report = evaluate_dataset(args.pred, args.gt)
    print(report.to_table())
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
            fh.write(report.to_json() + "\n")
        with open(out_dir / "report.txt", "w", encoding="utf-8") as fh:
            fh.write(report.to_table() + "\n")
    return 0


def cmd_ablate(args) -> int:
    base = _load_config(args)
    if args.size is None:
        base = replace(base, input_size=64)
    if args.epochs is None:
        base = replace(base, epochs=5)
    base = replace(base, enc_channels=(16, 24, 32, 48), ncd_width=16,
                   cfm_width=32, bottleneck_width=8, hrp_width=16).validate()
    out_dir = Path(args.out or "runs/ablate")
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.data:
        data_dir = Path(args.data)
    else:
        data_dir = out_dir / "data"
        gen_dataset(SynthSpec(size=base.input_size, n_train=8, n_test=4,
                              lam=0.5, seed=base.seed), data_dir)

    lines = []
    for row in ABLATION_ROWS + FREQ_ROWS:
        config = ablation_config(base, row)
        run_dir = out_dir / row
        model = _fit(config, data_dir, run_dir)
        pred_dir = run_dir / "preds"
        _predict_dir(model, data_dir / "test", pred_dir)
        report = evaluate_dataset(pred_dir, data_dir / "test" / "masks")
        lines.append((row, report))

    header = (f"{'row':<12} {'S_alpha':>9} {'E_mean':>9} "
              f"{'F_beta_w':>9} {'MAE':>9}")
    table = [header]
    for row, r in lines:
        table.append(f"{row:<12} {r.s_alpha:>9.4f} {r.e_mean:>9.4f} "
                     f"{r.f_beta_omega:>9.4f} {r.mae:>9.4f}")
    text = "\n".join(table)
    print(text)
    prov = _provenance(base)
    with open(out_dir / "ablation.csv", "w", encoding="utf-8") as fh:
        for key, value in prov.items():
            fh.write(f"# {key}={value}\n")
        fh.write("row,s_alpha,e_mean,f_beta_omega,mae\n")
        for row, r in lines:
            fh.write(f"{row},{r.s_alpha:.6f},{r.e_mean:.6f},"
                     f"{r.f_beta_omega:.6f},{r.mae:.6f}\n")
    with open(out_dir / "ablation.txt", "w", encoding="utf-8") as fh:
        fh.write(text + "\n")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fpnet",
        description="Two-stage frequency-aware camouflaged object segmentation")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--seed", type=int, help="RNG seed override")
        p.add_argument("--data", help="dataset directory")
        p.add_argument("--out", help="output directory")
        p.add_argument("--checkpoint", help="checkpoint path")
        p.add_argument("--ablation", action="append", metavar="NAME=on|off",
                       help="toggle fpm/hrp/cfm modules")
        p.add_argument("--freq", choices=("high", "low", "both"),
                       help="frequency branch selection")
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch", type=int)
        p.add_argument("--size", type=int, help="input resolution")

    p = sub.add_parser("gen-data", help="generate a synthetic camouflage dataset")
    common(p)
    p.add_argument("--train-count", type=int, default=16)
    p.add_argument("--test-count", type=int, default=8)
    p.add_argument("--lam", type=float, default=0.5,
                   help="camouflage strength in [0,1]")
    p.add_argument("--octaves", type=int, default=3)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model and write loss.csv + checkpoint")
    common(p)
    p.add_argument("--steps", type=int, help="stop after N optimizer steps")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="write predicted masks as 8-bit grayscale PNGs")
    common(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="evaluate predictions against ground truth")
    common(p)
    p.add_argument("--pred", help="directory of predicted masks")
    p.add_argument("--gt", help="directory of ground-truth masks")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the module and frequency ablation rows")
    common(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    raise SystemExit(main())
