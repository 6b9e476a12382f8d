"""Command-line interface.

Subcommands: gen-data, train, eval, analyze-spectrum, morph-report,
gradcheck. Report paths write CSV plus a rendered PNG figure. Exit codes:
0 success, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import loss as L
from . import ops
from .data import generate_dataset, load_dataset
from .errors import ConfigError, DataError, NonFiniteError, NumericError, SpecsegError
from .model import ModelConfig, SegModel
from .serial import load_checkpoint, save_checkpoint, write_pgm
from .spectral import energy_retention
from .tensor import Tensor
from .train import TrainConfig, evaluate, split_by_stem_hash, train

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


def _load_config_file(path):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a JSON object")
    model_keys = set(ModelConfig.__dataclass_fields__)
    train_keys = set(TrainConfig.__dataclass_fields__)
    unknown = set(raw) - model_keys - train_keys
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    mc = ModelConfig.from_dict({k: v for k, v in raw.items() if k in model_keys})
    tc = TrainConfig.from_dict({k: v for k, v in raw.items() if k in train_keys})
    return mc, tc


def cmd_gen_data(args):
    hw = (args.hw, args.hw)
    stems = generate_dataset(args.out, args.kind, args.count, args.size, hw,
                             wiggle=args.wiggle, tube_width=args.tube_width, seed=args.seed)
    print(f"wrote {len(stems)} {args.kind} samples to {args.out}")
    return 0


def cmd_train(args):
    mc, tc = _load_config_file(args.config)
    samples = load_dataset(args.data, mc.input_size)
    if not samples:
        raise DataError(f"no samples found in {args.data}")
    train_split, val_split = split_by_stem_hash(samples, tc.val_fraction)
    model = SegModel(mc)
    run_dir = Path(args.out)
    run_dir.mkdir(parents=True, exist_ok=True)
    with open(run_dir / "config.json", "w") as fh:
        json.dump({**mc.to_dict(), **tc.to_dict()}, fh, indent=2, sort_keys=True)

    def on_epoch(epoch, row):
        print(f"epoch {epoch:3d}  val dice {row.dice:.4f}  iou {row.iou:.4f}  "
              f"loss {row.loss_total:.4f}")

    best_state, history = train(model, train_split, val_split, tc, on_epoch=on_epoch)
    from .train import MetricsRow

    with open(run_dir / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MetricsRow.COLUMNS)
        for row in history:
            w.writerow(row.row())
    save_checkpoint(run_dir / "best.ckpt", {**mc.to_dict(), **tc.to_dict()}, tc.seed, best_state)
    from .plots import save_training_curves

    save_training_curves(run_dir / "training_curves.png", history)
    if args.dump_beta:
        model.load_state_arrays({k: v for k, v in best_state.items() if not k.startswith("loss_w.")})
        beta_dir = run_dir / "beta"
        beta_dir.mkdir(exist_ok=True)
        for s in val_split[: args.dump_beta]:
            x = Tensor(s.image[None].astype(mc.np_dtype))
            _, gates = model.forward(x, train=False)
            for stage, g in enumerate(gates, start=1):
                write_pgm(beta_dir / f"{s.id}_stage{stage}.pgm", g.data[0, 0])
    final_val = [r for r in history if r.split == "val"]
    if final_val:
        best = max(r.dice for r in final_val)
        print(f"best val dice {best:.4f}; run dir: {run_dir}")
    return 0


def cmd_eval(args):
    config, seed, arrays = load_checkpoint(args.checkpoint)
    model_keys = set(ModelConfig.__dataclass_fields__)
    mc = ModelConfig.from_dict({k: v for k, v in config.items() if k in model_keys})
    model = SegModel(mc)
    model.load_state_arrays({k: v for k, v in arrays.items() if not k.startswith("loss_w.")})
    samples = load_dataset(args.data, mc.input_size)
    if not samples:
        raise DataError(f"no samples found in {args.data}")
    row = evaluate(model, samples, threshold=args.threshold)
    print(f"n={len(samples)}  dice={row.dice:.4f}  iou={row.iou:.4f}  loss={row.loss_total:.4f}")
    if args.out:
        from .train import MetricsRow

        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(MetricsRow.COLUMNS)
            w.writerow(row.row())
    return 0


def cmd_analyze_spectrum(args):
    root = Path(args.data)
    img_dir = root / "images" if (root / "images").is_dir() else root
    if not img_dir.is_dir():
        raise DataError(f"{img_dir} is not a directory")
    from PIL import Image

    out_csv = Path(args.out) if args.out else img_dir.parent / "spectrum.csv"
    rows = []
    for p in sorted(img_dir.iterdir()):
        if p.suffix.lower() not in (".png", ".pgm", ".ppm"):
            continue
        try:
            with Image.open(p) as im:
                arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
        except Exception as exc:
            raise DataError(f"unreadable image {p}: {exc}") from exc
        H, W = arr.shape
        k = min(args.k, H, W)
        stats = energy_retention(arr, k)
        rows.append([str(p), H, W, k, f"{stats.total_energy:.6e}", f"{stats.retention_ratio:.6f}"])
    if not rows:
        raise DataError(f"no images found under {img_dir}")
    with open(out_csv, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "H", "W", "k", "total_energy", "retention_ratio"])
        w.writerows(rows)
    ratios = [float(r[5]) for r in rows]
    from .plots import save_retention_hist

    fig_path = out_csv.with_suffix(".png")
    save_retention_hist(fig_path, ratios, args.k)
    print(f"{len(rows)} images; mean retention {np.mean(ratios):.4f}; "
          f"wrote {out_csv} and {fig_path}")
    return 0


def cmd_morph_report(args):
    mask_dir = Path(args.masks)
    if not mask_dir.is_dir():
        raise DataError(f"{mask_dir} is not a directory")
    from PIL import Image

    out_csv = Path(args.out) if args.out else mask_dir.parent / "morphology.csv"
    rows, plot_rows = [], []
    for p in sorted(mask_dir.iterdir()):
        if p.suffix.lower() not in (".png", ".pgm", ".ppm"):
            continue
        try:
            with Image.open(p) as im:
                arr = (np.asarray(im.convert("L"), dtype=np.float64) / 255.0 >= 0.5).astype(np.float64)
        except Exception as exc:
            raise DataError(f"unreadable mask {p}: {exc}") from exc
        f = L.morph_features(arr)
        mods = L.modulation(f)
        rows.append([str(p), f"{f.tubularity:.6f}", f"{f.compactness:.6f}",
                     f"{f.irregularity:.6f}", f"{f.scale:.6f}"]
                    + [f"{mods[n]:.6f}" for n in L.COMPONENT_NAMES])
        plot_rows.append({"tau": f.tubularity, "c": f.compactness,
                          "iota": f.irregularity, "s": f.scale})
    if not rows:
        raise DataError(f"no masks found under {mask_dir}")
    with open(out_csv, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "tau", "c", "iota", "s",
                    "alpha_core", "alpha_bnd", "alpha_str", "alpha_sca", "alpha_tex"])
        w.writerows(rows)
    from .plots import save_morph_scatter

    fig_path = out_csv.with_suffix(".png")
    save_morph_scatter(fig_path, plot_rows)
    print(f"{len(rows)} masks; wrote {out_csv} and {fig_path}")
    return 0


def _gradcheck_sstm():
    from .blocks import MixerConfig, SpectralMixerBlock

    rng = np.random.default_rng(0)
    block = SpectralMixerBlock(rng, MixerConfig(channels=4, k=4, dropout_p=0.0), dtype=np.float64)
    x = Tensor(rng.standard_normal((1, 4, 8, 8)), requires_grad=True)
    return ops.grad_check(lambda t: ops.sum_(block(t)), x, eps=1e-6, n_samples=48)


def _gradcheck_decoder():
    from .decoder import DecoderStage

    rng = np.random.default_rng(1)
    stage = DecoderStage(rng, 3, 2, 2, dtype=np.float64)
    d = Tensor(rng.standard_normal((1, 3, 4, 4)), requires_grad=True)
    skip = Tensor(rng.standard_normal((1, 2, 8, 8)))
    return ops.grad_check(lambda t: ops.sum_(stage(t, skip)[0]), d, eps=1e-6, n_samples=48)


def _gradcheck_loss():
    rng = np.random.default_rng(2)
    y = (rng.random((16, 16)) < 0.4).astype(np.float64)
    p = Tensor(rng.uniform(0.05, 0.95, (16, 16)), requires_grad=True)
    w = L.LossWeights()
    return ops.grad_check(lambda t: L.adaptive_loss(y, t, w).total, p, eps=1e-6, n_samples=64)


GRADCHECKS = {"sstm": _gradcheck_sstm, "decoder": _gradcheck_decoder, "masl": _gradcheck_loss}


def cmd_gradcheck(args):
    names = list(GRADCHECKS) if args.module == "all" else [args.module]
    worst = 0.0
    for name in names:
        err = GRADCHECKS[name]()
        worst = max(worst, err)
        status = "ok" if err < 1e-4 else "FAIL"
        print(f"{name:8s} max_rel_err={err:.3e}  {status}")
    if worst >= 1e-4:
        raise NumericError(f"gradient check failed (max_rel_err={worst:.3e})")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="specseg", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--kind", required=True, choices=["blob", "tube", "irregular", "multi"])
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--size", type=float, required=True, help="target area fraction")
    g.add_argument("--out", required=True)
    g.add_argument("--hw", type=int, default=64, help="square image size")
    g.add_argument("--wiggle", type=float, default=0.3)
    g.add_argument("--tube-width", type=int, default=13)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", required=True, help="JSON config file")
    t.add_argument("--data", required=True, help="dataset root")
    t.add_argument("--out", required=True, help="run directory")
    t.add_argument("--dump-beta", type=int, default=0, metavar="N",
                   help="dump decoder gate maps for N val samples as PGM")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--threshold", type=float, default=0.5)
    e.add_argument("--out", default=None, help="optional metrics CSV")
    e.set_defaults(fn=cmd_eval)

    a = sub.add_parser("analyze-spectrum", help="per-image energy retention report")
    a.add_argument("--data", required=True, help="dataset root or image directory")
    a.add_argument("--k", type=int, default=32)
    a.add_argument("--out", default=None, help="output CSV path")
    a.set_defaults(fn=cmd_analyze_spectrum)

    m = sub.add_parser("morph-report", help="per-mask morphology report")
    m.add_argument("--masks", required=True)
    m.add_argument("--out", default=None, help="output CSV path")
    m.set_defaults(fn=cmd_morph_report)

    c = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    c.add_argument("--module", default="all", choices=["all", "sstm", "masl", "decoder"])
    c.set_defaults(fn=cmd_gradcheck)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, NonFiniteError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except SpecsegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
