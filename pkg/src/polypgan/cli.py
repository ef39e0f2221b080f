"""Command-line interface: train, eval, predict, ablate, synth.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
Every command is deterministic given the same config and seed.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .blocks import count_parameters
from .config import (
    ConfigError,
    resolve_config,
    synthetic_spec_from,
    to_train_config,
)
from .data import DataError, generate_synthetic, load_dataset, write_dataset
from .losses import LOSS_COMBOS
from .metrics import METRIC_NAMES, binarize, evaluate_dataset
from .training import (
    CheckpointError,
    load_checkpoint,
    make_predict_fn,
    models_from_checkpoint,
    train,
)

# Table-3-style module toggles: name -> config overrides.
MODULE_VARIANTS: tuple[tuple[str, dict[str, object]], ...] = (
    ("baseline", {}),
    ("no_rese", {"model.use_rese": False}),
    ("no_convcrf", {"model.use_convcrf": False}),
    ("rese_no_se", {"model.use_se": False}),
    ("no_convcrf_no_rese", {"model.use_convcrf": False, "model.use_rese": False}),
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; the contract wants 1.
    def error(self, message):
        raise UsageError(message)


def _add_common(sub: argparse.ArgumentParser, out_default: str) -> None:
    sub.add_argument("--config", default=None, help="YAML/JSON config file")
    sub.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config key (repeatable)",
    )
    sub.add_argument("--out", default=out_default, help="output directory")
    sub.add_argument("--seed", type=int, default=None, help="override train.seed")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="polypgan", description=__doc__)
    commands = parser.add_subparsers(dest="command", required=True)

    p_train = commands.add_parser("train", help="train generator and discriminator")
    _add_common(p_train, "runs/train")
    p_train.set_defaults(func=run_train)

    p_eval = commands.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p_eval.add_argument("checkpoint", help="checkpoint file")
    p_eval.add_argument("data_root", help="dataset root with images/ and masks/")
    _add_common(p_eval, "runs/eval")
    p_eval.set_defaults(func=run_eval)

    p_pred = commands.add_parser("predict", help="segment a single image")
    p_pred.add_argument("checkpoint", help="checkpoint file")
    p_pred.add_argument("image", help="input image file")
    _add_common(p_pred, "runs/predict")
    p_pred.add_argument(
        "--heatmap",
        action="store_true",
        help="also write a bottleneck mean-activation heatmap",
    )
    p_pred.set_defaults(func=run_predict)

    p_abl = commands.add_parser(
        "ablate", help="sweep loss combinations and module toggles"
    )
    _add_common(p_abl, "runs/ablate")
    p_abl.set_defaults(func=run_ablate)

    p_synth = commands.add_parser("synth", help="write a synthetic dataset")
    _add_common(p_synth, "data/synthetic")
    p_synth.set_defaults(func=run_synth)

    return parser


def _training_data(cfg: dict):
    root = cfg["data.root"]
    size = cfg["model.input_size"]
    if root:
        return load_dataset(root, size=size)
    return generate_synthetic(synthetic_spec_from(cfg), size=size)


def run_train(args) -> int:
    cfg = resolve_config(args.config, args.overrides, args.seed)
    out = Path(args.out)
    tcfg = to_train_config(cfg, checkpoint_dir=str(out / "checkpoints"))
    dataset = _training_data(cfg)
    state, log = train(tcfg, dataset)
    log.to_csv(out / "train_log.csv", header_comment="config: " + json.dumps(cfg, sort_keys=True))
    last = log.records[-1] if log.records else None
    if last is not None:
        print(
            f"trained {last.step} steps: seg_loss {last.seg_loss:.4f}, "
            f"d_loss {last.d_loss:.4f}"
        )
    print(f"checkpoint: {out / 'checkpoints' / 'checkpoint_final.pt'}")
    print(f"log: {out / 'train_log.csv'}")
    return 0


def run_eval(args) -> int:
    cfg = resolve_config(args.config, args.overrides, args.seed)
    state = load_checkpoint(args.checkpoint)
    generator, _, tcfg = models_from_checkpoint(state)
    samples = load_dataset(args.data_root, size=tcfg.model.input_size)
    predict = make_predict_fn(generator)
    out = Path(args.out)
    masks_dir = out / "masks"
    masks_dir.mkdir(parents=True, exist_ok=True)
    threshold = cfg["data.threshold"]

    probs = [predict(s.image) for s in samples]
    for sample, prob in zip(samples, probs):
        binary = binarize(prob, threshold)
        Image.fromarray((binary[:, :, 0] * 255).astype(np.uint8), mode="L").save(
            masks_dir / f"{sample.id}.png"
        )
    queue = iter(probs)
    report = evaluate_dataset(
        lambda image: next(queue),
        samples,
        threshold=threshold,
        csv_path=out / "metrics.csv",
    )
    for name in METRIC_NAMES:
        print(f"{name}: {report.as_dict()[name]:.4f}")
    print(f"metrics: {out / 'metrics.csv'}")
    print(f"masks: {masks_dir}")
    return 0


def _load_image(path: str | Path, size: int) -> np.ndarray:
    try:
        with Image.open(path) as im:
            image = im.convert("RGB").resize((size, size), Image.BILINEAR)
    except (OSError, SyntaxError) as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc
    return np.asarray(image, dtype=np.float32) / 255.0


def _save_gray(values: np.ndarray, path: Path) -> None:
    """Write a [0, 1] float map as an 8-bit PNG with round(255 * v) pixels."""
    Image.fromarray(np.round(255.0 * values).astype(np.uint8), mode="L").save(path)


def run_predict(args) -> int:
    cfg = resolve_config(args.config, args.overrides, args.seed)
    state = load_checkpoint(args.checkpoint)
    generator, _, tcfg = models_from_checkpoint(state)
    size = tcfg.model.input_size
    image = _load_image(args.image, size)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.image).stem

    generator.eval()
    with torch.no_grad():
        x = torch.from_numpy(image.transpose(2, 0, 1)[None].copy())
        prob_t, bottleneck = generator.forward_with_bottleneck(x)
    prob = prob_t[0, 0].numpy()
    _save_gray(prob, out / f"{stem}_prob.png")
    binary = (prob >= cfg["data.threshold"]).astype(np.float32)
    _save_gray(binary, out / f"{stem}_mask.png")
    written = [out / f"{stem}_prob.png", out / f"{stem}_mask.png"]

    if args.heatmap:
        heat = bottleneck.mean(dim=1, keepdim=True)
        heat = torch.nn.functional.interpolate(
            heat, size=(size, size), mode="bilinear", align_corners=False
        )[0, 0].numpy()
        lo, hi = float(heat.min()), float(heat.max())
        heat = (heat - lo) / (hi - lo) if hi > lo else np.zeros_like(heat)
        _save_gray(heat, out / f"{stem}_heatmap.png")
        written.append(out / f"{stem}_heatmap.png")

    for path in written:
        print(f"wrote {path}")
    return 0


def _sub_run(cfg: dict, out: Path, tag: str) -> dict:
    """Train on the configured data and evaluate on it; returns metric row."""
    tcfg = to_train_config(cfg, checkpoint_dir=None)
    dataset = _training_data(cfg)
    state, log = train(tcfg, dataset)
    generator, discriminator, _ = models_from_checkpoint(state)
    report = evaluate_dataset(
        make_predict_fn(generator), dataset, threshold=cfg["data.threshold"]
    )
    log.to_csv(out / "logs" / f"{tag}.csv")
    row = {name: report.as_dict()[name] for name in METRIC_NAMES}
    row["gen_params"] = count_parameters(generator)
    row["disc_params"] = count_parameters(discriminator)
    return row


def _write_rows(path: Path, key: str, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w") as fh:
        fh.write(",".join([key] + columns) + "\n")
        for row in rows:
            cells = [str(row[key])]
            for col in columns:
                value = row.get(col, "")
                cells.append(f"{value:.6f}" if isinstance(value, float) else str(value))
            fh.write(",".join(cells) + "\n")


def run_ablate(args) -> int:
    base = resolve_config(args.config, args.overrides, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    failures = 0

    loss_rows = []
    for combo in LOSS_COMBOS:
        cfg = dict(base)
        cfg["loss.combo"] = combo
        row = {"combo": combo, "status": "ok"}
        try:
            row.update(_sub_run(cfg, out, f"loss_{combo}"))
        except Exception as exc:
            failures += 1
            row["status"] = f"failed: {exc}"
        loss_rows.append(row)
        print(f"loss {combo}: {row['status']}")
    loss_cols = ["status"] + list(METRIC_NAMES)
    _write_rows(out / "loss_ablation.csv", "combo", loss_cols, loss_rows)

    module_rows = []
    for name, toggles in MODULE_VARIANTS:
        cfg = dict(base)
        cfg.update(toggles)
        row = {"variant": name, "status": "ok"}
        try:
            row.update(_sub_run(cfg, out, f"module_{name}"))
        except Exception as exc:
            failures += 1
            row["status"] = f"failed: {exc}"
        module_rows.append(row)
        print(f"module {name}: {row['status']}")
    module_cols = ["status", "gen_params", "disc_params"] + list(METRIC_NAMES)
    _write_rows(out / "module_ablation.csv", "variant", module_cols, module_rows)

    print(f"loss table: {out / 'loss_ablation.csv'}")
    print(f"module table: {out / 'module_ablation.csv'}")
    if failures:
        print(f"{failures} sub-run(s) failed", file=sys.stderr)
        return 2
    return 0


def run_synth(args) -> int:
    cfg = resolve_config(args.config, args.overrides, args.seed)
    try:
        spec = synthetic_spec_from(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    samples = generate_synthetic(spec, size=cfg["model.input_size"])
    write_dataset(samples, args.out)
    print(f"wrote {len(samples)} image/mask pairs to {args.out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, CheckpointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
