"""Command-line entry point: data generation, training, evaluation,
single-image prediction, parameter audit, and the ablation grid.

Exit codes: 0 success, 1 runtime failure, 2 usage/validation error. Config
files are flat JSON whose keys mirror the FdctConfig, LossConfig, and
TrainConfig fields; command-line flags win over file values, and the fully
resolved config is written next to every training run.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import cv2
import numpy as np

from .core import ConfigError, ShapeError, ValidRange
from .data import (
    DatasetError,
    SynthSceneSpec,
    generate_dataset,
    get_sample,
    load_dataset,
)
from .losses import LossConfig
from .metrics import MetricsReport, aggregate, compute_metrics, pixel_stats
from .model import (
    FdctConfig,
    FdctNetwork,
    complete_depth,
    count_parameters,
    parameter_breakdown,
)
from .train import (
    AblationVariant,
    TrainConfig,
    fit,
    format_ablation_table,
    load_checkpoint,
    restore_network,
    run_ablation,
)

MODEL_KEYS = {f.name for f in dataclasses.fields(FdctConfig)}
LOSS_KEYS = {f.name for f in dataclasses.fields(LossConfig)}
TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)}

DOWNSAMPLE_FLAG = {"max": "max_pool", "avg": "avg_pool", "conv": "strided_conv"}
FUSION_FLAG = {"conv": "conv_fuse", "concat": "concat"}


def _parse_size(text: str) -> tuple[int, int]:
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError as exc:
        raise ConfigError(f"size must look like HxW, got {text!r}") from exc


def _load_config_file(path) -> dict:
    values = json.loads(Path(path).read_text())
    if not isinstance(values, dict):
        raise ConfigError("config file must hold a flat JSON object")
    known = MODEL_KEYS | LOSS_KEYS | TRAIN_KEYS
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return values


def _resolve_configs(args) -> tuple[FdctConfig, LossConfig, TrainConfig]:
    file_values = _load_config_file(args.config) if getattr(args, "config", None) else {}

    model_kwargs = {k: v for k, v in file_values.items() if k in MODEL_KEYS}
    loss_kwargs = {k: v for k, v in file_values.items() if k in LOSS_KEYS}
    train_kwargs = {k: v for k, v in file_values.items() if k in TRAIN_KEYS}

    if getattr(args, "slim", False):
        model_kwargs["channels"] = 32
        model_kwargs["osa_layers"] = 4
        model_kwargs["osa_stage_channels"] = 16
    if getattr(args, "downsample", None):
        model_kwargs["downsample_mode"] = DOWNSAMPLE_FLAG[args.downsample]
    if getattr(args, "fusion", None):
        model_kwargs["depth_fusion_mode"] = FUSION_FLAG[args.fusion]
    if getattr(args, "no_fusion_branch", False):
        model_kwargs["use_fusion_branch"] = False
    if getattr(args, "no_shortcuts", False):
        model_kwargs["use_cross_shortcuts"] = False
    if getattr(args, "depth_max", None) is not None:
        model_kwargs["depth_max"] = args.depth_max

    if getattr(args, "edge_weighting", False):
        loss_kwargs["edge_weighting"] = True

    for flag, key in (
        ("lr", "initial_lr"),
        ("epochs", "epochs"),
        ("batch_size", "batch_size"),
        ("seed", "seed"),
        ("eval_every", "eval_every"),
        ("weight_decay", "weight_decay"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            train_kwargs[key] = value
    if getattr(args, "milestones", None) is not None:
        train_kwargs["milestone_epochs"] = tuple(args.milestones)
    if "milestone_epochs" in train_kwargs:
        train_kwargs["milestone_epochs"] = tuple(train_kwargs["milestone_epochs"])
    if "milestone_epochs" not in train_kwargs and "epochs" in train_kwargs:
        # keep short runs valid without forcing users to restate the schedule
        epochs = train_kwargs["epochs"]
        train_kwargs["milestone_epochs"] = tuple(
            m for m in TrainConfig().milestone_epochs if m < epochs
        )
    return FdctConfig(**model_kwargs), LossConfig(**loss_kwargs), TrainConfig(**train_kwargs)


def _write_resolved_config(out_dir, model, loss, train):
    resolved = {**model.as_dict(), **dataclasses.asdict(loss), **dataclasses.asdict(train)}
    resolved["milestone_epochs"] = list(resolved["milestone_epochs"])
    Path(out_dir, "config.json").write_text(json.dumps(resolved, indent=2))


def cmd_gen_data(args) -> int:
    h, w = _parse_size(args.size)
    spec = SynthSceneSpec(
        height=h,
        width=w,
        base_depth=args.base_depth,
        n_bumps=args.bumps,
        n_transparent_regions=args.regions,
        dropout_prob=args.dropout,
        noise_std=args.noise_std,
        offset_scale=args.offset_scale,
        seed=args.seed,
    )
    generate_dataset(args.out, args.scenes, spec)
    print(f"wrote {args.scenes} scenes to {args.out}")
    return 0


def cmd_train(args) -> int:
    model_cfg, loss_cfg, train_cfg = _resolve_configs(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_resolved_config(out_dir, model_cfg, loss_cfg, train_cfg)

    train_index = load_dataset(args.data, split="train")
    val_index = None
    if args.val_data:
        val_index = load_dataset(args.val_data, split="val")
    target_size = _parse_size(args.size) if args.size else None

    net = FdctNetwork(model_cfg, seed=train_cfg.seed)
    print(f"training {count_parameters(net):,} parameters on {len(train_index)} samples")
    fit(net, train_index, val_index, train_cfg, loss_cfg,
        out_dir=out_dir, target_size=target_size)
    print(f"checkpoints and history written to {out_dir}")
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    net = restore_network(ckpt)
    index = load_dataset(args.data, split="test")
    target_size = _parse_size(args.size) if args.size else None
    valid_range = ValidRange()

    if args.workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(args.workers) as pool:
            samples = list(pool.map(lambda i: get_sample(index, i, target_size), range(len(index))))
    else:
        samples = [get_sample(index, i, target_size) for i in range(len(index))]

    per_sample = []
    stats = []
    for sample in samples:
        if args.use_gt:
            pred = sample.gt_depth
        else:
            pred = complete_depth(net, sample.rgb, sample.raw_depth)
        stats.append(pixel_stats(pred, sample.gt_depth, sample.mask, valid_range))
        per_sample.append((sample.id, compute_metrics(pred, sample.gt_depth, sample.mask, valid_range)))

    pooled = aggregate(stats)
    Path(args.report).write_text(pooled.to_json())
    if args.per_sample:
        with open(args.per_sample, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "rmse", "rel", "mae", "delta_105", "delta_110", "delta_125", "pixel_count"])
            for sid, r in per_sample:
                writer.writerow([sid, r.rmse, r.rel, r.mae, r.delta_105, r.delta_110, r.delta_125, r.pixel_count])
    print(MetricsReport.header())
    print(pooled.row())
    print(f"report written to {args.report}")
    return 0


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    net = restore_network(ckpt)

    bgr = cv2.imread(str(args.rgb), cv2.IMREAD_COLOR)
    raw = cv2.imread(str(args.depth), cv2.IMREAD_UNCHANGED)
    if bgr is None or raw is None:
        raise IOError(f"cannot decode {args.rgb if bgr is None else args.depth}")
    if raw.ndim != 2:
        raise ShapeError("depth image must be single-channel")

    if args.size:
        h, w = _parse_size(args.size)
        bgr = cv2.resize(bgr, (w, h), interpolation=cv2.INTER_LINEAR)
        raw = cv2.resize(raw, (w, h), interpolation=cv2.INTER_NEAREST)
    h, w = raw.shape
    if h % 16 or w % 16:
        raise ShapeError(f"input size {h}x{w} not divisible by 16; pass --size HxW")

    rgb = cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB).astype(np.float32) / 255.0
    depth_m = raw.astype(np.float32) / 1000.0
    completed = complete_depth(net, rgb, depth_m)

    mm = np.clip(completed.values * 1000.0, 0, 65535).round().astype(np.uint16)
    cv2.imwrite(str(args.out), mm)
    print(f"completed depth written to {args.out}")

    if args.viz:
        panels = [_colorize(depth_m, net.config), _colorize(completed.values, net.config), bgr]
        cv2.imwrite(str(args.viz), np.concatenate(panels, axis=1))
        print(f"visualization written to {args.viz}")
    return 0


def _colorize(depth, cfg):
    hi = max(float(np.max(depth)), 1e-6)
    u8 = np.clip(depth / hi * 255.0, 0, 255).astype(np.uint8)
    return cv2.applyColorMap(u8, cv2.COLORMAP_TURBO)


def cmd_param_count(args) -> int:
    model_cfg, _, _ = _resolve_configs(args)
    net = FdctNetwork(model_cfg, seed=0)
    print(f"total parameters: {count_parameters(net):,}")
    for name, count in parameter_breakdown(net).items():
        print(f"  {name:<20} {count:>10,}")
    return 0


def cmd_ablate(args) -> int:
    model_cfg, loss_cfg, train_cfg = _resolve_configs(args)
    variants = []
    for axis in args.vary:
        if axis == "downsample":
            variants += [
                AblationVariant(f"downsample={m}", model_cfg.with_overrides(downsample_mode=m), loss_cfg)
                for m in ("max_pool", "avg_pool", "strided_conv")
            ]
        elif axis == "fusion":
            variants += [
                AblationVariant(f"fusion={m}", model_cfg.with_overrides(depth_fusion_mode=m), loss_cfg)
                for m in ("conv_fuse", "concat")
            ]
        elif axis == "branch":
            variants += [
                AblationVariant(f"fusion_branch={v}", model_cfg.with_overrides(use_fusion_branch=v), loss_cfg)
                for v in (True, False)
            ]
        elif axis == "shortcuts":
            variants += [
                AblationVariant(f"cross_shortcuts={v}", model_cfg.with_overrides(use_cross_shortcuts=v), loss_cfg)
                for v in (True, False)
            ]

    train_index = load_dataset(args.data, split="train")
    val_index = load_dataset(args.val_data or args.data, split="val")
    target_size = _parse_size(args.size) if args.size else None
    rows = run_ablation(variants, train_index, val_index, train_cfg,
                        target_size=target_size)
    table = format_ablation_table(rows)
    print(table)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        Path(args.out, "ablation.json").write_text(json.dumps(rows, indent=2))
        Path(args.out, "ablation.txt").write_text(table + "\n")
    return 0


def _add_model_flags(p):
    p.add_argument("--config", help="flat JSON config file (flags win)")
    p.add_argument("--slim", action="store_true", help="slim preset (C=32, 4 OSA layers)")
    p.add_argument("--downsample", choices=sorted(DOWNSAMPLE_FLAG), help="downsampling variant")
    p.add_argument("--fusion", choices=sorted(FUSION_FLAG), help="raw-depth fusion variant")
    p.add_argument("--no-fusion-branch", action="store_true", help="disable the fusion branch")
    p.add_argument("--no-shortcuts", action="store_true", help="disable cross-layer shortcuts")
    p.add_argument("--depth-max", type=float, default=None, help="depth normalization divisor (m)")


def _add_train_flags(p):
    p.add_argument("--lr", type=float, default=None, help="initial learning rate")
    p.add_argument("--epochs", type=int, default=None, help="number of epochs")
    p.add_argument("--batch-size", type=int, default=None, help="batch size")
    p.add_argument("--milestones", type=int, nargs="*", default=None,
                   help="epochs at which the rate is multiplied by the factor")
    p.add_argument("--weight-decay", type=float, default=None, help="decoupled weight decay")
    p.add_argument("--seed", type=int, default=None, help="run seed")
    p.add_argument("--eval-every", type=int, default=None, help="validation period (epochs)")
    p.add_argument("--edge-weighting", action="store_true",
                   help="down-weight blurred depth-gradient pixels in the Huber term")
    p.add_argument("--size", default=None, help="resize samples to HxW")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fdct", description="Depth completion for transparent objects."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--scenes", type=int, required=True, help="number of scenes")
    p.add_argument("--size", default="96x128", help="scene size HxW (divisible by 16)")
    p.add_argument("--seed", type=int, default=0, help="base seed; scene i uses seed+i")
    p.add_argument("--dropout", type=float, default=0.5, help="missing-pixel probability in mask")
    p.add_argument("--noise-std", type=float, default=0.01, help="raw-depth noise std (m)")
    p.add_argument("--offset-scale", type=float, default=0.05, help="per-region offset bound (m)")
    p.add_argument("--bumps", type=int, default=4, help="smooth bumps in the ground truth")
    p.add_argument("--regions", type=int, default=3, help="transparent regions per scene")
    p.add_argument("--base-depth", type=float, default=0.9, help="background plane depth (m)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a network")
    p.add_argument("--data", required=True, help="training dataset root")
    p.add_argument("--out", required=True, help="output directory for checkpoints/logs")
    p.add_argument("--val-data", default=None, help="validation dataset root")
    _add_model_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True, help="pooled metrics JSON output")
    p.add_argument("--per-sample", default=None, help="optional per-sample CSV output")
    p.add_argument("--size", default=None, help="resize samples to HxW")
    p.add_argument("--workers", type=int, default=1, help="decode threads")
    p.add_argument("--use-gt", action="store_true",
                   help="score ground truth against itself (pipeline debug)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="complete one RGB-D image pair")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--rgb", required=True, help="8-bit color PNG")
    p.add_argument("--depth", required=True, help="16-bit millimeter depth PNG")
    p.add_argument("--out", required=True, help="output 16-bit millimeter depth PNG")
    p.add_argument("--viz", default=None, help="optional side-by-side visualization PNG")
    p.add_argument("--size", default=None, help="resize inputs to HxW before inference")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("param-count", help="print the parameter count and per-block breakdown")
    _add_model_flags(p)
    p.set_defaults(func=cmd_param_count)

    p = sub.add_parser("ablate", help="train and compare configuration variants")
    p.add_argument("--data", required=True)
    p.add_argument("--val-data", default=None)
    p.add_argument("--out", default=None, help="directory for ablation.json/.txt")
    p.add_argument("--vary", nargs="*", default=[],
                   choices=["downsample", "fusion", "branch", "shortcuts"],
                   help="axes to vary, one variant per setting")
    _add_model_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, DatasetError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
