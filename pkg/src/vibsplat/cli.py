"""Command-line interface: synth, train, render, eval, separate.

Configuration is file-first (TOML, ``key = value`` with nested tables) with
``--set dotted.key=value`` overrides taking precedence.  Every command
writes a machine-readable ``run_manifest.json`` next to its outputs.

Exit codes: 0 ok, 2 invalid scene spec, 3 dataset/io failure, 4 evaluation
impossible (empty split), 5 numeric failure during training.
"""

import argparse
import dataclasses
import hashlib
import json
import os
import subprocess
import sys

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import ioutils
from .datasets import export_split, load_dataset
from .errors import (BadPose, ChecksumMismatch, ManifestMissing, NonFiniteLoss,
                     SpecInvalid, TimestampDisorder, VersionMismatch)
from .cameras import CameraExtrinsics, CameraFrame, CameraIntrinsics
from .losses import format_metric_report, psnr, ssim_metric
from .points import classify_static
from .rasterizer import colorize_velocity, render
from .synthetic import SyntheticSpec, preset, write_synthetic
from .training import (TrainConfig, checkpoint_load, checkpoint_save,
                       init_state, make_options, train)

_IO_ERRORS = (ManifestMissing, BadPose, TimestampDisorder, ChecksumMismatch,
              VersionMismatch, OSError)


def _git_hash():
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True,
                             text=True, timeout=5)
        return out.stdout.strip() or "unknown"
    except Exception:
        return "unknown"


def _parse_literal(text):
    for parser in (int, float):
        try:
            return parser(text)
        except ValueError:
            pass
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    return text


def apply_overrides(config, overrides):
    for item in overrides or []:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        node = config
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = _parse_literal(value)
    return config


def load_toml(path):
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def write_run_manifest(out_dir, args_ns, config_dict=None):
    digest = None
    if config_dict is not None:
        digest = hashlib.sha256(
            json.dumps(config_dict, sort_keys=True, default=str).encode()).hexdigest()
    manifest = {
        "argv": sys.argv[1:],
        "args": {k: v for k, v in vars(args_ns).items() if k != "func"},
        "seed": getattr(args_ns, "seed", None),
        "git_hash": _git_hash(),
        "config_digest": digest,
    }
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "run_manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True, default=str)


# -- subcommands -----------------------------------------------------------------


def cmd_synth(args):
    if args.spec:
        spec = SyntheticSpec.from_dict(apply_overrides(load_toml(args.spec), args.set))
    else:
        spec = preset(args.preset)
        if args.set:
            spec = SyntheticSpec.from_dict(apply_overrides(spec.to_dict(), args.set))
    rng = np.random.default_rng(args.seed)
    write_synthetic(spec, args.out, rng)
    write_run_manifest(args.out, args, spec.to_dict())
    print(f"wrote synthetic scene '{spec.name}' ({spec.frame_count} frames) to {args.out}")
    return 0


def build_train_config(args):
    config = load_toml(args.config) if args.config else {}
    apply_overrides(config, args.set)
    if args.seed is not None:
        config["seed"] = args.seed
    if args.iters is not None:
        config["total_iters"] = args.iters
    if args.eta is not None:
        config["eta"] = args.eta
    if args.workers is not None:
        config["workers"] = args.workers
    return TrainConfig.from_dict(config), config


def cmd_train(args):
    cfg, config_dict = build_train_config(args)
    dataset = load_dataset(args.dataset)
    os.makedirs(args.out, exist_ok=True)
    write_run_manifest(args.out, args, config_dict)

    if args.resume:
        state = checkpoint_load(args.resume)
    else:
        state = init_state(dataset, cfg)
    state, _ = train(
        dataset, state.config, state=state,
        trace_path=os.path.join(args.out, "loss_trace.csv"),
        control_log_path=os.path.join(args.out, "control_log.txt"),
        checkpoint_path=os.path.join(args.out, "checkpoint.vsck"),
        progress=args.progress)
    print(f"trained to iteration {state.iteration}; "
          f"{len(state.points)} points -> {os.path.join(args.out, 'checkpoint.vsck')}")
    return 0


def _frame_from_args(args, state, dataset=None):
    if dataset is not None and args.frame is not None:
        frame = dataset.frames[args.frame]
        intr, ext = frame.intrinsics, frame.extrinsics
        t = frame.timestamp
    else:
        raise ManifestMissing("render needs --dataset with --frame to source a camera")
    if args.time is not None:
        t = args.time
    if args.zoom != 1.0:
        intr = CameraIntrinsics(intr.fx * args.zoom, intr.fy * args.zoom,
                                intr.cx, intr.cy, intr.width, intr.height)
    if any(args.shift):
        delta = np.asarray(args.shift)
        center = ext.camera_center + ext.rotation.T @ delta
        ext = CameraExtrinsics(ext.rotation, -ext.rotation @ center)
    return CameraFrame(intr, ext, t, frame_index=getattr(frame, "frame_index", 0)), t


def cmd_render(args):
    state = checkpoint_load(args.checkpoint)
    dataset = load_dataset(args.dataset) if args.dataset else None
    frame, t = _frame_from_args(args, state, dataset)
    opts = make_options(state.config)
    out = render(state.points, state.cube, frame, state.scene_cfg, opts=opts,
                 t=t, mode=state.config.dynamics_mode)

    os.makedirs(args.out, exist_ok=True)
    channels = args.channels.split(",")
    stem = os.path.join(args.out, f"render_{args.frame if args.frame is not None else 0:04d}")
    if "color" in channels:
        ioutils.write_png(stem + "_color.png", out.color)
        if args.ppm:
            ioutils.write_ppm(stem + "_color.ppm", out.color)
    if "depth" in channels:
        ioutils.write_channels(stem + "_depth.pvgc", out.depth)
        vis = out.depth / max(out.depth.max(), 1e-9)
        ioutils.write_png(stem + "_depth.png", np.repeat(vis[:, :, None], 3, axis=2))
    if "opacity" in channels:
        ioutils.write_channels(stem + "_opacity.pvgc", out.opacity)
        ioutils.write_png(stem + "_opacity.png", np.repeat(out.opacity[:, :, None], 3, axis=2))
    if "velocity" in channels:
        ioutils.write_channels(stem + "_velocity.pvgc", out.velocity)
        ioutils.write_png(stem + "_velocity.png",
                          colorize_velocity(out, frame, max_speed=args.flow_scale))
    write_run_manifest(args.out, args)
    print(f"rendered t={t:.4f} -> {stem}_*.png")
    return 0


def cmd_eval(args):
    state = checkpoint_load(args.checkpoint)
    dataset = load_dataset(args.dataset)
    train_idx, test_idx = dataset.split_every_fourth()
    if args.split == "every-4th":
        indices = test_idx
    elif args.split == "train":
        indices = train_idx
    else:
        indices = np.arange(len(dataset.frames))
    if len(indices) == 0:
        print("error: evaluation split is empty", file=sys.stderr)
        return 4

    opts = make_options(state.config)
    records = []
    for i in indices:
        frame = dataset.frames[i]
        out = render(state.points, state.cube, frame, state.scene_cfg, opts=opts,
                     mode=state.config.dynamics_mode)
        records.append((f"frame_{i:04d}", psnr(out.color, frame.image),
                        ssim_metric(out.color, frame.image)))
    report = format_metric_report(records)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "metrics.txt"), "w") as fh:
        fh.write(report)
    write_run_manifest(args.out, args)
    print(report, end="")
    return 0


def cmd_separate(args):
    state = checkpoint_load(args.checkpoint)
    os.makedirs(args.out, exist_ok=True)
    static_path = os.path.join(args.out, "static.ply")
    dynamic_path = os.path.join(args.out, "dynamic.ply")
    static_idx, dynamic_idx = export_split(state.points, state.scene_cfg,
                                           args.threshold, static_path, dynamic_path)

    if args.dataset and args.frames:
        dataset = load_dataset(args.dataset)
        opts = make_options(state.config)
        static_points = state.points.select(static_idx)
        for i in (int(v) for v in args.frames.split(",")):
            frame = dataset.frames[i]
            full = render(state.points, state.cube, frame, state.scene_cfg,
                          opts=opts, mode=state.config.dynamics_mode)
            stat = render(static_points, state.cube, frame, state.scene_cfg,
                          opts=opts, mode=state.config.dynamics_mode)
            ioutils.write_png(os.path.join(args.out, f"full_{i:04d}.png"), full.color)
            ioutils.write_png(os.path.join(args.out, f"static_{i:04d}.png"), stat.color)
    write_run_manifest(args.out, args)
    print(f"separated {len(static_idx)} static / {len(dynamic_idx)} dynamic points "
          f"(threshold {args.threshold})")
    return 0


# -- argument parsing -------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="vibsplat",
                                description="Dynamic-scene reconstruction with "
                                            "time-vibrating Gaussian splats")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic dataset with ground truth")
    sp.add_argument("--preset", default="mover-1")
    sp.add_argument("--spec", help="TOML scene description (overrides --preset)")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--set", action="append", metavar="KEY=VALUE")
    sp.set_defaults(func=cmd_synth)

    tp = sub.add_parser("train", help="optimize a scene from a dataset")
    tp.add_argument("--dataset", required=True)
    tp.add_argument("--out", required=True)
    tp.add_argument("--config", help="TOML training configuration")
    tp.add_argument("--set", action="append", metavar="KEY=VALUE",
                    help="dotted config override, e.g. control.grad_threshold=2e-4")
    tp.add_argument("--seed", type=int, default=None)
    tp.add_argument("--iters", type=int, default=None)
    tp.add_argument("--eta", type=float, default=None)
    tp.add_argument("--workers", type=int, default=None)
    tp.add_argument("--resume", help="checkpoint to continue from")
    tp.add_argument("--progress", type=int, default=0)
    tp.set_defaults(func=cmd_train)

    rp = sub.add_parser("render", help="render a checkpoint at a camera and time")
    rp.add_argument("--checkpoint", required=True)
    rp.add_argument("--dataset", help="dataset supplying the camera")
    rp.add_argument("--frame", type=int, default=None)
    rp.add_argument("--time", type=float, default=None,
                    help="normalized scene time (defaults to the frame's)")
    rp.add_argument("--zoom", type=float, default=1.0)
    rp.add_argument("--shift", type=float, nargs=3, default=(0.0, 0.0, 0.0),
                    metavar=("DX", "DY", "DZ"), help="camera-space shift, meters")
    rp.add_argument("--channels", default="color",
                    help="comma list of color,depth,opacity,velocity")
    rp.add_argument("--flow-scale", type=float, default=1.0)
    rp.add_argument("--ppm", action="store_true", help="also write ASCII PPM")
    rp.add_argument("--out", required=True)
    rp.set_defaults(func=cmd_render)

    ep = sub.add_parser("eval", help="PSNR/SSIM report over a dataset split")
    ep.add_argument("--checkpoint", required=True)
    ep.add_argument("--dataset", required=True)
    ep.add_argument("--split", choices=("every-4th", "train", "all"), default="every-4th")
    ep.add_argument("--out", required=True)
    ep.set_defaults(func=cmd_eval)

    xp = sub.add_parser("separate", help="export static/dynamic point sets")
    xp.add_argument("--checkpoint", required=True)
    xp.add_argument("--threshold", type=float, default=1.0)
    xp.add_argument("--dataset", help="for comparison renders")
    xp.add_argument("--frames", help="comma list of frame indices to render")
    xp.add_argument("--out", required=True)
    xp.set_defaults(func=cmd_separate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SpecInvalid as exc:
        print(f"error: invalid scene spec: {exc}", file=sys.stderr)
        return 2
    except _IO_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NonFiniteLoss as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
