"""Command-line interface: train-lifter, infer, eval, synth.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
failure. Options can come from a JSON config file (--config); explicit
flags win over config values. All randomness flows from --seed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import fileio
from .fileio import DataFormatError
from .geometry import error_2d, mpjpe, procrustes_error, image_to_crop
from .inference import (
    GENERATOR_MEAN_SHIFT,
    GENERATOR_NMS,
    PRIOR_ORTHOGRAPHIC,
    PRIOR_PERSPECTIVE,
    InferenceConfig,
    infer,
)
from .lifter import (
    INPUT_FULL,
    INPUT_NORMALIZED,
    LifterTrainConfig,
    ModelFormatError,
    TrainingDivergedError,
    load_model,
    save_model,
    train_lifter,
)
from .synth import (
    CorruptionSpec,
    SyntheticFrame,
    default_camera,
    default_skeleton,
    generate_frames,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _apply_config_file(args, parser):
    """Fill unset options from the JSON config file; unknown keys rejected."""
    if not args.config:
        return args
    try:
        with open(args.config) as f:
            config = json.load(f)
    except OSError as e:
        raise UsageError(f"cannot read config file: {e}")
    except json.JSONDecodeError as e:
        raise UsageError(f"config file is not valid JSON: {e}")
    if not isinstance(config, dict):
        raise UsageError("config file must hold a JSON object")
    defaults = vars(parser.parse_args([args.command]))
    for key, value in config.items():
        dest = key.replace("-", "_")
        if dest not in defaults or dest in ("command", "config"):
            raise UsageError(f"unknown config key {key!r}")
        # a flag still at its parser default is overridable by the config
        if getattr(args, dest) == defaults[dest]:
            setattr(args, dest, value)
    return args


def build_parser() -> _Parser:
    parser = _Parser(prog="poselift")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON config file; flags override it")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train-lifter", parents=[], help="fit the 2D-to-3D lifter")
    add_common(p)
    p.add_argument("--poses-2d", required=False)
    p.add_argument("--poses-3d", required=False)
    p.add_argument("--out", required=False, help="output model file")
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--noise-std", type=float, default=0.1)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--hidden-sizes", default="256,256")
    p.add_argument(
        "--input-mode",
        choices=[INPUT_FULL, INPUT_NORMALIZED],
        default=INPUT_FULL,
    )

    p = sub.add_parser("infer", help="run the full pipeline on heat-map volumes")
    add_common(p)
    p.add_argument("--manifest", required=False)
    p.add_argument("--model", required=False)
    p.add_argument("--camera", help="camera file (perspective prior only)")
    p.add_argument("--out-dir", required=False)
    p.add_argument("--prior-strength", type=float, default=1.0)
    p.add_argument("--bandwidth", type=float, default=3.0)
    p.add_argument("--num-candidates", type=int, default=128)
    p.add_argument(
        "--prior",
        choices=[PRIOR_PERSPECTIVE, PRIOR_ORTHOGRAPHIC],
        default=PRIOR_PERSPECTIVE,
    )
    p.add_argument(
        "--generator",
        choices=[GENERATOR_MEAN_SHIFT, GENERATOR_NMS],
        default=GENERATOR_MEAN_SHIFT,
    )
    p.add_argument("--nms-upscale", type=int, default=8)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    add_common(p)
    p.add_argument("--pred-3d")
    p.add_argument("--gt-3d")
    p.add_argument("--pred-2d")
    p.add_argument("--gt-2d")
    p.add_argument("--manifest", help="map 2D poses into crop coordinates")
    p.add_argument("--root-index", type=int, default=0)
    p.add_argument("--out", required=False, help="output report file")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    add_common(p)
    p.add_argument("--out-dir", required=False)
    p.add_argument("--frames", type=int, default=100)
    p.add_argument("--image-size", type=int, default=1000)
    p.add_argument("--grid-size", type=int, default=32)
    p.add_argument("--depth-min", type=float, default=3000.0)
    p.add_argument("--depth-max", type=float, default=6000.0)
    p.add_argument("--distractor-prob", type=float, default=0.0)
    p.add_argument("--distractor-strength", type=float, default=1.1)
    p.add_argument("--noise-floor", type=float, default=0.0)
    p.add_argument("--overwrite", action="store_true")
    return parser


def _require(args, *names):
    for name in names:
        if getattr(args, name.replace("-", "_")) is None:
            raise UsageError(f"--{name} is required")


def cmd_train_lifter(args) -> int:
    _require(args, "poses-2d", "poses-3d", "out")
    frames_2d, poses_2d = fileio.load_poses(args.poses_2d, dim=2)
    frames_3d, poses_3d = fileio.load_poses(args.poses_3d, dim=3)
    if frames_2d != frames_3d:
        raise DataFormatError("2D and 3D pose files do not align by frame index")
    hidden = tuple(int(s) for s in str(args.hidden_sizes).split(",") if s)
    config = LifterTrainConfig(
        learning_rate=args.learning_rate,
        momentum=args.momentum,
        epochs=args.epochs,
        noise_std=args.noise_std,
        batch_size=args.batch_size,
        hidden_sizes=hidden,
        input_mode=args.input_mode,
        seed=args.seed,
    )
    model, final_loss = train_lifter(poses_2d, poses_3d, config)
    out = Path(args.out)
    save_model(model, out)
    summary = {
        "num_joints": model.num_joints,
        "layer_sizes": list(model.layer_sizes),
        "input_mode": model.input_mode,
        "mean_offset": model.mean_offset.tolist(),
        "final_loss": final_loss,
        "train_frames": len(poses_2d),
        "config": {
            "learning_rate": config.learning_rate,
            "momentum": config.momentum,
            "epochs": config.epochs,
            "noise_std": config.noise_std,
            "batch_size": config.batch_size,
            "seed": config.seed,
        },
    }
    fileio.atomic_write_text(
        out.with_suffix(out.suffix + ".txt"),
        json.dumps(summary, indent=2) + "\n",
    )
    print(f"trained on {len(poses_2d)} frames, final loss {final_loss:.6f}")
    return EXIT_OK


def cmd_infer(args) -> int:
    _require(args, "manifest", "model", "out-dir")
    config = InferenceConfig(
        prior_strength=args.prior_strength,
        bandwidth=args.bandwidth,
        num_candidates=args.num_candidates,
        prior_mode=args.prior,
        generator=args.generator,
        nms_upscale=args.nms_upscale,
    )
    if config.prior_mode == PRIOR_PERSPECTIVE and not args.camera:
        raise UsageError("perspective prior requires --camera")
    camera = fileio.load_camera(args.camera) if args.camera else None
    model = load_model(args.model)
    entries = fileio.load_manifest(args.manifest)
    manifest_dir = Path(args.manifest).parent
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    frames, poses_2d, poses_3d, poses_3d_abs, selections = [], [], [], [], []
    failures = 0
    for frame, rel in entries:
        try:
            volume = fileio.load_volume(manifest_dir / rel)
            result = infer(volume, model, config, camera=camera)
        except (DataFormatError, ValueError, OSError) as e:
            print(f"frame {frame}: failed: {e}", file=sys.stderr)
            failures += 1
            selections.append(
                {"frame": frame, "failed": True, "error": str(e)}
            )
            continue
        frames.append(frame)
        poses_2d.append(result.pose_2d)
        poses_3d.append(result.pose_3d)
        poses_3d_abs.append(result.pose_3d_absolute)
        selections.append(
            {
                "frame": frame,
                "chosen": result.chosen_index,
                "energies": [
                    c.energy if np.isfinite(c.energy) else None
                    for c in result.candidates
                ],
                "scores": [c.score for c in result.candidates],
            }
        )
    fileio.save_poses(out_dir / "poses_2d.jsonl", poses_2d, frames)
    fileio.save_poses(out_dir / "poses_3d.jsonl", poses_3d, frames)
    fileio.save_poses(out_dir / "poses_3d_absolute.jsonl", poses_3d_abs, frames)
    fileio.atomic_write_text(
        out_dir / "selection.jsonl",
        "\n".join(json.dumps(s) for s in selections) + "\n",
    )
    print(f"processed {len(frames)} frames, {failures} failed")
    return EXIT_DATA if failures else EXIT_OK


def _load_boxes(manifest_path):
    entries = fileio.load_manifest(manifest_path)
    manifest_dir = Path(manifest_path).parent
    return {
        frame: fileio.load_volume(manifest_dir / rel).box
        for frame, rel in entries
    }


def cmd_eval(args) -> int:
    have_3d = args.pred_3d and args.gt_3d
    have_2d = args.pred_2d and args.gt_2d
    if not have_3d and not have_2d:
        raise UsageError("need --pred-3d/--gt-3d and/or --pred-2d/--gt-2d")
    report: dict = {}
    if have_3d:
        frames_p, pred = fileio.load_poses(args.pred_3d, dim=3)
        frames_g, gt = fileio.load_poses(args.gt_3d, dim=3)
        if frames_p != frames_g:
            raise DataFormatError("3D prediction and ground-truth frames differ")
        vals_m = [mpjpe(g, p, args.root_index) for g, p in zip(gt, pred)]
        vals_s = [procrustes_error(g, p) for g, p in zip(gt, pred)]
        report["mpjpe"] = {"mean": float(np.mean(vals_m)), "per_frame": vals_m}
        report["similarity"] = {
            "mean": float(np.mean(vals_s)),
            "per_frame": vals_s,
        }
    if have_2d:
        frames_p, pred = fileio.load_poses(args.pred_2d, dim=2)
        frames_g, gt = fileio.load_poses(args.gt_2d, dim=2)
        if frames_p != frames_g:
            raise DataFormatError("2D prediction and ground-truth frames differ")
        if args.manifest:
            boxes = _load_boxes(args.manifest)
            missing = [f for f in frames_p if f not in boxes]
            if missing:
                raise DataFormatError(f"manifest lacks frames {missing[:5]}")
            pred = [image_to_crop(p, boxes[f]) for f, p in zip(frames_p, pred)]
            gt = [image_to_crop(g, boxes[f]) for f, g in zip(frames_g, gt)]
        vals = [error_2d(g, p) for g, p in zip(gt, pred)]
        report["error_2d"] = {"mean": float(np.mean(vals)), "per_frame": vals}
    text = json.dumps(report, indent=2) + "\n"
    if args.out:
        fileio.atomic_write_text(args.out, text)
    for key in ("mpjpe", "similarity", "error_2d"):
        if key in report:
            print(f"{key}: {report[key]['mean']:.4f}")
    return EXIT_OK


def cmd_synth(args) -> int:
    _require(args, "out-dir")
    if args.frames < 1:
        raise UsageError("--frames must be >= 1")
    out_dir = Path(args.out_dir)
    if out_dir.exists() and any(out_dir.iterdir()) and not args.overwrite:
        raise UsageError(f"{out_dir} exists and is not empty (use --overwrite)")
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "volumes").mkdir(exist_ok=True)

    skeleton = default_skeleton()
    camera = default_camera(args.image_size)
    corruption = CorruptionSpec(
        distractor_prob=args.distractor_prob,
        strength=args.distractor_strength,
        noise_floor=args.noise_floor,
    )
    frames = generate_frames(
        skeleton,
        camera,
        args.frames,
        corruption,
        args.seed,
        depth_range=(args.depth_min, args.depth_max),
        grid_size=args.grid_size,
    )
    entries = []
    for i, frame in enumerate(frames):
        rel = f"volumes/frame_{i:06d}.hmv"
        fileio.save_volume(out_dir / rel, frame.volume)
        entries.append((i, rel))
    fileio.save_manifest(out_dir / "manifest.txt", entries)
    fileio.save_poses(out_dir / "poses_2d.jsonl", [f.pose_2d for f in frames])
    fileio.save_poses(out_dir / "poses_3d.jsonl", [f.pose_3d for f in frames])
    fileio.save_camera(out_dir / "camera.json", camera)
    provenance = {
        "seed": args.seed,
        "frames": args.frames,
        "image_size": args.image_size,
        "grid_size": args.grid_size,
        "depth_range": [args.depth_min, args.depth_max],
        "corruption": {
            "distractor_prob": corruption.distractor_prob,
            "offset_min": corruption.offset_min,
            "offset_max": corruption.offset_max,
            "strength": corruption.strength,
            "noise_floor": corruption.noise_floor,
        },
    }
    fileio.atomic_write_text(
        out_dir / "provenance.json", json.dumps(provenance, indent=2) + "\n"
    )
    print(f"wrote {len(frames)} frames to {out_dir}")
    return EXIT_OK


COMMANDS = {
    "train-lifter": cmd_train_lifter,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args = _apply_config_file(args, parser)
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, ModelFormatError, FileNotFoundError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDivergedError, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
