"""Command line: synth, train, infer, eval.

Exit codes: 0 ok, 2 usage or validation error, 3 training failure,
4 checkpoint/model mismatch.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from collections import Counter
from dataclasses import asdict

import numpy as np
import torch

from .core import SpotError
from .data.manifest import load_manifest
from .data.synthetic import SyntheticConfig, generate_synthetic
from .evaluation import average_map_seconds, map_at_deltas, write_pr_curves
from .inference import ensemble, nms, predict_video, read_predictions, scores_to_predictions, write_predictions
from .model import BackboneConfig, CheckpointError, HEAD_KINDS, HeadConfig, SHIFT_MODES, SpotModel, \
    read_checkpoint, save_checkpoint
from .training import TrainConfig, TrainingDiverged, load_video, train

EXIT_OK, EXIT_USAGE, EXIT_TRAIN, EXIT_MISMATCH = 0, 2, 3, 4

log = logging.getLogger("spotkit")


class UsageError(Exception):
    pass


def _write_json(path: str, doc) -> None:
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def _out_dir(args) -> str:
    if not args.out:
        raise UsageError("--out is required")
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _resolved(args, **extra) -> dict:
    doc = {k: v for k, v in vars(args).items() if k != "func"}
    doc.update(extra)
    return doc


def _nms_window(text: str):
    if text == "off":
        return None
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'off' or a non-negative integer, got {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError("NMS window must be >= 0")
    return value


def _int_list(text: str) -> list[int]:
    try:
        values = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or min(values) < 0:
        raise argparse.ArgumentTypeError("deltas must be non-negative integers")
    return values


def _float_list(text: str) -> list[float]:
    try:
        values = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not values or min(values) <= 0:
        raise argparse.ArgumentTypeError("tolerances must be positive")
    return values


def cmd_synth(args) -> int:
    fields = {}
    if args.config:
        with open(args.config) as f:
            fields.update(json.load(f))
    flags = {"num_videos": args.videos, "frames_per_video": args.frames, "frame_height": args.height,
             "frame_width": args.width, "fps": args.fps, "with_flow": args.flow or None,
             "seed": args.seed}
    fields.update({k: v for k, v in flags.items() if v is not None})
    try:
        config = SyntheticConfig(**fields)
    except TypeError as e:
        raise UsageError(f"bad synthetic config: {e}") from None
    if config.num_videos < 1 or config.frames_per_video < 1:
        raise UsageError("--videos and --frames must be >= 1")
    out = _out_dir(args)
    manifest = generate_synthetic(config, out)
    _write_json(os.path.join(out, "synth_config.json"), asdict(config))
    counts = Counter(e.class_id for e in manifest.events)
    print(os.path.join(out, "manifest.json"))
    for c, name in enumerate(manifest.class_table.names, 1):
        print(f"{name:12s} {counts.get(c, 0)}")
    return EXIT_OK


def cmd_train(args) -> int:
    manifest = load_manifest(args.manifest)
    out = _out_dir(args)
    config = TrainConfig(clip_len=args.clip_len, batch_clips=args.batch, steps_per_cycle=args.steps_per_cycle,
                         num_cycles=args.cycles, base_lr=args.lr, warmup_cycles=args.warmup,
                         weight_decay=args.weight_decay, fg_weight=args.fg_weight, mixup_alpha=args.mixup,
                         blur_probability=args.blur, dilate_radius=args.dilate, seed=args.seed,
                         deterministic=args.deterministic)
    backbone = BackboneConfig(shift_mode=args.shift, modality=args.modality)
    head = HeadConfig(manifest.num_classes, kind=args.head)
    _write_json(os.path.join(out, "train_config.json"),
                _resolved(args, train=config.to_dict(), backbone=backbone.to_dict(), head_config=head.to_dict()))
    torch.manual_seed(args.seed)
    model = SpotModel(backbone, head)
    progress = None if args.quiet else (lambda row: print(json.dumps(row, sort_keys=True), flush=True))
    try:
        result = train(manifest, model, config, os.path.join(out, "train_log.jsonl"), progress)
    except TrainingDiverged as e:
        print(f"error: training diverged: {e}", file=sys.stderr)
        return EXIT_TRAIN
    path = os.path.join(out, "model.ckpt")
    save_checkpoint(result.checkpoint, path)
    print(path)
    return EXIT_OK


def _clip_len(ckpt, override):
    if override:
        return override + override % 2
    length = ckpt.metadata.get("train_config", {}).get("clip_len", 100)
    return length + length % 2


def cmd_infer(args) -> int:
    manifest = load_manifest(args.manifest)
    out = _out_dir(args)
    rgb_ckpt = read_checkpoint(args.checkpoint)
    flow_ckpt = read_checkpoint(args.flow_checkpoint) if args.flow_checkpoint else None
    models = [(rgb_ckpt, rgb_ckpt.build_model())]
    if flow_ckpt is not None:
        models.append((flow_ckpt, flow_ckpt.build_model()))
    for ckpt, model in models:
        if model.num_classes != manifest.num_classes:
            raise CheckpointError(f"checkpoint predicts {model.num_classes} classes, "
                                  f"manifest has {manifest.num_classes}")
    if flow_ckpt is not None and flow_ckpt.backbone.modality != "flow":
        raise UsageError("--flow-checkpoint must hold a flow-modality model")
    videos = manifest.videos_in(args.split)
    if not videos:
        raise UsageError(f"split {args.split!r} has no videos")
    preds = []
    for v in videos:
        streams = []
        for ckpt, model in models:
            frames = load_video(manifest, v, ckpt.backbone.modality)
            streams.append(predict_video(model, frames, _clip_len(ckpt, args.clip_len)))
        scores = streams[0] if len(streams) == 1 else ensemble(*streams)
        candidates = scores_to_predictions(scores, v.id, args.min_score)
        preds.extend(candidates if args.nms_window is None else nms(candidates, args.nms_window))
    path = os.path.join(out, "predictions.jsonl")
    write_predictions(preds, path)
    meta = {"split": args.split, "nms_applied": args.nms_window is not None, "nms_window": args.nms_window,
            "checkpoint": args.checkpoint, "flow_checkpoint": args.flow_checkpoint,
            "num_predictions": len(preds)}
    _write_json(os.path.join(out, "predictions.meta.json"), meta)
    _write_json(os.path.join(out, "infer_config.json"), _resolved(args))
    print(path)
    return EXIT_OK


def cmd_eval(args) -> int:
    manifest = load_manifest(args.manifest)
    out = _out_dir(args)
    preds = read_predictions(args.predictions)
    meta_path = args.predictions.rsplit(".", 1)[0] + ".meta.json"
    meta = {}
    if os.path.exists(meta_path):
        with open(meta_path) as f:
            meta = json.load(f)
    videos = None
    if meta.get("split"):
        videos = [v.id for v in manifest.videos_in(meta["split"])]
    report = map_at_deltas(preds, manifest, args.deltas, videos=videos)
    report.nms_applied = meta.get("nms_applied")
    report.nms_window = meta.get("nms_window")
    if args.tolerances_sec:
        report.tolerances_sec = args.tolerances_sec
        report.average_map = average_map_seconds(preds, manifest, args.tolerances_sec, videos=videos)
    if args.pr_out:
        write_pr_curves(preds, manifest, args.deltas, args.pr_out, videos=videos)
    report.save(os.path.join(out, "report.json"))
    _write_json(os.path.join(out, "eval_config.json"), _resolved(args))
    print(report.table())
    if report.average_map is not None:
        print(f"average-mAP over {args.tolerances_sec} s: {100 * report.average_map:.2f}")
    print(f"NMS applied: {report.nms_applied if report.nms_applied is not None else 'unknown'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="random seed (default 0)")
    common.add_argument("--deterministic", action="store_true")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="spotkit", description="Frame-accurate event spotting in video.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate the synthetic bouncing-ball benchmark")
    p.add_argument("--config", help="JSON file of generator fields; flags override it")
    p.add_argument("--videos", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--fps", type=float)
    p.add_argument("--flow", action="store_true", help="also write optical flow")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--clip-len", type=int, default=100)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--cycles", type=int, default=50)
    p.add_argument("--steps-per-cycle", type=int, default=625)
    p.add_argument("--warmup", type=int, default=3, help="warmup cycles")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--weight-decay", type=float, default=1e-4)
    p.add_argument("--shift", choices=SHIFT_MODES, default="gsm")
    p.add_argument("--head", choices=HEAD_KINDS, default="bigru")
    p.add_argument("--modality", choices=("rgb", "flow"), default="rgb")
    p.add_argument("--fg-weight", type=float, default=5.0)
    p.add_argument("--dilate", type=int, default=0)
    p.add_argument("--mixup", type=float, default=0.2, help="mixup Beta alpha; 0 disables")
    p.add_argument("--blur", type=float, default=0.25, help="Gaussian blur probability")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", parents=[common], help="predict events for a split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--flow-checkpoint")
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--nms-window", type=_nms_window, default=1, help="'off' or a frame radius")
    p.add_argument("--clip-len", type=int, help="defaults to the training clip length")
    p.add_argument("--min-score", type=float, default=0.0)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", parents=[common], help="score predictions")
    p.add_argument("--manifest", required=True)
    p.add_argument("--predictions", required=True)
    p.add_argument("--deltas", type=_int_list, default=[1, 2])
    p.add_argument("--tolerances-sec", type=_float_list)
    p.add_argument("--pr-out", help="directory for per-class PR curves")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if args.seed is None and args.command != "synth":
        args.seed = 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.deterministic:
        torch.use_deterministic_algorithms(True)
    torch.manual_seed(args.seed or 0)
    np.random.seed(args.seed or 0)
    try:
        return args.func(args)
    except CheckpointError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MISMATCH
    except (UsageError, SpotError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
