"""Command-line entry points.

Verbs: ``gen-data`` (synthesize a dataset tree), ``train-image`` (episodic
image training), ``relearn`` (video consistency adaptation), ``eval``
(per-frame metrics and overlays in naive or relearned mode), and ``ablate``
(the five-row loss on/off matrix). Every command is deterministic under a
fixed seed and runs single-threaded. Exit codes: 0 on success, 2 for
configuration or input errors, 3 for numeric failures.
"""

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import torch

from .ablation import format_ablation_table, run_ablation, write_ablation_csv
from .checkpoint import load_model, save_model
from .config import (RunConfig, config_to_dict, load_config, resolve_output_root)
from .data import generate_image_dataset, generate_video_clip
from .dataio import directory_checksum, load_clip, load_clips, load_dataset, write_dataset
from .errors import (EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, ConfigurationError,
                     FreezeViolation, FsvosError, NumericError)
from .evaluate import EVAL_MODES, run_eval
from .relearn import build_teacher_student, relearn
from .seeding import substream_seed
from .train import train_phase1

__all__ = ["main", "build_parser"]


def _load_cfg(args) -> RunConfig:
    return load_config(args.config) if args.config else RunConfig()


def _out_dir(cfg: RunConfig, args, default_name: str) -> Path:
    out = Path(args.out) if args.out else resolve_output_root(cfg) / default_name
    out.mkdir(parents=True, exist_ok=True)
    return out


def _base_dataset(cfg: RunConfig, dataset_dir, n_per_class: int):
    if dataset_dir:
        from .dataio import read_manifest
        base_classes = read_manifest(dataset_dir)["base_classes"]
        return load_dataset(dataset_dir, classes=base_classes)
    return generate_image_dataset(cfg.data, n_per_class)


def _novel_clips(cfg: RunConfig, dataset_dir, n_clips: int):
    if dataset_dir:
        return load_clips(dataset_dir)
    clips = []
    for cls in cfg.data.novel_classes:
        for i in range(n_clips):
            clips.append(generate_video_clip(cfg.data, cls, index=i))
    return clips


def cmd_gen_data(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(cfg, args, "dataset")
    manifest = write_dataset(out, cfg.data, n_per_class=args.n_per_class,
                             clips_per_class=args.clips_per_class)
    checksum = directory_checksum(out)
    print(f"dataset written to {out}")
    print(f"classes: base={manifest['base_classes']} novel={manifest['novel_classes']}")
    print(f"checksum: {checksum}")
    return EXIT_OK


def cmd_train_image(args) -> int:
    cfg = _load_cfg(args)
    phase1 = cfg.phase1
    if args.iterations is not None:
        phase1 = dataclasses.replace(phase1, iterations=args.iterations)
    out = _out_dir(cfg, args, "phase1")

    model, start = None, 0
    if args.resume:
        model, ckpt = load_model(args.resume)
        start = int(ckpt.meta.get("iteration", 0))
        if ckpt.has_temporal_unit:
            raise ConfigurationError("cannot resume image training from an adapted checkpoint")
    dataset = _base_dataset(cfg, args.dataset, args.n_per_class)
    result = train_phase1(dataset, phase1, cfg.arch, seed=cfg.seed, model=model,
                          start_iteration=start, log_path=out / "train_log.csv")
    digest = save_model(out / "checkpoint", result.model,
                        meta={"phase": "image", "seed": cfg.seed,
                              "iteration": phase1.iterations,
                              "config": config_to_dict(cfg)})
    final = result.losses[-1] if result.losses else float("nan")
    print(f"trained {phase1.iterations - start} iterations; final loss {final:.6f}")
    print(f"checkpoint: {out / 'checkpoint'} (blob sha256 {digest})")
    return EXIT_OK


def cmd_relearn(args) -> int:
    cfg = _load_cfg(args)
    phase2 = cfg.phase2
    overrides = {}
    for name in ("lambda1", "lambda2", "lambda3", "epochs"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    if overrides:
        phase2 = dataclasses.replace(phase2, **overrides)
    out = _out_dir(cfg, args, "phase2")

    net, ckpt = load_model(args.checkpoint)
    clip_class = args.clip_class or cfg.data.novel_classes[0]
    if args.dataset:
        clip = load_clip(args.dataset, clip_class, args.clip_index)
    else:
        clip = generate_video_clip(cfg.data, clip_class, index=args.clip_index)

    torch.manual_seed(substream_seed(cfg.seed, "init", "temporal"))
    pair = build_teacher_student(net)
    student = relearn(pair, clip, cfg=phase2, log_path=out / "relearn_log.csv")
    pair.verify_frozen()
    print("freeze contract verified: teacher and student head unchanged")

    digest = save_model(out / "checkpoint", student,
                        meta={"phase": "video", "seed": cfg.seed,
                              "source_checkpoint": ckpt.blob_sha256,
                              "lambdas": [phase2.lambda1, phase2.lambda2, phase2.lambda3],
                              "clip_class": clip_class, "clip_index": args.clip_index})
    print(f"adapted checkpoint: {out / 'checkpoint'} (blob sha256 {digest})")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(cfg, args, f"eval_{args.mode}")
    net, _ = load_model(args.checkpoint)
    clips = _novel_clips(cfg, args.dataset, args.n_clips)
    summary = run_eval(net, clips, out, mode=args.mode, window=cfg.phase2.window)
    m = summary.mean
    print(f"mode={args.mode} frames={summary.count} dice={m.dice:.4f} "
          f"fg_iou={m.fg_iou:.4f} bg_iou={m.bg_iou:.4f} fb_iou={m.fb_iou:.4f}")
    print(f"report: {out / f'metrics_{args.mode}.csv'}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _load_cfg(args)
    phase2 = cfg.phase2
    if args.epochs is not None:
        phase2 = dataclasses.replace(phase2, epochs=args.epochs)
    out = _out_dir(cfg, args, "ablation")
    net, _ = load_model(args.checkpoint)
    seeds = tuple(int(s) for s in args.seeds.split(","))
    data_cfg = dataclasses.replace(cfg.data, frames_per_clip=args.frames,
                                   annotated_prefix=1)
    result = run_ablation(net, data_cfg, phase2, seeds=seeds,
                          clips_per_seed=args.clips_per_seed)
    write_ablation_csv(out / "ablation.csv", result)
    (out / "ablation_summary.json").write_text(json.dumps({
        "full_vs_baseline_ok": result.full_vs_baseline_ok,
        "full_vs_leave_one_out_ok": result.full_vs_leave_one_out_ok,
        "collapse_flagged": result.collapse_flagged,
    }, indent=2))
    print(format_ablation_table(result))
    if result.collapse_flagged:
        print("warning: run without the prediction term collapsed below half of baseline")
    print(f"table: {out / 'ablation.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fsvos",
        description="Few-shot video object segmentation on synthetic shape data.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML run config (defaults used if omitted)")
        p.add_argument("--out", help="output directory for this command")

    p = sub.add_parser("gen-data", help="synthesize a PNG dataset tree")
    common(p)
    p.add_argument("--n-per-class", type=int, default=20)
    p.add_argument("--clips-per-class", type=int, default=2)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-image", help="episodic image training (phase 1)")
    common(p)
    p.add_argument("--dataset", help="dataset dir from gen-data (else synthesize)")
    p.add_argument("--n-per-class", type=int, default=50,
                   help="synthetic images per class when no dataset is given")
    p.add_argument("--resume", help="checkpoint dir to resume from")
    p.add_argument("--iterations", type=int, help="override phase1.iterations")
    p.set_defaults(func=cmd_train_image)

    p = sub.add_parser("relearn", help="video consistency adaptation (phase 2)")
    common(p)
    p.add_argument("--checkpoint", required=True, help="image-trained checkpoint dir")
    p.add_argument("--dataset", help="dataset dir holding clips (else synthesize)")
    p.add_argument("--clip-class", help="novel class of the clip")
    p.add_argument("--clip-index", type=int, default=0)
    p.add_argument("--epochs", type=int, help="override phase2.epochs")
    p.add_argument("--lambda1", type=float, help="temporal term weight")
    p.add_argument("--lambda2", type=float, help="feature term weight")
    p.add_argument("--lambda3", type=float, help="prediction term weight")
    p.set_defaults(func=cmd_relearn)

    p = sub.add_parser("eval", help="score a checkpoint on clips")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", help="dataset dir holding clips (else synthesize)")
    p.add_argument("--mode", choices=EVAL_MODES, default="naive")
    p.add_argument("--n-clips", type=int, default=2,
                   help="synthetic clips per novel class when no dataset is given")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="loss on/off ablation table")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seeds", default="0,1,2,3,4", help="comma-separated seeds")
    p.add_argument("--clips-per-seed", type=int, default=5)
    p.add_argument("--frames", type=int, default=16, help="frames per clip")
    p.add_argument("--epochs", type=int, help="override phase2.epochs")
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    torch.set_num_threads(1)
    try:
        return args.func(args)
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except FreezeViolation:
        raise  # a freeze violation is a bug, not a usage error
    except FsvosError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
