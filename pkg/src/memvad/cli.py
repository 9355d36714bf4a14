"""Command-line entry point.

Subcommands::

    memvad synth     --out DIR [--config F] [--seed N] [--set K=V ...]
    memvad train     --out DIR --train-manifest F [--epochs N] [--batch-size N] ...
    memvad score     --out DIR --checkpoint F --test-manifest F
                     [--no-smoothing] [--scale-adjust] ...
    memvad eval      --out DIR --test-manifest F --gt-dir DIR --scores-dir DIR ...
    memvad gradcheck [--trials N] [--seed N]

Every command is deterministic given identical inputs and seed, exits 0
on success and prints a single machine-parsable ``error: <Class>: ...``
line on failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .config import RunConfig, load_run_config
from .errors import ConfigError, MemvadError
from .features import read_features, read_manifest, write_features, write_manifest
from .groundtruth import read_ground_truth, write_ground_truth
from .metrics import detections_from_score_table, frame_auc, rbdc, roc_curve, tbdc
from .network import NetworkSpec, load_checkpoint, save_checkpoint
from .postprocess import (
    aggregate_frame_scores,
    frame_scores,
    read_frame_scores,
    scale_adjust,
    smooth_object_scores,
    write_frame_scores,
)
from .report import write_eval_report
from .scoring import read_score_table, score_video, write_score_table
from .synthetic import generate_synthetic
from .training import gradient_check, train, write_history

import numpy as np


def _parse_sets(pairs: list[str]) -> dict[str, str]:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _build_config(args: argparse.Namespace) -> RunConfig:
    overrides: dict[str, object] = _parse_sets(getattr(args, "set", []) or [])
    direct = {
        "seed": getattr(args, "seed", None),
        "out_dir": getattr(args, "out", None),
        "epochs": getattr(args, "epochs", None),
        "batch_size": getattr(args, "batch_size", None),
        "train_manifest": getattr(args, "train_manifest", None),
        "test_manifest": getattr(args, "test_manifest", None),
        "gt_dir": getattr(args, "gt_dir", None),
        "scores_dir": getattr(args, "scores_dir", None),
        "checkpoint": getattr(args, "checkpoint", None),
    }
    for key, value in direct.items():
        if value is not None:
            overrides[key] = value
    if getattr(args, "no_smoothing", False):
        overrides["smoothing"] = False
    if getattr(args, "scale_adjust", False):
        overrides["scale_adjust"] = True
    if getattr(args, "no_figures", False):
        overrides["figures"] = False
    return load_run_config(getattr(args, "config", None), overrides)


def _require(cfg: RunConfig, *names: str) -> None:
    for name in names:
        if not getattr(cfg, name):
            raise ConfigError(f"missing required setting {name!r}")


def _write_meta(out_dir: Path, command: str, cfg: RunConfig) -> None:
    meta = {"command": command, "seed": cfg.seed, "version": __version__}
    (out_dir / f"{command}_meta.json").write_text(
        json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8"
    )


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    _require(cfg, "out_dir")
    out = Path(cfg.out_dir)
    data = generate_synthetic(cfg.synth_config(), cfg.seed)
    train_dir = out / "train"
    test_dir = out / "test"
    gt_dir = out / "gt"
    for d in (train_dir, test_dir, gt_dir):
        d.mkdir(parents=True, exist_ok=True)
    train_paths = []
    for fset in data.train:
        path = train_dir / f"{fset.video_id}.omf1"
        write_features(fset, path)
        train_paths.append(path)
    write_manifest(train_paths, out / "train_manifest.txt")
    test_paths = []
    for fset in data.test:
        path = test_dir / f"{fset.video_id}.omf1"
        write_features(fset, path)
        test_paths.append(path)
    write_manifest(test_paths, out / "test_manifest.txt")
    n_regions = 0
    for video_id, gt in sorted(data.gt.items()):
        write_ground_truth(
            gt, gt_dir / f"{video_id}.labels.txt", gt_dir / f"{video_id}.regions.txt"
        )
        n_regions += len(gt.regions)
    _write_meta(out, "synth", cfg)
    n_train = sum(len(s.records) for s in data.train)
    n_test = sum(len(s.records) for s in data.test)
    print(
        f"synth: {len(data.train)} train videos ({n_train} objects), "
        f"{len(data.test)} test videos ({n_test} objects), "
        f"{n_regions} anomalous regions"
    )
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    _require(cfg, "out_dir", "train_manifest")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    datasets = [read_features(p) for p in read_manifest(cfg.train_manifest)]
    tconf = cfg.train_config()
    result = train(datasets, tconf)
    best_epoch = int(np.argmin(result.history)) + 1
    best_loss = result.history[best_epoch - 1]
    save_checkpoint(result.best_params, best_loss, out / "checkpoint.omc1")
    write_history(result.history, out / "history.txt")
    _write_meta(out, "train", cfg)
    print(
        f"train: {len(result.history)} epochs, "
        f"final loss {result.history[-1]:.6f}, "
        f"best epoch {best_epoch} (loss {best_loss:.6f})"
    )
    return 0


def cmd_score(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    _require(cfg, "out_dir", "checkpoint", "test_manifest")
    out = Path(cfg.out_dir)
    scores_dir = out / "scores"
    frames_dir = out / "frames"
    scores_dir.mkdir(parents=True, exist_ok=True)
    frames_dir.mkdir(parents=True, exist_ok=True)
    params, _ = load_checkpoint(cfg.checkpoint)
    smoothing = cfg.smoothing_config()
    n_objects = 0
    for path in read_manifest(cfg.test_manifest):
        video = read_features(path)
        table = score_video(params, video, components=cfg.components())
        if cfg.smoothing:
            table = smooth_object_scores(table, smoothing)
        if cfg.scale_adjust:
            table = scale_adjust(table)
        write_score_table(table, scores_dir / f"{video.video_id}.scores.txt")
        if cfg.smoothing:
            per_frame = frame_scores(table, video.frame_count, smoothing)
        else:
            per_frame = aggregate_frame_scores(table, video.frame_count)
        write_frame_scores(per_frame, frames_dir / f"{video.video_id}.frames.txt")
        n_objects += len(table)
    _write_meta(out, "score", cfg)
    print(f"score: {n_objects} objects scored into {scores_dir}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    _require(cfg, "out_dir", "test_manifest", "gt_dir", "scores_dir")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    gt_dir = Path(cfg.gt_dir)
    scores_root = Path(cfg.scores_dir)
    scores_by_video = {}
    labels_by_video = {}
    gt_by_video = {}
    detections = []
    for path in read_manifest(cfg.test_manifest):
        video_id = Path(path).stem
        gt = read_ground_truth(
            gt_dir / f"{video_id}.labels.txt", gt_dir / f"{video_id}.regions.txt"
        )
        per_frame = read_frame_scores(scores_root / "frames" / f"{video_id}.frames.txt")
        if len(per_frame) != gt.frame_count:
            raise ConfigError(
                f"{video_id}: {len(per_frame)} frame scores vs "
                f"{gt.frame_count} ground-truth labels"
            )
        table = read_score_table(scores_root / "scores" / f"{video_id}.scores.txt")
        gt_by_video[video_id] = gt
        scores_by_video[video_id] = per_frame
        labels_by_video[video_id] = gt.frame_labels
        detections.extend(detections_from_score_table(table))

    keys = sorted(scores_by_video)
    pooled_scores = np.concatenate([scores_by_video[k] for k in keys])
    pooled_labels = np.concatenate([labels_by_video[k] for k in keys])
    # the ROC curve dump is always the pooled one; the reported frame_auc
    # follows the configured averaging
    frame_roc = roc_curve(pooled_scores, pooled_labels)
    auc_value = (
        frame_roc.auc
        if cfg.auc_average == "micro"
        else frame_auc(scores_by_video, labels_by_video, cfg.auc_average)
    )
    rbdc_curve = rbdc(
        detections, gt_by_video, cfg.region_overlap, cfg.overlap_mode
    )
    tbdc_curve = tbdc(
        detections,
        gt_by_video,
        cfg.region_overlap,
        cfg.track_fraction,
        cfg.overlap_mode,
    )
    meta = {
        "frame_auc": round(auc_value, 4),
        "seed": cfg.seed,
        "auc_average": cfg.auc_average,
        "region_overlap": cfg.region_overlap,
        "track_fraction": cfg.track_fraction,
        "overlap_mode": cfg.overlap_mode,
        "videos": len(keys),
    }
    summary = write_eval_report(
        out, frame_roc, rbdc_curve, tbdc_curve, meta, figures=cfg.figures
    )
    print(
        f"eval: frame_auc={summary['frame_auc']:.4f} "
        f"rbdc={summary['rbdc']:.4f} tbdc={summary['tbdc']:.4f}"
    )
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    trials = args.trials
    spec = NetworkSpec.small()
    tolerance = 1e-3
    passed = 0
    skipped = 0
    worst = 0.0
    per_group: dict[str, float] = {}
    for trial in range(trials):
        report = gradient_check(spec, seed=cfg.seed + trial)
        if report.switch_proximate():
            skipped += 1
            continue
        worst = max(worst, report.max_rel_error)
        for group, err in report.per_group.items():
            per_group[group] = max(per_group.get(group, 0.0), err)
        if report.max_rel_error < tolerance:
            passed += 1
    checked = trials - skipped
    for group in sorted(per_group):
        print(f"gradcheck: {group:10s} max rel error {per_group[group]:.3e}")
    print(
        f"gradcheck: {passed}/{checked} instances under {tolerance:.0e} "
        f"({skipped} skipped near switching points), worst {worst:.3e}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="memvad",
        description="Memory-guided object-level video anomaly detection",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--seed", type=int, help="seed override")
        p.add_argument("--out", help="output directory")
        p.add_argument(
            "--set",
            action="append",
            metavar="KEY=VALUE",
            help="override any config key (repeatable)",
        )

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model from a feature manifest")
    common(p)
    p.add_argument("--train-manifest", help="manifest of training OMF1 files")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score test videos with a checkpoint")
    common(p)
    p.add_argument("--checkpoint", help="trained checkpoint file")
    p.add_argument("--test-manifest", help="manifest of test OMF1 files")
    p.add_argument("--no-smoothing", action="store_true")
    p.add_argument("--scale-adjust", action="store_true")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="evaluate score files against ground truth")
    common(p)
    p.add_argument("--test-manifest", help="manifest of test OMF1 files")
    p.add_argument("--gt-dir", help="ground-truth directory")
    p.add_argument("--scores-dir", help="directory written by `memvad score`")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    common(p)
    p.add_argument("--trials", type=int, default=20)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (MemvadError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
