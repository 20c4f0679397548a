"""Command-line entry point.

Subcommands: gen-data, train, eval, decode, stability-report, gradcheck.
Every command is deterministic given its inputs and --seed; exit codes are
0 on success, 1 when a check fails, 2 for usage or configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import tempfile

from . import gradcheck as gradcheck_mod
from .checkpoint import load_params, validate_shapes
from .config import MODES, RunConfig, load_run_config, run_config_from_dict
from .data import Dataset, SyntheticConfig, generate_synthetic, load_dataset, make_folds, save_dataset
from .decoder import budget, decode_summary
from .errors import ConfigError
from .evaluation import evaluate_summe, evaluate_tvsum, flip_rate, oracle_report, write_report_csv
from .timeline import assign_segment_ids
from .trainer import all_param_shapes, predict_scores, train


def _threads_cap() -> int:
    """VASTSUM_THREADS caps internal worker count; execution is currently
    single-threaded, so any valid value only raises the ceiling."""
    raw = os.environ.get("VASTSUM_THREADS", "1")
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"VASTSUM_THREADS must be an integer, got {raw!r}") from None
    if value < 1:
        raise ConfigError("VASTSUM_THREADS must be >= 1")
    return value


def _atomic_write_text(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def _load_config(args) -> RunConfig:
    cfg = load_run_config(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.train.seed = args.seed
    if getattr(args, "mode", None) is not None:
        cfg.train.mode = args.mode
    if getattr(args, "epochs", None) is not None:
        cfg.train.epochs = args.epochs
    cfg.validate()
    return cfg


def _load_checkpoint(path):
    params, meta = load_params(path)
    if "config" not in meta:
        raise ConfigError(f"checkpoint {path} carries no run config metadata")
    cfg = run_config_from_dict(meta["config"])
    validate_shapes(params, all_param_shapes(cfg))
    return params, cfg


def cmd_gen_data(args) -> int:
    cfg = SyntheticConfig(
        n_videos=args.videos,
        timesteps=args.timesteps,
        feature_dim=args.feature_dim,
        annotators=args.annotators,
        segments=args.segments,
        feature_noise=args.feature_noise,
        annotator_noise=args.annotator_noise,
        mode=args.mode,
        seed=args.seed,
    )
    dataset = generate_synthetic(cfg)
    save_dataset(dataset, args.out)
    print(f"wrote {len(dataset.videos)} {dataset.mode} videos to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    dataset = load_dataset(args.data)
    val_videos = None
    if args.fold is not None:
        folds = make_folds(dataset, k=args.folds, seed=cfg.train.seed)
        if not 0 <= args.fold < len(folds):
            raise ConfigError(f"--fold must lie in [0, {len(folds) - 1}]")
        train_ids, test_ids = folds[args.fold]
        by_id = {v.video_id: v for v in dataset.videos}
        val_videos = [by_id[i] for i in test_ids]
        dataset = Dataset(dataset.mode, [by_id[i] for i in train_ids])
    os.makedirs(args.out_dir, exist_ok=True)
    result = train(dataset, cfg, val_videos=val_videos, checkpoint_dir=args.out_dir)
    last = result.history[-1]
    print(f"trained {cfg.train.epochs} epochs; final total loss {last.total:.6f}")
    if result.best_epoch is not None:
        print(f"best validation rho {result.best_rho:.4f} at epoch {result.best_epoch}")
    return 0


def _predictions(params, cfg, dataset):
    preds = []
    for video in dataset.videos:
        seg = assign_segment_ids(video.picks, video.change_points)
        preds.append((video, seg, predict_scores(params, video, seg, cfg)))
    return preds


def cmd_eval(args) -> int:
    params, cfg = _load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data)
    if dataset.mode != args.protocol:
        raise ConfigError(
            f"protocol {args.protocol!r} does not match dataset mode {dataset.mode!r}"
        )
    ids = [v.video_id for v in dataset.videos]
    anns = [v.annotations for v in dataset.videos]
    if args.oracle:
        report = oracle_report(args.protocol, ids, anns)
    else:
        cfg.train.mode = args.protocol
        cfg.validate()
        signals = [p["signal"] for _, _, p in _predictions(params, cfg, dataset)]
        if args.protocol == "tvsum":
            report = evaluate_tvsum(ids, signals, anns)
        else:
            report = evaluate_summe(ids, signals, anns)
    write_report_csv(report, args.out)
    print(
        f"mean tau {report.mean_tau:.4f}, mean rho {report.mean_rho:.4f} "
        f"({report.degenerate_count} degenerate) -> {args.out}"
    )
    return 0


def cmd_decode(args) -> int:
    if not 0 < args.rho <= 1:
        raise ConfigError(f"--rho must lie in (0, 1], got {args.rho}")
    params, cfg = _load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data)
    cfg.train.mode = dataset.mode
    cfg.validate()
    entries = []
    for video, _, pred in _predictions(params, cfg, dataset):
        mask = decode_summary(pred["signal"], video.picks, video.change_points, args.rho)
        cap = budget(args.rho, video.n_frames)
        kept = int(mask.y.sum())
        if kept > cap:
            raise AssertionError(
                f"budget violated for {video.video_id}: {kept} > {cap}"
            )
        entries.append(
            {
                "id": video.video_id,
                "n_frames": video.n_frames,
                "budget": cap,
                "summary_frames": kept,
                "selected_segments": list(mask.selected_segments),
                "mask": [int(b) for b in mask.y],
            }
        )
    _atomic_write_text(args.out, json.dumps({"rho": args.rho, "videos": entries}, indent=1))
    print(f"decoded {len(entries)} videos at rho={args.rho} -> {args.out}")
    return 0


def cmd_stability_report(args) -> int:
    if not 0 < args.rho <= 1:
        raise ConfigError(f"--rho must lie in (0, 1], got {args.rho}")
    if args.sigma < 0:
        raise ConfigError("--sigma must be >= 0")
    params, cfg = _load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data)
    cfg.train.mode = dataset.mode
    cfg.validate()
    rates = []
    for index, (video, _, pred) in enumerate(_predictions(params, cfg, dataset)):
        rate = flip_rate(
            pred["signal"],
            video.picks,
            video.change_points,
            args.rho,
            args.sigma,
            args.trials,
            seed=args.seed + index,
        )
        rates.append((video.video_id, rate))
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["video_id", "flip_rate"])
        for vid, rate in rates:
            writer.writerow([vid, repr(rate)])
        mean = math.fsum(r for _, r in rates) / len(rates)
        writer.writerow(["mean", repr(mean)])
    print(f"mean flip rate {mean:.4f} over {len(rates)} videos -> {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    error = gradcheck_mod.run(seed=args.seed, step=args.step)
    status = "PASS" if error < args.tolerance else "FAIL"
    print(f"gradcheck max relative error {error:.3e} (tolerance {args.tolerance:.1e}): {status}")
    return 0 if status == "PASS" else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vastsum",
        description="Uncertainty-aware, decoder-aligned keyshot summarization pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset file")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=MODES, default="tvsum")
    p.add_argument("--videos", type=int, default=8)
    p.add_argument("--timesteps", type=int, default=64)
    p.add_argument("--feature-dim", type=int, default=16)
    p.add_argument("--annotators", type=int, default=3)
    p.add_argument("--segments", type=int, default=6)
    p.add_argument("--feature-noise", type=float, default=0.05)
    p.add_argument("--annotator-noise", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train on a dataset file")
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", help="run-config JSON file")
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--epochs", type=int)
    p.add_argument("--fold", type=int, help="train one cross-validation fold")
    p.add_argument("--folds", type=int, default=5)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="rank-correlation report for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--protocol", choices=MODES, required=True)
    p.add_argument("--out", required=True)
    p.add_argument(
        "--oracle",
        action="store_true",
        help="correlate targets with themselves instead of model predictions",
    )
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("decode", help="emit budgeted summary masks as JSON")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--rho", type=float, default=0.15)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("stability-report", help="decode flip rates under score noise")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--rho", type=float, default=0.15)
    p.add_argument("--sigma", type=float, default=0.05)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stability_report)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--step", type=float, default=1e-4)
    p.add_argument("--tolerance", type=float, default=gradcheck_mod.TOLERANCE)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _threads_cap()
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
