"""End-to-end optimization loop.

Forward composes scorer -> head -> losses on one tape per video; gradients
come from the tape, are averaged over an accumulation window, clipped by
global norm, and applied with AdamW (decoupled weight decay). All randomness
(shuffling, latent noise, ranking pairs, stability perturbations) flows from
one seeded generator in a fixed order, so a (dataset, config, seed) triple
fully determines the result.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from . import losses, prob_head, scorer
from .checkpoint import save_params
from .config import RunConfig
from .data import Dataset, VideoRecord
from .decoder import budget
from .errors import ConfigError
from .evaluation import evaluate_summe, evaluate_tvsum
from .timeline import SegmentIndexMap, assign_segment_ids


@dataclass
class OptimizerState:
    """AdamW first/second moments per parameter plus the shared step count."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "OptimizerState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    history: list[losses.LossBreakdown]
    best_params: dict[str, np.ndarray] | None = None
    best_epoch: int | None = None
    best_rho: float | None = None


@dataclass
class NoiseBundle:
    """Per-video per-step randomness, drawn by the trainer in a fixed order."""

    latent: np.ndarray
    pairs: np.ndarray
    stab: np.ndarray


def init_all_params(cfg: RunConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    params = scorer.init_params(cfg.scorer, rng)
    params.update(prob_head.init_params(cfg.scorer, cfg.head, rng))
    return params


def all_param_shapes(cfg: RunConfig) -> dict[str, tuple[int, ...]]:
    shapes = scorer.param_shapes(cfg.scorer)
    shapes.update(prob_head.param_shapes(cfg.scorer, cfg.head))
    return shapes


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    """Scale every gradient by max_norm/norm when the global L2 norm exceeds it."""
    if not max_norm > 0:
        raise ValueError("max_norm must be > 0")
    total = math.fsum(float(np.sum(g * g)) for g in grads.values())
    norm = math.sqrt(total)
    if norm <= max_norm:
        return grads
    factor = max_norm / norm
    return {k: g * factor for k, g in grads.items()}


def adamw_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    cfg,
) -> None:
    """Bias-corrected AdamW update with decoupled weight decay, in place."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    for name, p in params.items():
        g = grads[name]
        state.m[name] = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * g
        state.v[name] = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * (g * g)
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        params[name] = p - cfg.lr * (m_hat / (np.sqrt(v_hat) + cfg.adam_eps)) - cfg.lr * cfg.weight_decay * p


def draw_noise(video: VideoRecord, seg: SegmentIndexMap, cfg: RunConfig, rng) -> NoiseBundle:
    return NoiseBundle(
        latent=rng.standard_normal((video.n_timesteps, cfg.head.latent_dim)),
        pairs=rng.integers(0, video.n_timesteps, size=(cfg.loss.rank_pairs, 2)),
        stab=rng.normal(0.0, cfg.loss.sigma_perturb, size=(cfg.loss.perturbations, seg.n_segments)),
    )


def build_video_loss(
    params: dict[str, np.ndarray],
    video: VideoRecord,
    seg: SegmentIndexMap,
    cfg: RunConfig,
    epoch: int,
    noise: NoiseBundle,
) -> tuple[dc.Node, losses.LossBreakdown]:
    """One tape: scorer, head, and all four loss terms for a single video."""
    tape = dc.Tape()
    pnodes = dc.lift_params(tape, params)
    h_hat = scorer.forward(tape.constant(video.features), seg, pnodes, cfg.scorer)
    out = prob_head.forward(h_hat, pnodes, noise.latent)
    if cfg.train.mode == "tvsum":
        p = None
        main = losses.tvsum_nll(out.mu, out.log_v, video.annotations, cfg.loss.epsilon)
        signal = out.mu
    else:
        p = prob_head.calibrate_probability(out.mu, cfg.head.temperature)
        main = losses.summe_softmin_bce(p, video.annotations, cfg.loss.tau_softmin)
        signal = p
    q, r = losses.select_ranking_targets(cfg.train.mode, out.mu, p, video.annotations)
    rank = losses.ranking_hinge(q, r, noise.pairs, cfg.loss.rank_margin)
    kl = losses.kl_standard_normal(out.mu_z, out.log_var_z)
    pooled = dc.mean_over_sets(signal, seg.index_sets)
    stab = losses.stability_loss(
        pooled, seg.lengths, budget(cfg.train.rho, video.n_frames), cfg.loss, noise.stab
    )
    total, lambdas = losses.total_loss(main, rank, stab, kl, epoch, cfg.loss)
    breakdown = losses.LossBreakdown.compose(
        dc.scalar_value(main),
        dc.scalar_value(rank),
        dc.scalar_value(stab),
        dc.scalar_value(kl),
        lambdas,
        epoch,
    )
    return total, breakdown


def predict_scores(
    params: dict[str, np.ndarray], video: VideoRecord, seg: SegmentIndexMap, cfg: RunConfig
) -> dict[str, np.ndarray]:
    """Deterministic inference: posterior-mean latent, no sampling.

    Returns the logits mu and the decode signal (mu for tvsum, calibrated
    probabilities for summe)."""
    tape = dc.Tape()
    pnodes = dc.lift_params(tape, params)
    h_hat = scorer.forward(tape.constant(video.features), seg, pnodes, cfg.scorer)
    out = prob_head.forward(
        h_hat, pnodes, np.zeros((video.n_timesteps, cfg.head.latent_dim))
    )
    mu = out.mu.value.copy()
    if cfg.train.mode == "summe":
        signal = prob_head.calibrate_probability(out.mu, cfg.head.temperature).value.copy()
    else:
        signal = mu
    return {"mu": mu, "signal": signal, "log_v": out.log_v.value.copy()}


def _validation_rho(params, videos, seg_maps, cfg) -> float:
    ids = [v.video_id for v in videos]
    preds = [predict_scores(params, v, seg_maps[v.video_id], cfg)["signal"] for v in videos]
    anns = [v.annotations for v in videos]
    if cfg.train.mode == "tvsum":
        report = evaluate_tvsum(ids, preds, anns)
    else:
        report = evaluate_summe(ids, preds, anns)
    return report.mean_rho


def train(
    dataset: Dataset,
    cfg: RunConfig,
    val_videos: list[VideoRecord] | None = None,
    checkpoint_dir: str | None = None,
) -> TrainResult:
    """Seeded training over the dataset; deterministic given (data, cfg, seed).

    With validation videos, tracks the checkpoint with the best validation
    Spearman rho. With a checkpoint_dir, writes checkpoint.json every epoch
    (and best.json when validation improves) plus train_log.csv at the end.
    """
    cfg.validate()
    if not dataset.videos:
        raise ConfigError("dataset is empty")
    if dataset.mode != cfg.train.mode:
        raise ConfigError(
            f"dataset mode {dataset.mode!r} does not match train.mode {cfg.train.mode!r}"
        )
    val_videos = list(val_videos or [])
    for video in dataset.videos + val_videos:
        if video.n_timesteps > cfg.scorer.max_timesteps:
            raise ConfigError(
                f"video {video.video_id!r} has T={video.n_timesteps} > max_timesteps"
            )
        if video.features.shape[1] != cfg.scorer.input_dim:
            raise ConfigError(
                f"video {video.video_id!r} feature dim {video.features.shape[1]} "
                f"!= scorer.input_dim {cfg.scorer.input_dim}"
            )
    seg_maps = {
        v.video_id: assign_segment_ids(v.picks, v.change_points)
        for v in dataset.videos + val_videos
    }

    rng = np.random.default_rng(cfg.train.seed)
    params = init_all_params(cfg, rng)
    state = OptimizerState.zeros_like(params)
    history: list[losses.LossBreakdown] = []
    best_params, best_epoch, best_rho = None, None, None

    meta = {"config": _config_dict(cfg)}
    for epoch in range(cfg.train.epochs):
        order = rng.permutation(len(dataset.videos))
        acc: dict[str, np.ndarray] | None = None
        acc_count = 0
        parts: list[losses.LossBreakdown] = []
        for pos, vi in enumerate(order):
            video = dataset.videos[int(vi)]
            seg = seg_maps[video.video_id]
            noise = draw_noise(video, seg, cfg, rng)
            total, breakdown = build_video_loss(params, video, seg, cfg, epoch, noise)
            grads = dc.backward(total.tape, total)
            if acc is None:
                acc = grads
            else:
                acc = {k: acc[k] + grads[k] for k in acc}
            acc_count += 1
            parts.append(breakdown)
            if acc_count == cfg.train.accumulate or pos == len(order) - 1:
                averaged = {k: g / acc_count for k, g in acc.items()}
                clipped = clip_global_norm(averaged, cfg.train.clip_norm)
                adamw_step(params, clipped, state, cfg.train)
                acc, acc_count = None, 0
        lambdas = losses.lambda_schedule(epoch, cfg.loss)
        history.append(
            losses.LossBreakdown.compose(
                math.fsum(p.main for p in parts) / len(parts),
                math.fsum(p.rank for p in parts) / len(parts),
                math.fsum(p.stab for p in parts) / len(parts),
                math.fsum(p.kl for p in parts) / len(parts),
                lambdas,
                epoch,
            )
        )
        if checkpoint_dir is not None:
            save_params(params, os.path.join(checkpoint_dir, "checkpoint.json"), meta)
        if val_videos:
            rho = _validation_rho(params, val_videos, seg_maps, cfg)
            if not math.isnan(rho) and (best_rho is None or rho > best_rho):
                best_rho, best_epoch = rho, epoch
                best_params = {k: p.copy() for k, p in params.items()}
                if checkpoint_dir is not None:
                    save_params(best_params, os.path.join(checkpoint_dir, "best.json"), meta)
    if checkpoint_dir is not None:
        write_loss_log(history, os.path.join(checkpoint_dir, "train_log.csv"))
    return TrainResult(
        params=params,
        history=history,
        best_params=best_params,
        best_epoch=best_epoch,
        best_rho=best_rho,
    )


def _config_dict(cfg: RunConfig) -> dict:
    import dataclasses

    return {
        "scorer": dataclasses.asdict(cfg.scorer),
        "head": dataclasses.asdict(cfg.head),
        "loss": dataclasses.asdict(cfg.loss),
        "train": dataclasses.asdict(cfg.train),
    }


def write_loss_log(history: list[losses.LossBreakdown], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["epoch", "main", "rank", "stab", "kl", "total", "lambda_rank", "lambda_stab", "lambda_kl"]
        )
        for row in history:
            writer.writerow(
                [
                    row.epoch,
                    repr(row.main),
                    repr(row.rank),
                    repr(row.stab),
                    repr(row.kl),
                    repr(row.total),
                    repr(row.lambda_rank),
                    repr(row.lambda_stab),
                    repr(row.lambda_kl),
                ]
            )
