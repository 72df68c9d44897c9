"""The scoring function and the three loss terms, composed into one objective.

A target (or negative) is scored against the context by the mean per-cell
cosine similarity of their feature grids.  The rank term demands each
nearer-future target out-score every farther one by a margin; the
contrastive term demands every target out-score the mean negative score by a
margin; the rotation term is the auxiliary 4-way cross-entropy.  Enabled
terms are summed with unit weights, and batches average per-example losses.

``rank_loss`` and ``contrastive_loss`` each have two routes.  Given a Tensor
they build the differentiable vectorized graph used in training.  Given a
plain sequence of floats they evaluate the definitional pair scan in float64,
accumulating terms in (i, then j) order — reports and tests rely on that
fixed evaluation order being reproducible bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .encoders import (
    EncoderConfig,
    ParamSet,
    encode_context,
    encode_target,
    predict_rotation,
)
from .exceptions import ConfigError, DataError

METRIC_KEYS = (
    "loss_total",
    "loss_rank",
    "loss_contrastive",
    "loss_rotation",
    "mean_target_score",
    "mean_negative_score",
)


@dataclass(frozen=True)
class LossConfig:
    delta_rank: float = 0.1
    delta_neg: float = 0.1
    enable_rank: bool = True
    enable_contrastive: bool = True
    enable_rotation: bool = True

    def __post_init__(self):
        if self.delta_rank < 0 or self.delta_neg < 0:
            raise ConfigError("margins must be >= 0")
        if not (self.enable_rank or self.enable_contrastive or self.enable_rotation):
            raise ConfigError("at least one loss term must be enabled")


@dataclass
class ScoreSet:
    """Scores of one example: M ordered targets plus the negatives."""

    target_scores: list = field(default_factory=list)
    negative_scores: list = field(default_factory=list)


def score(h, z) -> ad.Tensor:
    """Mean per-cell cosine between two (C, H, W) grids; scalar in [-1, 1]."""
    return ad.cell_cosine(h, z).mean()


def score_value(h, z) -> float:
    with ad.no_grad():
        return score(h, z).item()


def _pair_scores(h_grids: ad.Tensor, z_grids: ad.Tensor) -> ad.Tensor:
    """Row-wise scores of aligned (B, C, H, W) grid batches -> (B,)."""
    return ad.cell_cosine(h_grids, z_grids).mean(axis=(-2, -1))


def rank_loss(target_scores, delta_rank: float):
    """Hinge rank loss over all ordered pairs.

    Tensor input -> differentiable scalar Tensor; plain floats -> float via
    the definitional scan sum_{i<j} max(0, (s_j - s_i) + delta).
    """
    if isinstance(target_scores, ad.Tensor):
        m = target_scores.shape[0]
        if target_scores.ndim != 1 or m < 2:
            raise ValueError(f"need a vector of >= 2 scores, got shape {target_scores.shape}")
        return _rank_hinge(target_scores.reshape(1, m), delta_rank).mean()
    s = [float(v) for v in target_scores]
    if len(s) < 2:
        raise ValueError(f"need >= 2 scores, got {len(s)}")
    acc = 0.0
    for i in range(len(s)):
        for j in range(i + 1, len(s)):
            acc += max(0.0, (s[j] - s[i]) + delta_rank)
    return acc


def _rank_hinge(st: ad.Tensor, delta_rank: float) -> ad.Tensor:
    """Per-example rank hinge sums for (B, M) score rows -> (B,)."""
    b, m = st.shape
    diff = st.reshape(b, 1, m) - st.reshape(b, m, 1)  # [b, i, j] = s_j - s_i
    hinge = ad.relu(diff + delta_rank)
    mask = np.triu(np.ones((1, m, m)), k=1)
    return (hinge * mask).sum(axis=(1, 2))


def contrastive_loss(target_scores, negative_scores, delta_neg: float):
    """Hinge of each target against the mean negative score.

    Tensor inputs -> differentiable scalar Tensor; plain floats -> float via
    the definitional scan sum_i max(0, (mean(neg) - s_i) + delta).
    """
    if isinstance(target_scores, ad.Tensor):
        sn = ad.as_tensor(negative_scores)
        if sn.ndim != 1 or sn.shape[0] < 1:
            raise ValueError("need >= 1 negative score")
        m = target_scores.shape[0]
        return _contrastive_hinge(
            target_scores.reshape(1, m), sn.reshape(1, sn.shape[0]), delta_neg
        ).mean()
    s = [float(v) for v in target_scores]
    neg = [float(v) for v in negative_scores]
    if not neg:
        raise ValueError("need >= 1 negative score")
    mean_neg = 0.0
    for v in neg:
        mean_neg += v
    mean_neg /= len(neg)
    acc = 0.0
    for v in s:
        acc += max(0.0, (mean_neg - v) + delta_neg)
    return acc


def _contrastive_hinge(st: ad.Tensor, sn: ad.Tensor, delta_neg: float) -> ad.Tensor:
    """Per-example contrastive hinge sums for (B, M)/(B, Mn) rows -> (B,)."""
    mean_neg = sn.mean(axis=1, keepdims=True)
    return ad.relu((mean_neg - st) + delta_neg).sum(axis=1)


def rotation_loss(rotation_logits, rotation_labels) -> ad.Tensor:
    """Mean 4-way cross-entropy over the rotated targets."""
    loss, _ = ad.softmax_cross_entropy(rotation_logits, rotation_labels)
    return loss


def _check_clip_lengths(example) -> None:
    if example.targets.shape[1] != 1 or example.negatives.shape[1] != 1:
        raise DataError("target encoder requires single-frame clips")


def _replicate_rows(grid: ad.Tensor, times: int) -> ad.Tensor:
    """(B, C, H, W) -> (B*times, C, H, W) with each row repeated in place."""
    b, c, h, w = grid.shape
    ones = np.ones((1, times, 1, 1, 1))
    rep = grid.reshape(b, 1, c, h, w) * ones
    return rep.reshape(b * times, c, h, w)


def batch_loss(examples, params: ParamSet, enc_cfg: EncoderConfig, cfg: LossConfig, taps=None):
    """Average the objective over a batch of examples.

    Returns (total, breakdown, score_rows) where ``total`` is the scalar loss
    Tensor, ``breakdown`` maps metric names to floats (disabled terms log
    0.0), and ``score_rows`` is the pair (target (B, M), negative (B, Mn))
    score matrices as ndarrays.
    """
    if not examples:
        raise ValueError("empty batch")
    for ex in examples:
        _check_clip_lengths(ex)
    b = len(examples)
    m = examples[0].targets.shape[0]
    mn = examples[0].negatives.shape[0]

    contexts = np.stack([ex.context for ex in examples])
    h_grids = encode_context(params, enc_cfg, contexts, taps=taps)

    target_frames = np.stack([ex.targets[:, 0] for ex in examples]).reshape(
        (b * m,) + examples[0].targets.shape[2:]
    )
    neg_frames = np.stack([ex.negatives[:, 0] for ex in examples]).reshape(
        (b * mn,) + examples[0].negatives.shape[2:]
    )
    z_targets = encode_target(params, enc_cfg, target_frames, taps=taps)
    z_negs = encode_target(params, enc_cfg, neg_frames, taps=taps)

    st = _pair_scores(_replicate_rows(h_grids, m), z_targets).reshape(b, m)
    sn = _pair_scores(_replicate_rows(h_grids, mn), z_negs).reshape(b, mn)

    terms = []
    breakdown = dict.fromkeys(METRIC_KEYS, 0.0)
    if cfg.enable_rank:
        term = _rank_hinge(st, cfg.delta_rank).mean()
        breakdown["loss_rank"] = term.item()
        terms.append(term)
    if cfg.enable_contrastive:
        term = _contrastive_hinge(st, sn, cfg.delta_neg).mean()
        breakdown["loss_contrastive"] = term.item()
        terms.append(term)
    if cfg.enable_rotation:
        rot_frames = np.stack([ex.rotation_inputs for ex in examples]).reshape(
            (b * m,) + examples[0].rotation_inputs.shape[1:]
        )
        labels = np.concatenate([ex.rotation_labels for ex in examples])
        logits = predict_rotation(params, encode_target(params, enc_cfg, rot_frames, taps=taps))
        term = rotation_loss(logits, labels)
        breakdown["loss_rotation"] = term.item()
        terms.append(term)

    total = terms[0]
    for term in terms[1:]:
        total = total + term
    breakdown["loss_total"] = total.item()
    breakdown["mean_target_score"] = float(np.mean(st.data))
    breakdown["mean_negative_score"] = float(np.mean(sn.data))
    return total, breakdown, (st.data.copy(), sn.data.copy())


def example_loss(example, params: ParamSet, enc_cfg: EncoderConfig, cfg: LossConfig, taps=None):
    """The objective for a single example.

    Returns (total, breakdown, ScoreSet).  Semantically ``batch_loss`` over a
    batch of one; kept separate so tests and the gradient checker can reason
    about one example at a time.
    """
    total, breakdown, (st, sn) = batch_loss([example], params, enc_cfg, cfg, taps=taps)
    scores = ScoreSet(
        target_scores=[float(v) for v in st[0]],
        negative_scores=[float(v) for v in sn[0]],
    )
    return total, breakdown, scores
