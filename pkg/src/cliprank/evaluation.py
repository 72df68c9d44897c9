"""Ranking metrics, held-out evaluation, classifier transfer, heatmaps.

Evaluation never augments: frames get the deterministic center crop and no
flip or reversal, so a report is a pure function of (weights, data, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import skt
from .encoders import (
    EncoderConfig,
    ParamSet,
    classify,
    encode_context,
    encode_target,
    num_classes_of,
)
from .exceptions import ConfigError, DataError
from .objectives import _pair_scores, _replicate_rows
from .optim import Adam, AdamConfig, Schedule, lr_at_epoch
from .rng import derive_rng
from .sampling import (
    AugmentationSpec,
    AugmentRecord,
    SampleSpec,
    apply_record,
    center_record,
    make_eval_example,
)
from .synth import sprite_centroid

_CHUNK = 16  # examples scored per forward pass


def pairwise_ranking_accuracy(scores) -> float:
    """Fraction of ordered pairs ranked correctly; a tied pair counts 0.5.

    ``scores[i]`` belongs to the i-th future clip, so "correct" for i < j
    means scores[i] > scores[j]: nearer futures must score higher.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size < 2:
        raise ValueError("need a 1-d vector of at least two scores")
    correct = 0.0
    pairs = 0
    for i in range(s.size - 1):
        for j in range(i + 1, s.size):
            if s[i] > s[j]:
                correct += 1.0
            elif s[i] == s[j]:
                correct += 0.5
            pairs += 1
    return correct / pairs


def kendall_tau(scores) -> float:
    """Tau-b correlation between the scores and ideal temporal order.

    The ideal ranking is strictly decreasing, so concordant means
    scores[i] > scores[j] for i < j.  Tie correction only involves the
    score side (temporal ranks are distinct); with every score tied the
    denominator vanishes and the correlation is defined as 0.0.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size < 2:
        raise ValueError("need a 1-d vector of at least two scores")
    conc = disc = tied = 0
    for i in range(s.size - 1):
        for j in range(i + 1, s.size):
            if s[i] > s[j]:
                conc += 1
            elif s[i] < s[j]:
                disc += 1
            else:
                tied += 1
    n0 = conc + disc + tied
    if tied == n0:
        return 0.0
    if tied == 0:
        # algebraically (conc - disc)/n0; this evaluation order shares its
        # one rounding with pairwise accuracy, so tau == 2*acc - 1 holds
        # bit-exactly rather than merely mathematically
        return 2.0 * (conc / n0) - 1.0
    return (conc - disc) / math.sqrt((n0 - tied) * n0)


@dataclass
class ExampleScores:
    index: int
    video_id: str
    t: int
    target_scores: list
    negative_scores: list
    pairwise_accuracy: float
    tau: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class RankingReport:
    n_examples: int
    pairwise_accuracy: float
    kendall_tau: float
    per_example: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "n_examples": self.n_examples,
            "pairwise_accuracy": self.pairwise_accuracy,
            "kendall_tau": self.kendall_tau,
            "per_example": [ex.to_dict() for ex in self.per_example],
        }


def model_scorer(params: ParamSet, enc_cfg: EncoderConfig):
    """Batched target/negative scorer backed by the two encoders."""

    def scorer(examples):
        b = len(examples)
        m = examples[0].targets.shape[0]
        mn = examples[0].negatives.shape[0]
        with ad.no_grad():
            h = encode_context(
                params, enc_cfg, np.stack([ex.context for ex in examples])
            )
            zt = encode_target(
                params,
                enc_cfg,
                np.stack([ex.targets[:, 0] for ex in examples]).reshape(
                    (b * m,) + examples[0].targets.shape[2:]
                ),
            )
            zn = encode_target(
                params,
                enc_cfg,
                np.stack([ex.negatives[:, 0] for ex in examples]).reshape(
                    (b * mn,) + examples[0].negatives.shape[2:]
                ),
            )
            st = _pair_scores(_replicate_rows(h, m), zt).reshape(b, m)
            sn = _pair_scores(_replicate_rows(h, mn), zn).reshape(b, mn)
        return st.data.copy(), sn.data.copy()

    return scorer


def centroid_scorer(prior_frames: int = 1):
    """Oracle scorer: rank targets by sprite proximity to the context's end.

    The sprite never reverses inside an evaluation example, so distance from
    its position in the last context frame grows monotonically with the
    temporal gap; scoring by negative distance yields a perfect ranking
    without looking at any time index.
    """

    def scorer(examples):
        st = []
        sn = []
        for ex in examples:
            cy, cx = sprite_centroid(ex.context[-1, 0])
            st.append(
                [
                    -math.hypot(*(np.subtract((cy, cx), sprite_centroid(f[0, 0]))))
                    for f in ex.targets
                ]
            )
            sn.append([0.0] * ex.negatives.shape[0])
        return np.asarray(st), np.asarray(sn)

    return scorer


def evaluate_ranking(
    videos,
    sample_spec: SampleSpec,
    aug_spec: AugmentationSpec,
    *,
    n_examples: int,
    seed: int,
    scorer,
) -> RankingReport:
    """Score fresh center-cropped examples from held-out videos."""
    if not videos:
        raise DataError("held-out set is empty")
    if n_examples < 1:
        raise ConfigError("n_examples must be >= 1")

    examples = []
    for i in range(n_examples):
        rng = derive_rng(seed, "eval", i)
        idx = int(rng.integers(len(videos)))
        examples.append(make_eval_example(videos, idx, sample_spec, aug_spec, rng))

    per = []
    for lo in range(0, n_examples, _CHUNK):
        chunk = examples[lo : lo + _CHUNK]
        st, sn = scorer(chunk)
        for off, ex in enumerate(chunk):
            row = st[off]
            per.append(
                ExampleScores(
                    index=lo + off,
                    video_id=ex.video_id,
                    t=ex.t,
                    target_scores=[float(v) for v in row],
                    negative_scores=[float(v) for v in sn[off]],
                    pairwise_accuracy=pairwise_ranking_accuracy(row),
                    tau=kendall_tau(row),
                )
            )
    per.sort(key=lambda r: r.index)
    return RankingReport(
        n_examples=n_examples,
        pairwise_accuracy=float(np.mean([r.pairwise_accuracy for r in per])),
        kendall_tau=float(np.mean([r.tau for r in per])),
        per_example=per,
    )


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def sliding_window_predict(params: ParamSet, enc_cfg: EncoderConfig, frames, aug_spec: AugmentationSpec):
    """Classify a full video by averaging softmax over non-overlapping windows.

    Uses floor(N / window) windows; leftover frames at the end are dropped.
    Returns (predicted class, averaged probabilities); argmax resolves ties
    toward the lowest class index.
    """
    frames = np.asarray(frames)
    window = enc_cfg.context_len
    n = frames.shape[0]
    if n < window:
        raise DataError(f"video has {n} frames, the classifier window needs {window}")
    rec = center_record(frames.shape[-2], frames.shape[-1], aug_spec)
    clips = np.stack(
        [
            apply_record(
                frames[w * window : (w + 1) * window], rec, aug_spec.crop_h, aug_spec.crop_w
            )
            for w in range(n // window)
        ]
    )
    with ad.no_grad():
        logits = classify(params, encode_context(params, enc_cfg, clips))
    probs = _softmax(logits.data.astype(np.float64))
    avg = probs.mean(axis=0)
    return int(np.argmax(avg)), avg


@dataclass
class ProbeReport:
    mode: str
    accuracy: float
    per_class_accuracy: list
    n_test: int
    predictions: list = field(default_factory=list)  # (video_id, label, pred)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "accuracy": self.accuracy,
            "per_class_accuracy": self.per_class_accuracy,
            "n_test": self.n_test,
            "predictions": [
                {"video_id": v, "label": y, "pred": p} for v, y, p in self.predictions
            ],
        }


def _check_labeled(videos, what: str):
    for v in videos:
        if v.motion_class is None:
            raise DataError(f"{what} video {v.id} has no motion label")


def _finetune_batch(videos, order, spec: AugmentationSpec, window: int, rng) -> tuple:
    # random window start + random crop; no flip (it would scramble labels)
    clips = []
    labels = []
    for idx in order:
        video = videos[int(idx)]
        n, _, h, w = video.frames.shape
        start = int(rng.integers(0, n - window + 1))
        rec = AugmentRecord(
            flip=False,
            crop_y=int(rng.integers(0, h - spec.crop_h + 1)),
            crop_x=int(rng.integers(0, w - spec.crop_w + 1)),
        )
        clips.append(
            apply_record(video.frames[start : start + window], rec, spec.crop_h, spec.crop_w)
        )
        labels.append(video.motion_class)
    return np.stack(clips), np.asarray(labels, dtype=np.int64)


def finetune(
    params: ParamSet,
    enc_cfg: EncoderConfig,
    train_videos,
    test_videos,
    *,
    mode: str,
    schedule: Schedule,
    adam_cfg: AdamConfig,
    epochs: int,
    batch_size: int,
    seed: int,
    aug_spec: AugmentationSpec,
    log_fn=None,
) -> ProbeReport:
    """Train the classification head (probe) or head+encoder (full) on labels.

    Probe mode treats the context encoder as a fixed feature extractor: its
    weights take part in no graph and remain bit-identical.  Windows are
    ``context_len`` frames with a random crop, drawn fresh each step.
    """
    if mode not in ("probe", "full"):
        raise ConfigError(f"finetune mode must be 'probe' or 'full', got {mode!r}")
    if not train_videos:
        raise DataError("no training videos for finetuning")
    if not test_videos:
        raise DataError("held-out set is empty")
    _check_labeled(train_videos, "training")
    _check_labeled(test_videos, "held-out")
    if batch_size > len(train_videos):
        raise ConfigError("batch_size exceeds the number of training videos")

    window = enc_cfg.context_len
    trained = params.subset("cls.") if mode == "probe" else params.subset("g.", "cls.")
    opt = Adam(trained, adam_cfg)
    steps_per_epoch = len(train_videos) // batch_size

    for epoch in range(epochs):
        rng = derive_rng(seed, "finetune-epoch", epoch)
        order = rng.permutation(len(train_videos))
        lr = lr_at_epoch(schedule, epoch)
        for s in range(steps_per_epoch):
            batch = order[s * batch_size : (s + 1) * batch_size]
            clips, labels = _finetune_batch(train_videos, batch, aug_spec, window, rng)
            for _, t in trained:
                t.zero_grad()
            if mode == "probe":
                with ad.no_grad():
                    h = encode_context(params, enc_cfg, clips)
            else:
                h = encode_context(params, enc_cfg, clips)
            logits = classify(params, h)
            loss, _ = ad.softmax_cross_entropy(logits, labels)
            loss.backward()
            opt.step(lr, weight_decay=schedule.weight_decay)
            if log_fn is not None:
                log_fn(
                    {
                        "epoch": epoch,
                        "step": epoch * steps_per_epoch + s,
                        "lr": lr,
                        "loss_cls": loss.item(),
                    }
                )

    return evaluate_classifier(params, enc_cfg, test_videos, aug_spec, mode=mode)


def evaluate_classifier(
    params: ParamSet,
    enc_cfg: EncoderConfig,
    test_videos,
    aug_spec: AugmentationSpec,
    *,
    mode: str = "probe",
) -> ProbeReport:
    if not test_videos:
        raise DataError("held-out set is empty")
    _check_labeled(test_videos, "held-out")
    num_classes = num_classes_of(params)
    hits = 0
    per_class_hit = np.zeros(num_classes, dtype=np.int64)
    per_class_n = np.zeros(num_classes, dtype=np.int64)
    predictions = []
    for video in test_videos:
        pred, _ = sliding_window_predict(params, enc_cfg, video.frames, aug_spec)
        label = int(video.motion_class)
        if label >= num_classes:
            raise DataError(
                f"video {video.id} has label {label}, head only has {num_classes} classes"
            )
        per_class_n[label] += 1
        if pred == label:
            hits += 1
            per_class_hit[label] += 1
        predictions.append((video.id, label, pred))
    per_class = [
        float(per_class_hit[c] / per_class_n[c]) if per_class_n[c] else 0.0
        for c in range(num_classes)
    ]
    return ProbeReport(
        mode=mode,
        accuracy=hits / len(test_videos),
        per_class_accuracy=per_class,
        n_test=len(test_videos),
        predictions=predictions,
    )


def heatmap_grid(h, z) -> np.ndarray:
    """Per-cell cosine map between two latent grids; mean equals the score."""
    with ad.no_grad():
        return ad.cell_cosine(ad.as_tensor(h), ad.as_tensor(z)).data.copy()


def upsample_nearest(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    gh, gw = grid.shape
    ys = np.minimum((np.arange(out_h) * gh) // out_h, gh - 1)
    xs = np.minimum((np.arange(out_w) * gw) // out_w, gw - 1)
    return grid[np.ix_(ys, xs)]


def write_pgm(path, image: np.ndarray) -> None:
    """8-bit binary PGM from values in [-1, 1]."""
    pix = np.clip(np.round((image + 1.0) * 127.5), 0, 255).astype(np.uint8)
    h, w = pix.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(pix.tobytes())


def export_heatmap(grid: np.ndarray, frame_h: int, frame_w: int, out_prefix) -> dict:
    """Write the raw grid (SKT1) and an upsampled grayscale PGM rendering."""
    out_prefix = Path(out_prefix)
    skt_path = out_prefix.with_suffix(".skt")
    pgm_path = out_prefix.with_suffix(".pgm")
    skt.write_tensor(skt_path, grid.astype(np.float32))
    write_pgm(pgm_path, upsample_nearest(grid.astype(np.float64), frame_h, frame_w))
    return {"skt": skt_path, "pgm": pgm_path}


def centroid_cell(frame: np.ndarray, grid_h: int, grid_w: int) -> tuple:
    """Which heatmap cell the sprite centroid falls in for one (h, w) frame."""
    cy, cx = sprite_centroid(frame)
    h, w = frame.shape
    gy = min(int(cy * grid_h / h), grid_h - 1)
    gx = min(int(cx * grid_w / w), grid_w - 1)
    return gy, gx


def saliency_rate(
    params: ParamSet,
    enc_cfg: EncoderConfig,
    videos,
    sample_spec: SampleSpec,
    aug_spec: AugmentationSpec,
    *,
    n_examples: int,
    seed: int,
) -> float:
    """Fraction of examples whose hottest heatmap cell holds the sprite.

    Diagnostic only: compares the context-vs-first-target cosine map's argmax
    cell with the cell containing the sprite centroid in that target frame.
    """
    if not videos:
        raise DataError("held-out set is empty")
    hits = 0
    for i in range(n_examples):
        rng = derive_rng(seed, "saliency", i)
        idx = int(rng.integers(len(videos)))
        ex = make_eval_example(videos, idx, sample_spec, aug_spec, rng)
        with ad.no_grad():
            h = encode_context(params, enc_cfg, ex.context)
            z = encode_target(params, enc_cfg, ex.targets[0, 0])
        grid = heatmap_grid(h, z)
        want = centroid_cell(ex.targets[0, 0, 0], *grid.shape)
        got = np.unravel_index(int(np.argmax(grid)), grid.shape)
        hits += got == want
    return hits / n_examples
