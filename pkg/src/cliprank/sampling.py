"""Sampling of context, targets, negatives, and augmentations.

One training example is built from a video as follows, consuming a single
rng stream in this fixed order so example construction is reproducible:

1. reversal draw: with probability ``reverse_prob`` the whole video is
   reversed before any seeking;
2. seek: t uniform over the valid range; context is K contiguous frames
   [t, t+K); target j (1-based) starts at t + K - 1 + j*r and spans d frames;
3. flip draw and crop offsets: one decision each per example, applied
   identically to context, targets, and negatives;
4. rotation labels for the auxiliary task;
5. negatives: frames from other videos, (uniform video, uniform frame index)
   per negative.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, DataError
from .video import Video


@dataclass(frozen=True)
class SampleSpec:
    k: int = 16
    m: int = 8
    r: int = 4
    d: int = 1
    num_negatives: int | None = None

    def __post_init__(self):
        if self.k < 1 or self.m < 2 or self.r < 1 or self.d < 1:
            raise ConfigError(
                f"need k >= 1, m >= 2 (ranking needs pairs), r >= 1, d >= 1; "
                f"got k={self.k} m={self.m} r={self.r} d={self.d}"
            )
        if self.num_negatives is None:
            object.__setattr__(self, "num_negatives", self.m)
        elif self.num_negatives < 1:
            raise ConfigError("num_negatives must be >= 1")

    @property
    def span(self) -> int:
        """Frames consumed by one example: K + M*r + d - 1."""
        return self.k + self.m * self.r + self.d - 1

    @property
    def min_frames(self) -> int:
        return self.span + 1


@dataclass(frozen=True)
class AugmentationSpec:
    reverse_prob: float = 0.5
    hflip_prob: float = 0.5
    crop_h: int = 32
    crop_w: int = 32
    rotation_enabled: bool = True

    def __post_init__(self):
        for name in ("reverse_prob", "hflip_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must be in [0,1], got {p}")
        if self.crop_h < 1 or self.crop_w < 1:
            raise ConfigError("crop size must be positive")


@dataclass
class TrainingExample:
    context: np.ndarray          # (K, C, h, w)
    targets: np.ndarray          # (M, d, C, h, w), temporal order
    negatives: np.ndarray        # (num_negatives, d, C, h, w)
    rotation_inputs: np.ndarray  # (M, C, h, w)
    rotation_labels: np.ndarray  # (M,) in {0,1,2,3}
    t: int
    video_id: str
    negative_ids: list
    flip: bool
    crop_y: int
    crop_x: int
    reversed: bool


def seek_and_sample(video: Video, spec: SampleSpec, rng: np.random.Generator):
    """Draw t and cut (context, targets); returns uncropped full-size frames."""
    n = video.n
    if n < spec.min_frames:
        raise DataError(
            f"video {video.id}: {n} frames is too short for sampling; "
            f"need at least {spec.min_frames}"
        )
    t = int(rng.integers(0, n - spec.span))
    context = video.frames[t : t + spec.k]
    targets = np.stack(
        [
            video.frames[t + spec.k - 1 + j * spec.r :][: spec.d]
            for j in range(1, spec.m + 1)
        ]
    )
    return context, targets, t


def target_frame_indices(spec: SampleSpec, t: int) -> list:
    """First-frame index of each target clip for a seek at ``t``."""
    return [t + spec.k - 1 + j * spec.r for j in range(1, spec.m + 1)]


def sample_negatives(videos, exclude_video_id: str, spec: SampleSpec, rng: np.random.Generator):
    """num_negatives clips of d frames from videos other than the context's."""
    eligible = [v for v in videos if v.id != exclude_video_id]
    if not eligible:
        raise DataError("no negative source available: need at least 2 videos")
    clips, ids = [], []
    for _ in range(spec.num_negatives):
        v = eligible[int(rng.integers(0, len(eligible)))]
        if v.n < spec.d:
            raise DataError(f"video {v.id}: too short for a {spec.d}-frame negative")
        start = int(rng.integers(0, v.n - spec.d + 1))
        clips.append(v.frames[start : start + spec.d])
        ids.append(v.id)
    return np.stack(clips), ids


@dataclass(frozen=True)
class AugmentRecord:
    flip: bool
    crop_y: int
    crop_x: int


def _apply(frames: np.ndarray, rec: AugmentRecord, ch: int, cw: int) -> np.ndarray:
    out = frames[..., rec.crop_y : rec.crop_y + ch, rec.crop_x : rec.crop_x + cw]
    if rec.flip:
        out = out[..., ::-1]
    return np.ascontiguousarray(out)


def apply_record(frames: np.ndarray, rec: AugmentRecord, crop_h: int, crop_w: int) -> np.ndarray:
    """Apply a recorded crop/flip to frames of any leading shape."""
    return _apply(frames, rec, crop_h, crop_w)


def augment(context, targets, spec: AugmentationSpec, rng: np.random.Generator):
    """One flip decision + one crop window, applied to every frame alike."""
    h, w = context.shape[-2:]
    if spec.crop_h > h or spec.crop_w > w:
        raise ConfigError(f"crop {spec.crop_h}x{spec.crop_w} larger than frame {h}x{w}")
    flip = bool(rng.random() < spec.hflip_prob)
    crop_y = int(rng.integers(0, h - spec.crop_h + 1))
    crop_x = int(rng.integers(0, w - spec.crop_w + 1))
    rec = AugmentRecord(flip=flip, crop_y=crop_y, crop_x=crop_x)
    return (
        _apply(context, rec, spec.crop_h, spec.crop_w),
        _apply(targets, rec, spec.crop_h, spec.crop_w),
        rec,
    )


def center_record(frame_h: int, frame_w: int, spec: AugmentationSpec) -> AugmentRecord:
    if spec.crop_h > frame_h or spec.crop_w > frame_w:
        raise ConfigError(
            f"crop {spec.crop_h}x{spec.crop_w} larger than frame {frame_h}x{frame_w}"
        )
    return AugmentRecord(
        flip=False,
        crop_y=(frame_h - spec.crop_h) // 2,
        crop_x=(frame_w - spec.crop_w) // 2,
    )


def rotate_frame(frame: np.ndarray, k: int) -> np.ndarray:
    """Rotate a (C, h, w) frame counter-clockwise by k*90 degrees.

    One application maps pixel (row, col) to (w-1-col, row).
    """
    if not 0 <= k <= 3:
        raise ValueError(f"k must be in 0..3, got {k}")
    if k % 2 == 1 and frame.shape[-2] != frame.shape[-1]:
        raise ConfigError(
            f"odd quarter-turns need a square frame, got {frame.shape[-2]}x{frame.shape[-1]}"
        )
    return np.ascontiguousarray(np.rot90(frame, k=k, axes=(-2, -1)))


def make_example(
    videos,
    video_index: int,
    sample_spec: SampleSpec,
    aug_spec: AugmentationSpec,
    rng: np.random.Generator,
) -> TrainingExample:
    """Build one training example; rng draws follow the documented order."""
    video = videos[video_index]
    use_reversed = bool(rng.random() < aug_spec.reverse_prob)
    source = (
        Video(
            frames=np.ascontiguousarray(video.frames[::-1]),
            id=video.id,
            motion_class=video.motion_class,
        )
        if use_reversed
        else video
    )
    context, targets, t = seek_and_sample(source, sample_spec, rng)
    context, targets, rec = augment(context, targets, aug_spec, rng)

    if aug_spec.rotation_enabled:
        labels = rng.integers(0, 4, size=sample_spec.m)
    else:
        labels = np.zeros(sample_spec.m, dtype=np.int64)
    rotations = np.stack(
        [rotate_frame(targets[i, 0], int(labels[i])) for i in range(sample_spec.m)]
    )

    neg_clips, neg_ids = sample_negatives(videos, video.id, sample_spec, rng)
    negatives = _apply(neg_clips, rec, aug_spec.crop_h, aug_spec.crop_w)

    return TrainingExample(
        context=context,
        targets=targets,
        negatives=negatives,
        rotation_inputs=rotations,
        rotation_labels=np.asarray(labels, dtype=np.int64),
        t=t,
        video_id=video.id,
        negative_ids=neg_ids,
        flip=rec.flip,
        crop_y=rec.crop_y,
        crop_x=rec.crop_x,
        reversed=use_reversed,
    )


def make_eval_example(
    videos,
    video_index: int,
    sample_spec: SampleSpec,
    aug_spec: AugmentationSpec,
    rng: np.random.Generator,
) -> TrainingExample:
    """Evaluation-time example: no reversal, no flip, center crop only."""
    video = videos[video_index]
    context, targets, t = seek_and_sample(video, sample_spec, rng)
    rec = center_record(context.shape[-2], context.shape[-1], aug_spec)
    context = _apply(context, rec, aug_spec.crop_h, aug_spec.crop_w)
    targets = _apply(targets, rec, aug_spec.crop_h, aug_spec.crop_w)
    labels = np.zeros(sample_spec.m, dtype=np.int64)
    rotations = np.ascontiguousarray(targets[:, 0])
    neg_clips, neg_ids = sample_negatives(videos, video.id, sample_spec, rng)
    negatives = _apply(neg_clips, rec, aug_spec.crop_h, aug_spec.crop_w)
    return TrainingExample(
        context=context,
        targets=targets,
        negatives=negatives,
        rotation_inputs=rotations,
        rotation_labels=labels,
        t=t,
        video_id=video.id,
        negative_ids=neg_ids,
        flip=False,
        crop_y=rec.crop_y,
        crop_x=rec.crop_x,
        reversed=False,
    )
