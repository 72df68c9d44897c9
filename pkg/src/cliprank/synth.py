"""Synthetic moving-sprite corpus.

Each video shows one bright comet-shaped sprite drifting across a dark
textured background at constant velocity.  The motion class is (direction,
speed bucket); classes are assigned round-robin so the corpus is exactly
balanced.  Start positions are chosen so the whole trajectory stays inside
the frame: no bounce ever occurs, which keeps temporal ranking well-posed
over every sampling window.

The sprite is an anisotropic Gaussian stretched along the velocity and
brightened toward its leading edge, with the stretch growing with speed the
way motion blur would.  That shape is deliberate: a single frame already
carries both direction (orientation plus head/tail asymmetry) and speed
bucket (length), so the class survives spatial pooling instead of living
only in sub-pixel temporal cues.  The background is a fixed vertical
luminance gradient, which hflips onto itself but rotates onto a distinct
orientation, anchoring the rotation pretext the way gravity anchors "up"
in natural footage; its low-frequency per-video texture is kept weak so
that telling videos apart leans on the sprite, not on memorized
backgrounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, DataError
from .rng import derive_rng
from .video import DatasetManifest, ManifestEntry, Video, save_video, write_manifest

SPRITE_AMPLITUDE = 0.55
BACKGROUND_BASE = 0.08
GRADIENT_STRENGTH = 0.16
NOISE_AMPLITUDE = 0.02
COMET_BLUR = 3.0  # along-motion stretch grows with speed, like motion blur
COMET_SKEW = 0.5  # leading edge up to 1.5x, trailing edge down to 0.5x


@dataclass
class SyntheticSpec:
    num_videos: int = 160
    frames_per_video: int = 52
    frame_h: int = 36
    frame_w: int = 36
    channels: int = 1
    num_motion_classes: int = 16
    sprite_size: float = 7.0
    velocity_min: float = 0.15
    velocity_max: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.num_videos < 1:
            raise ConfigError("num_videos must be >= 1")
        if self.frames_per_video < 2:
            # whether the frames cover a sampling span is checked where the
            # sampler geometry is actually known
            raise ConfigError("frames_per_video must be >= 2")
        if self.num_motion_classes < 1:
            raise ConfigError("num_motion_classes must be >= 1")
        if not (0 < self.velocity_min <= self.velocity_max):
            raise ConfigError("need 0 < velocity_min <= velocity_max")
        if self.channels < 1 or self.frame_h < 8 or self.frame_w < 8:
            raise ConfigError("frame geometry too small")

    @property
    def speed_buckets(self) -> int:
        return 2 if self.num_motion_classes % 2 == 0 and self.num_motion_classes >= 2 else 1

    @property
    def num_directions(self) -> int:
        return self.num_motion_classes // self.speed_buckets


def class_velocity(spec: SyntheticSpec, motion_class: int) -> tuple:
    """(vy, vx) in pixels/frame for a motion class."""
    if not 0 <= motion_class < spec.num_motion_classes:
        raise ConfigError(f"motion class {motion_class} out of range")
    direction = motion_class % spec.num_directions
    bucket = motion_class // spec.num_directions
    if spec.speed_buckets == 1:
        speed = 0.5 * (spec.velocity_min + spec.velocity_max)
    else:
        speed = spec.velocity_min + bucket * (spec.velocity_max - spec.velocity_min) / (
            spec.speed_buckets - 1
        )
    angle = 2.0 * math.pi * direction / spec.num_directions
    return speed * math.sin(angle), speed * math.cos(angle)


def _background(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    h, w = spec.frame_h, spec.frame_w
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    bg = BACKGROUND_BASE + GRADIENT_STRENGTH * (yy / max(h - 1, 1))
    # few random low-frequency cosines: smooth, deterministic, platform-stable
    for _ in range(3):
        fy, fx = rng.uniform(0.3, 1.5, size=2) / max(h, w)
        phase = rng.uniform(0, 2 * math.pi)
        amp = rng.uniform(0.3, 1.0) * NOISE_AMPLITUDE
        bg = bg + amp * np.cos(2 * math.pi * (fy * yy + fx * xx) + phase)
    return bg.astype(np.float32)


def render_video(spec: SyntheticSpec, index: int) -> Video:
    """Render video ``index`` of the corpus; pure function of (spec, index)."""
    rng = derive_rng(spec.seed, "video", index)
    motion_class = index % spec.num_motion_classes
    vy, vx = class_velocity(spec, motion_class)
    n = spec.frames_per_video
    sigma_across = spec.sprite_size / 4.0
    speed = math.hypot(vy, vx)
    sigma_along = sigma_across * (1.0 + COMET_BLUR * speed)
    # the stretched comet reaches ~2.5 along-motion sigmas from its center
    margin = 2.5 * sigma_along + 1.0

    def start_range(v: float, size: int) -> tuple:
        lo, hi = margin, size - 1 - margin
        travel = v * (n - 1)
        if travel >= 0:
            hi -= travel
        else:
            lo -= travel
        if lo > hi:
            raise DataError(
                f"trajectory does not fit: frame extent {size} cannot hold "
                f"|travel| {abs(travel):.1f} plus margins {margin:.1f}"
            )
        return lo, hi

    y_lo, y_hi = start_range(vy, spec.frame_h)
    x_lo, x_hi = start_range(vx, spec.frame_w)
    y0 = rng.uniform(y_lo, y_hi)
    x0 = rng.uniform(x_lo, x_hi)

    bg = _background(spec, rng)
    uy, ux = vy / speed, vx / speed
    yy, xx = np.meshgrid(
        np.arange(spec.frame_h, dtype=np.float64),
        np.arange(spec.frame_w, dtype=np.float64),
        indexing="ij",
    )
    frames = np.empty((n, spec.channels, spec.frame_h, spec.frame_w), dtype=np.float32)
    for t in range(n):
        cy, cx = y0 + vy * t, x0 + vx * t
        u = (yy - cy) * uy + (xx - cx) * ux  # along motion; positive is ahead
        w = (xx - cx) * uy - (yy - cy) * ux
        body = np.exp(-(u**2 / (2.0 * sigma_along**2) + w**2 / (2.0 * sigma_across**2)))
        blob = SPRITE_AMPLITUDE * body * (1.0 + COMET_SKEW * np.tanh(u / sigma_along))
        frame = np.clip(bg + blob, 0.0, 1.0).astype(np.float32)
        frames[t] = frame[None, :, :]
    return Video(frames=frames, id=f"video_{index:04d}", motion_class=motion_class)


def generate_synthetic_dataset(spec: SyntheticSpec, out_dir, split: str = "train") -> DatasetManifest:
    """Render the corpus to ``out_dir`` and write its manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(spec.num_videos):
        video = render_video(spec, i)
        name = f"{video.id}.skt"
        save_video(video, out / name)
        entries.append(
            ManifestEntry(
                path=name,
                n=video.frames.shape[0],
                c=video.frames.shape[1],
                h=video.frames.shape[2],
                w=video.frames.shape[3],
                motion_class=video.motion_class,
            )
        )
    manifest = DatasetManifest(split=split, seed=spec.seed, entries=entries)
    write_manifest(manifest, out / "manifest.json")
    return manifest


def sprite_centroid(frame: np.ndarray, window: int = 9) -> tuple:
    """Estimate the sprite center of a (C, H, W) or (H, W) frame.

    Peak pixel first, then an intensity-weighted centroid over a window
    around it with the local minimum subtracted; robust to the background
    gradient for any sprite speed.
    """
    img = frame.mean(axis=0) if frame.ndim == 3 else frame
    h, w = img.shape
    peak = np.unravel_index(int(np.argmax(img)), img.shape)
    half = window // 2
    y_lo, y_hi = max(0, peak[0] - half), min(h, peak[0] + half + 1)
    x_lo, x_hi = max(0, peak[1] - half), min(w, peak[1] + half + 1)
    patch = img[y_lo:y_hi, x_lo:x_hi].astype(np.float64)
    weights = patch - patch.min()
    total = weights.sum()
    if total <= 0:
        return float(peak[0]), float(peak[1])
    ys, xs = np.meshgrid(np.arange(y_lo, y_hi), np.arange(x_lo, x_hi), indexing="ij")
    return float((weights * ys).sum() / total), float((weights * xs).sum() / total)
