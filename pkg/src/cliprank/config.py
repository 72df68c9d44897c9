"""Run configuration: one JSON document with fixed sections.

Sections: data, sample, augment, encoder, loss, optim, run.  A config file
may set any subset of keys; everything else comes from the defaults below.
Unknown sections or keys are rejected rather than ignored, since a typo that
silently falls back to a default is the worst failure mode a config system
can have.

The fingerprint covers every section that shapes the model or the data it
sees (plus the seed), and is stored in checkpoints so that a resume against
a different geometry fails loudly instead of loading garbage.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .encoders import EncoderConfig
from .exceptions import ConfigError
from .objectives import LossConfig
from .optim import AdamConfig, Schedule
from .rng import derive_rng
from .sampling import AugmentationSpec, SampleSpec
from .synth import SyntheticSpec

DEFAULTS: dict = {
    "data": {
        "train_videos": 160,
        "test_videos": 64,
        "frames_per_video": 52,
        "frame_h": 36,
        "frame_w": 36,
        "channels": 1,
        "num_motion_classes": 16,
        "sprite_size": 7.0,
        "velocity_min": 0.15,
        "velocity_max": 0.3,
    },
    "sample": {"k": 16, "m": 8, "r": 4, "d": 1, "num_negatives": None},
    "augment": {
        "reverse_prob": 0.5,
        "hflip_prob": 0.5,
        "crop_h": 32,
        "crop_w": 32,
        "rotation_enabled": True,
    },
    "encoder": {
        "frame_channels": 1,
        "frame_size": 32,
        "context_len": 16,
        "channels": [8, 16, 24, 32],
        "spatial_strides": [[2, 2], [2, 2], [2, 2], [1, 1]],
        "temporal_strides": [2, 2, 2, 2],
        "kernel": 3,
        "pad": 1,
    },
    "loss": {
        "delta_rank": 0.1,
        "delta_neg": 0.1,
        "enable_rank": True,
        "enable_contrastive": True,
        "enable_rotation": True,
    },
    "optim": {
        "adam": {
            "beta1": 0.9,
            "beta2": 0.999,
            "eps": 1e-8,
            "decoupled_weight_decay": True,
        },
        "pretrain": {
            "base_lr": 3e-4,
            "decay_factor": 0.1,
            "decay_every": 200,
            "decay_until": None,
            "weight_decay": 1e-7,
        },
        "finetune": {
            "base_lr": 5e-4,
            "decay_factor": 0.5,
            "decay_every": 15,
            "decay_until": 60,
            "weight_decay": 1e-2,
        },
    },
    "run": {
        "seed": 0,
        "epochs": 30,
        "batch_size": 16,
        "checkpoint_every": 0,
        "eval_examples": 512,
        "finetune_epochs": 60,
        "finetune_batch_size": 8,
    },
}

# sections hashed into the fingerprint; "run" stays out except for the seed
_FINGERPRINT_SECTIONS = ("data", "sample", "augment", "encoder", "loss", "optim")


def default_config() -> dict:
    return copy.deepcopy(DEFAULTS)


def _merge(base: dict, override: dict, path: str) -> None:
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        have = base[key]
        if isinstance(have, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where!r} must be an object")
            _merge(have, value, where)
            continue
        if value is not None and have is not None:
            # bool is an int subclass, so check it before the numeric cases
            if isinstance(have, bool) != isinstance(value, bool):
                if isinstance(have, bool):
                    raise ConfigError(f"{where!r} must be a boolean")
                raise ConfigError(
                    f"{where!r} must be an integer"
                    if isinstance(have, int)
                    else f"{where!r} must be a number"
                )
            if isinstance(have, bool):
                pass
            elif isinstance(have, int):
                if not isinstance(value, int):
                    raise ConfigError(f"{where!r} must be an integer")
            elif isinstance(have, float):
                if not isinstance(value, (int, float)):
                    raise ConfigError(f"{where!r} must be a number")
                value = float(value)
            elif isinstance(have, str) and not isinstance(value, str):
                raise ConfigError(f"{where!r} must be a string")
            elif isinstance(have, list) and not isinstance(value, list):
                raise ConfigError(f"{where!r} must be a list")
        base[key] = copy.deepcopy(value)


@dataclass(frozen=True)
class DataConfig:
    train_videos: int
    test_videos: int
    frames_per_video: int
    frame_h: int
    frame_w: int
    channels: int
    num_motion_classes: int
    sprite_size: float
    velocity_min: float
    velocity_max: float

    def spec(self, split: str, seed: int) -> SyntheticSpec:
        """Synthetic-corpus spec for one split, with a split-specific seed."""
        if split not in ("train", "test"):
            raise ConfigError(f"unknown split {split!r}")
        num = self.train_videos if split == "train" else self.test_videos
        split_seed = int(derive_rng(seed, "data", split).integers(1 << 63))
        return SyntheticSpec(
            num_videos=num,
            frames_per_video=self.frames_per_video,
            frame_h=self.frame_h,
            frame_w=self.frame_w,
            channels=self.channels,
            num_motion_classes=self.num_motion_classes,
            sprite_size=self.sprite_size,
            velocity_min=self.velocity_min,
            velocity_max=self.velocity_max,
            seed=split_seed,
        )


@dataclass(frozen=True)
class RunConfig:
    seed: int
    epochs: int
    batch_size: int
    checkpoint_every: int
    eval_examples: int
    finetune_epochs: int
    finetune_batch_size: int


@dataclass(frozen=True)
class Config:
    raw: dict
    data: DataConfig
    sample: SampleSpec
    augment: AugmentationSpec
    encoder: EncoderConfig
    loss: LossConfig
    adam: AdamConfig
    pretrain_schedule: Schedule
    finetune_schedule: Schedule
    run: RunConfig


def _as_pairs(value, where: str) -> tuple:
    out = []
    for item in value:
        if not (isinstance(item, (list, tuple)) and len(item) == 2):
            raise ConfigError(f"{where!r} entries must be [h, w] pairs")
        out.append((int(item[0]), int(item[1])))
    return tuple(out)


def build_config(raw: dict) -> Config:
    """Turn a merged raw dict into validated component configs."""
    try:
        data = DataConfig(**raw["data"])
        sample = SampleSpec(**raw["sample"])
        augment = AugmentationSpec(**raw["augment"])
        enc_raw = dict(raw["encoder"])
        enc_raw["channels"] = tuple(int(c) for c in enc_raw["channels"])
        enc_raw["spatial_strides"] = _as_pairs(enc_raw["spatial_strides"], "encoder.spatial_strides")
        enc_raw["temporal_strides"] = tuple(int(s) for s in enc_raw["temporal_strides"])
        encoder = EncoderConfig(**enc_raw)
        loss = LossConfig(**raw["loss"])
        adam = AdamConfig(**raw["optim"]["adam"])
        pre = Schedule(**raw["optim"]["pretrain"])
        fin = Schedule(**raw["optim"]["finetune"])
        run = RunConfig(**raw["run"])
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc

    if encoder.frame_size != augment.crop_h or encoder.frame_size != augment.crop_w:
        raise ConfigError(
            f"encoder.frame_size {encoder.frame_size} must equal the augment crop "
            f"({augment.crop_h}x{augment.crop_w})"
        )
    if encoder.frame_channels != data.channels:
        raise ConfigError("encoder.frame_channels must equal data.channels")
    if encoder.context_len != sample.k:
        raise ConfigError(
            f"encoder.context_len {encoder.context_len} must equal sample.k {sample.k}"
        )
    if augment.crop_h > data.frame_h or augment.crop_w > data.frame_w:
        raise ConfigError("augment crop is larger than the data frames")
    if data.frames_per_video < sample.min_frames:
        raise ConfigError(
            f"data.frames_per_video {data.frames_per_video} is below the "
            f"{sample.min_frames} frames sampling needs"
        )
    if run.epochs < 1 or run.batch_size < 1:
        raise ConfigError("run.epochs and run.batch_size must be >= 1")
    if run.batch_size > data.train_videos:
        raise ConfigError("run.batch_size exceeds the number of training videos")
    if data.train_videos < 2:
        raise ConfigError("need at least 2 training videos to draw negatives")
    return Config(
        raw=raw,
        data=data,
        sample=sample,
        augment=augment,
        encoder=encoder,
        loss=loss,
        adam=adam,
        pretrain_schedule=pre,
        finetune_schedule=fin,
        run=run,
    )


def load_config(path=None, overrides: dict | None = None) -> Config:
    """Defaults, then the JSON file at `path`, then explicit overrides."""
    raw = default_config()
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        try:
            loaded = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        _merge(raw, loaded, "")
    if overrides:
        _merge(raw, overrides, "")
    return build_config(raw)


def fingerprint(raw: dict) -> str:
    """sha256 over the model/data-shaping sections plus the seed."""
    doc = {name: raw[name] for name in _FINGERPRINT_SECTIONS}
    doc["seed"] = raw["run"]["seed"]
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def write_effective(raw: dict, path) -> None:
    Path(path).write_text(json.dumps(raw, indent=2, sort_keys=True) + "\n")
