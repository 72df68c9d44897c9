"""Shared small-geometry config used by the training/evaluation/cli tests.

8x8 crops from 18x18 frames, a 4-frame context collapsing through two
temporal stride-2 layers, 3 targets at spacing 2.  Small enough that a full
train/eval cycle runs in well under a second.
"""

from cliprank.config import build_config, default_config
from cliprank.synth import render_video


def tiny_raw(**run_edits):
    raw = default_config()
    raw["data"].update(
        {
            "train_videos": 8,
            "test_videos": 4,
            "frames_per_video": 14,
            "frame_h": 18,
            "frame_w": 18,
            "num_motion_classes": 4,
            "sprite_size": 4.0,
        }
    )
    raw["sample"].update({"k": 4, "m": 3, "r": 2, "d": 1, "num_negatives": 2})
    raw["augment"].update({"crop_h": 8, "crop_w": 8})
    raw["encoder"].update(
        {
            "frame_size": 8,
            "context_len": 4,
            "channels": [3, 4],
            "spatial_strides": [[2, 2], [2, 2]],
            "temporal_strides": [2, 2],
        }
    )
    raw["run"].update(
        {
            "epochs": 2,
            "batch_size": 4,
            "seed": 11,
            "eval_examples": 8,
            "finetune_epochs": 2,
            "finetune_batch_size": 4,
        }
    )
    raw["run"].update(run_edits)
    return raw


def tiny_cfg(**run_edits):
    return build_config(tiny_raw(**run_edits))


def make_tiny_videos(cfg, split: str = "train"):
    spec = cfg.data.spec(split, cfg.run.seed)
    return [render_video(spec, i) for i in range(spec.num_videos)]
