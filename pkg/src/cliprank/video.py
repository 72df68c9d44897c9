"""Video container, on-disk video files, and dataset manifests.

A video is a rank-4 SKT1 tensor (N, C, H, W) with values in [0, 1].  A
dataset is a directory of such files plus a JSON manifest:

    {"split": "train", "seed": 7, "entries": [
        {"path": "video_0000.skt", "n": 52, "c": 1, "h": 36, "w": 36,
         "motion_class": 3}, ...]}

Entry paths are relative to the manifest's directory.  The schema is strict:
unknown fields are rejected so typos surface immediately.  ``motion_class``
may be null on train entries; test entries must carry a class because
downstream evaluation needs the labels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import skt
from .exceptions import DataError

VALUE_SLACK = 1e-6


class VideoRankError(skt.SktError):
    pass


class ManifestError(DataError):
    pass


@dataclass
class Video:
    frames: np.ndarray  # (N, C, H, W) float32 in [0, 1]
    id: str
    motion_class: int | None = None

    def __post_init__(self):
        f = self.frames
        if f.ndim != 4 or f.shape[0] < 1:
            raise VideoRankError(f"video tensor must have rank 4 with N >= 1, got shape {f.shape}")
        if not np.isfinite(f).all():
            raise DataError(f"video {self.id}: non-finite frame values")
        if f.min() < -VALUE_SLACK or f.max() > 1 + VALUE_SLACK:
            raise DataError(
                f"video {self.id}: values outside [0,1]: range "
                f"[{float(f.min()):.4g}, {float(f.max()):.4g}]"
            )

    @property
    def n(self) -> int:
        return self.frames.shape[0]


def save_video(video: Video, path) -> None:
    skt.write_tensor(path, video.frames)


def load_video(path, motion_class: int | None = None) -> Video:
    arr = skt.read_tensor(path)
    if arr.ndim != 4:
        raise VideoRankError(f"{path}: video tensor must have rank 4, got rank {arr.ndim}")
    return Video(frames=arr, id=Path(path).stem, motion_class=motion_class)


@dataclass
class ManifestEntry:
    path: str
    n: int
    c: int
    h: int
    w: int
    motion_class: int | None = None


@dataclass
class DatasetManifest:
    split: str
    seed: int
    entries: list

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise ManifestError(f"split must be 'train' or 'test', got {self.split!r}")


_ENTRY_REQUIRED = ("path", "n", "c", "h", "w")
_ENTRY_ALLOWED = _ENTRY_REQUIRED + ("motion_class",)


def write_manifest(manifest: DatasetManifest, path) -> None:
    doc = {
        "split": manifest.split,
        "seed": manifest.seed,
        "entries": [
            {
                "path": e.path,
                "n": e.n,
                "c": e.c,
                "h": e.h,
                "w": e.w,
                "motion_class": e.motion_class,
            }
            for e in manifest.entries
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def read_manifest(path) -> DatasetManifest:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as err:
        raise ManifestError(f"cannot read manifest {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ManifestError(f"{path}: not valid JSON: {err}") from err
    if not isinstance(doc, dict):
        raise ManifestError(f"{path}: manifest must be a JSON object")
    unknown = set(doc) - {"split", "seed", "entries"}
    if unknown:
        raise ManifestError(f"{path}: unknown field {sorted(unknown)[0]!r}")
    for key in ("split", "seed", "entries"):
        if key not in doc:
            raise ManifestError(f"{path}: missing field {key!r}")
    split = doc["split"]
    if split not in ("train", "test"):
        raise ManifestError(f"{path}: field 'split' must be 'train' or 'test'")
    if not isinstance(doc["seed"], int) or isinstance(doc["seed"], bool) or doc["seed"] < 0:
        raise ManifestError(f"{path}: field 'seed' must be a non-negative integer")
    entries = []
    for i, raw in enumerate(doc["entries"]):
        if not isinstance(raw, dict):
            raise ManifestError(f"{path}: entry {i} must be an object")
        unknown = set(raw) - set(_ENTRY_ALLOWED)
        if unknown:
            raise ManifestError(f"{path}: entry {i}: unknown field {sorted(unknown)[0]!r}")
        for key in _ENTRY_REQUIRED:
            if key not in raw:
                raise ManifestError(f"{path}: entry {i}: missing field {key!r}")
        for key in ("n", "c", "h", "w"):
            v = raw[key]
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ManifestError(f"{path}: entry {i}: field {key!r} must be a positive integer")
        mc = raw.get("motion_class")
        if mc is not None and (not isinstance(mc, int) or isinstance(mc, bool) or mc < 0):
            raise ManifestError(f"{path}: entry {i}: field 'motion_class' must be a non-negative integer or null")
        if split == "test" and mc is None:
            raise ManifestError(
                f"{path}: entry {i}: field 'motion_class' is required on the test split"
            )
        entries.append(
            ManifestEntry(
                path=str(raw["path"]), n=raw["n"], c=raw["c"], h=raw["h"], w=raw["w"],
                motion_class=mc,
            )
        )
    return DatasetManifest(split=split, seed=doc["seed"], entries=entries)


def validate_manifest(manifest: DatasetManifest, root) -> None:
    """Check that entry paths resolve and recorded shapes match file headers."""
    root = Path(root)
    for i, e in enumerate(manifest.entries):
        target = root / e.path
        if not target.exists():
            raise ManifestError(f"entry {i}: path {e.path!r} does not resolve under {root}")
        dims = skt.read_header(target)
        if dims != (e.n, e.c, e.h, e.w):
            raise ManifestError(
                f"entry {i}: recorded shape {(e.n, e.c, e.h, e.w)} disagrees with "
                f"file header {dims}"
            )


def load_dataset(manifest_path) -> list:
    """Load every video listed in a manifest, attaching labels."""
    manifest_path = Path(manifest_path)
    manifest = read_manifest(manifest_path)
    validate_manifest(manifest, manifest_path.parent)
    return [
        load_video(manifest_path.parent / e.path, motion_class=e.motion_class)
        for e in manifest.entries
    ]
