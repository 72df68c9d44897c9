"""Pretraining loop plus the checkpoint archive it reads and writes.

A checkpoint is a single file: a little-endian u64 giving the length of a
JSON manifest, the manifest itself, then one SKT1 tensor record per name in
the manifest's ``tensors`` list, in that order.  The manifest carries the
completed-epoch count, the optimizer step, the run seed, the full effective
config, and the config fingerprint; loading against a config with a
different fingerprint is refused, since silently mixing geometries corrupts
a run in ways that only surface much later.

All randomness inside an epoch comes from one stream derived from
(seed, "epoch", index), so resuming from an epoch boundary replays exactly
the run that an uninterrupted training would have produced.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import skt
from .config import Config, fingerprint
from .encoders import ParamSet, calibrate_params, encode_context, init_params
from .exceptions import ConfigError, DataError, NumericsError
from .objectives import batch_loss
from .optim import Adam, AdamConfig, lr_at_epoch
from .rng import derive_rng
from .sampling import make_example
from . import autodiff as ad

CHECKPOINT_FORMAT = "ckpt1"


@dataclass
class Checkpoint:
    epoch: int
    adam_step: int
    seed: int
    fingerprint: str
    raw_config: dict
    params: dict          # name -> ndarray, insertion order preserved
    adam_m: dict
    adam_v: dict


def save_checkpoint(path, params: ParamSet, adam: Adam, epoch: int, raw_config: dict, seed: int) -> None:
    names = params.names
    tensors = (
        [("p." + n, params[n].data) for n in names]
        + [("m." + n, adam.m[n]) for n in names]
        + [("v." + n, adam.v[n]) for n in names]
    )
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "epoch": int(epoch),
        "adam_step": int(adam.step_count),
        "seed": int(seed),
        "config_fingerprint": fingerprint(raw_config),
        "config": raw_config,
        "tensors": [name for name, _ in tensors],
    }
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, arr in tensors:
            fh.write(skt.pack_tensor(arr))
    tmp.replace(path)


def load_checkpoint(path) -> Checkpoint:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(blob) < 8:
        raise DataError(f"checkpoint {path} is truncated")
    (mlen,) = struct.unpack_from("<Q", blob, 0)
    if len(blob) < 8 + mlen:
        raise DataError(f"checkpoint {path} is truncated")
    try:
        manifest = json.loads(blob[8 : 8 + mlen])
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise DataError(f"checkpoint {path} has a corrupt manifest: {exc}") from exc
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"checkpoint {path} has unknown format {manifest.get('format')!r}")

    offset = 8 + mlen
    arrays = {}
    for name in manifest["tensors"]:
        arr, used = skt.unpack_tensor(blob, offset)
        arrays[name] = arr
        offset += used
    if offset != len(blob):
        raise DataError(f"checkpoint {path} has {len(blob) - offset} trailing bytes")

    def strip(prefix: str) -> dict:
        return {n[len(prefix):]: a for n, a in arrays.items() if n.startswith(prefix)}

    return Checkpoint(
        epoch=int(manifest["epoch"]),
        adam_step=int(manifest["adam_step"]),
        seed=int(manifest["seed"]),
        fingerprint=manifest["config_fingerprint"],
        raw_config=manifest["config"],
        params=strip("p."),
        adam_m=strip("m."),
        adam_v=strip("v."),
    )


def params_from_checkpoint(ckpt: Checkpoint) -> ParamSet:
    ps = ParamSet()
    for name, arr in ckpt.params.items():
        ps.add(name, ad.parameter(arr.copy()))
    return ps


def adam_from_checkpoint(ckpt: Checkpoint, params: ParamSet, cfg: AdamConfig) -> Adam:
    opt = Adam(params, cfg)
    opt.load_state_dict({"step": ckpt.adam_step, "m": ckpt.adam_m, "v": ckpt.adam_v})
    return opt


def check_fingerprint(ckpt: Checkpoint, raw_config: dict) -> None:
    want = fingerprint(raw_config)
    if ckpt.fingerprint != want:
        raise ConfigError(
            "checkpoint was written under a different configuration "
            f"(fingerprint {ckpt.fingerprint[:12]}.. != {want[:12]}..); "
            "refusing to load it into this run"
        )


@dataclass
class PretrainResult:
    checkpoint_path: Path
    metrics_path: Path
    steps: int
    last_record: dict


def init_seed(run_seed: int) -> int:
    return int(derive_rng(run_seed, "init").integers(1 << 63))


def init_calibrated(cfg: Config, videos, run_seed: int) -> ParamSet:
    """Fresh parameters, conv scales calibrated on a reference batch.

    The batch comes from the normal example pipeline under a dedicated
    rng label, so two runs with the same seed calibrate identically.
    """
    params = init_params(cfg.encoder, cfg.data.num_motion_classes, seed=init_seed(run_seed))
    rng = derive_rng(run_seed, "calib")
    examples = [
        make_example(videos, int(rng.integers(len(videos))), cfg.sample, cfg.augment, rng)
        for _ in range(min(8, len(videos)))
    ]
    contexts = np.stack([ex.context for ex in examples])
    frames = np.concatenate([ex.rotation_inputs for ex in examples])
    return calibrate_params(params, cfg.encoder, contexts, frames)


def pretrain(cfg: Config, videos, out_dir, *, resume=None, log_fn=None) -> PretrainResult:
    """Train the encoders on `videos`, writing metrics and checkpoints to `out_dir`.

    ``resume`` takes a checkpoint path and continues from its epoch boundary;
    the result is bit-identical to the run that was never interrupted.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run = cfg.run
    steps_per_epoch = len(videos) // run.batch_size
    if steps_per_epoch < 1:
        raise ConfigError(
            f"batch_size {run.batch_size} exceeds the {len(videos)} videos available"
        )

    if resume is not None:
        ckpt = load_checkpoint(resume)
        check_fingerprint(ckpt, cfg.raw)
        if ckpt.epoch > run.epochs:
            raise ConfigError(
                f"checkpoint is at epoch {ckpt.epoch}, past the configured {run.epochs}"
            )
        params = params_from_checkpoint(ckpt)
        adam = adam_from_checkpoint(ckpt, params, cfg.adam)
        start_epoch = ckpt.epoch
    else:
        params = init_calibrated(cfg, videos, run.seed)
        adam = Adam(params, cfg.adam)
        start_epoch = 0

    metrics_path = out / "metrics.jsonl"
    mode = "a" if resume is not None else "w"
    step = start_epoch * steps_per_epoch
    last: dict = {}
    with open(metrics_path, mode) as mf:
        for epoch in range(start_epoch, run.epochs):
            rng = derive_rng(run.seed, "epoch", epoch)
            order = rng.permutation(len(videos))
            lr = lr_at_epoch(cfg.pretrain_schedule, epoch)
            for s in range(steps_per_epoch):
                batch = order[s * run.batch_size : (s + 1) * run.batch_size]
                examples = [
                    make_example(videos, int(i), cfg.sample, cfg.augment, rng)
                    for i in batch
                ]
                params.zero_grads()
                total, breakdown, _ = batch_loss(examples, params, cfg.encoder, cfg.loss)
                if not math.isfinite(breakdown["loss_total"]):
                    prov = ", ".join(f"{ex.video_id}@t={ex.t}" for ex in examples)
                    raise NumericsError(
                        f"non-finite loss at epoch {epoch} step {s} (examples: {prov})"
                    )
                total.backward()
                adam.step(lr, weight_decay=cfg.pretrain_schedule.weight_decay)
                record = {"step": step, "epoch": epoch, "lr": lr, **breakdown}
                mf.write(json.dumps(record) + "\n")
                if log_fn is not None:
                    log_fn(record)
                last = record
                step += 1
            done = epoch + 1
            _fix_output_gauge(params, cfg, videos, run.seed, epoch)
            if run.checkpoint_every and done % run.checkpoint_every == 0 and done < run.epochs:
                save_checkpoint(
                    out / f"checkpoint_e{done:04d}.skc", params, adam, done, cfg.raw, run.seed
                )

    final = out / "checkpoint_final.skc"
    save_checkpoint(final, params, adam, run.epochs, cfg.raw, run.seed)
    return PretrainResult(
        checkpoint_path=final, metrics_path=metrics_path, steps=step, last_record=last
    )


def _fix_output_gauge(params: ParamSet, cfg: Config, videos, run_seed: int, epoch: int) -> None:
    """Scale the last context-conv layer so grid activations have unit std.

    The cosine objectives are invariant under any positive scaling of the
    context grid, so training leaves its overall scale adrift (it tends to
    shrink).  Multiplying only the final layer's weights and bias scales the
    grid exactly, changing no cosine; renormalizing at each epoch boundary
    pins that free scale, so every checkpoint hands downstream affine heads
    features of a known magnitude.  Part of the training algorithm proper,
    which is what keeps resumed runs bit-identical to uninterrupted ones.
    """
    rng = derive_rng(run_seed, "gauge", epoch)
    examples = [
        make_example(videos, int(rng.integers(len(videos))), cfg.sample, cfg.augment, rng)
        for _ in range(min(8, len(videos)))
    ]
    contexts = np.stack([ex.context for ex in examples])
    with ad.no_grad():
        h = encode_context(params, cfg.encoder, contexts)
    s = float(h.data.std())
    if s > 0:
        last = len(cfg.encoder.channels) - 1
        params[f"g.conv{last}.w"].data /= s
        params[f"g.conv{last}.b"].data /= s
