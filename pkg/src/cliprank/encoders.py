"""Context encoder g, target encoder f, and the two small heads.

g is a stack of 3D conv+relu blocks that collapses a K-frame clip to a
(C_out, H_out, W_out) feature grid; f is a matching 2D stack taking a single
frame to a grid of the same shape, which is what lets aligned cells be
compared.  The rotation head and the downstream classifier are each a global
mean pool followed by one affine layer.

Parameters live in a ParamSet: an ordered, uniquely named collection of leaf
Tensors, which is also the unit of checkpointing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .exceptions import ConfigError, DataError
from .rng import derive_rng


@dataclass(frozen=True)
class EncoderConfig:
    frame_channels: int = 1
    frame_size: int = 32
    context_len: int = 16
    channels: tuple = (8, 16, 24, 32)
    spatial_strides: tuple = ((2, 2), (2, 2), (2, 2), (1, 1))
    temporal_strides: tuple = (2, 2, 2, 2)
    kernel: int = 3
    pad: int = 1

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(
            self, "spatial_strides", tuple(tuple(s) for s in self.spatial_strides)
        )
        object.__setattr__(self, "temporal_strides", tuple(self.temporal_strides))
        n = len(self.channels)
        if n < 1:
            raise ConfigError("need at least one conv block")
        if len(self.spatial_strides) != n or len(self.temporal_strides) != n:
            raise ConfigError(
                f"stride schedules must match {n} conv blocks: "
                f"{len(self.spatial_strides)} spatial, {len(self.temporal_strides)} temporal"
            )
        if self.grid_depth != 1:
            raise ConfigError(
                f"temporal strides must reduce context length {self.context_len} "
                f"to exactly 1, got {self.grid_depth}"
            )

    def _out(self, size: int, stride: int) -> int:
        return (size + 2 * self.pad - self.kernel) // stride + 1

    @property
    def grid_depth(self) -> int:
        d = self.context_len
        for ts in self.temporal_strides:
            d = self._out(d, ts)
        return d

    @property
    def grid_shape(self) -> tuple:
        h = w = self.frame_size
        for sh, sw in self.spatial_strides:
            h, w = self._out(h, sh), self._out(w, sw)
        return (self.channels[-1], h, w)


class ParamSet:
    """Ordered collection of uniquely named parameter Tensors."""

    def __init__(self):
        self._order: list[str] = []
        self._tensors: dict[str, ad.Tensor] = {}

    def add(self, name: str, tensor: ad.Tensor) -> None:
        if name in self._tensors:
            raise ValueError(f"duplicate parameter name {name!r}")
        self._order.append(name)
        self._tensors[name] = tensor

    def __getitem__(self, name: str) -> ad.Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._order)

    @property
    def names(self) -> list:
        return list(self._order)

    def items(self) -> list:
        return [(n, self._tensors[n]) for n in self._order]

    def subset(self, *prefixes: str) -> list:
        return [
            (n, t)
            for n, t in self.items()
            if any(n.startswith(p) for p in prefixes)
        ]

    def zero_grads(self) -> None:
        for _, t in self.items():
            t.zero_grad()


def _uniform_init(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    # He bound: uniform(+-sqrt(6/fan_in)) keeps activation scale roughly
    # constant through the relu stacks, so the pooled-feature affine heads
    # start with usable gradient magnitudes.
    a = float(np.sqrt(6.0 / fan_in))
    return rng.uniform(-a, a, size=shape)


def init_params(cfg: EncoderConfig, num_classes: int, seed: int) -> ParamSet:
    """Fresh parameters for g, f, rotation head, classifier head."""
    if num_classes < 2:
        raise ConfigError(f"need at least 2 classes, got {num_classes}")
    params = ParamSet()

    def add(name: str, shape: tuple, fan_in: int) -> None:
        rng = derive_rng(seed, "init", name)
        params.add(name, ad.parameter(_uniform_init(rng, shape, fan_in)))

    k = cfg.kernel
    c_in = cfg.frame_channels
    for i, c_out in enumerate(cfg.channels):
        fan = c_in * k * k * k
        add(f"g.conv{i}.w", (c_out, c_in, k, k, k), fan)
        add(f"g.conv{i}.b", (c_out,), fan)
        c_in = c_out
    c_in = cfg.frame_channels
    for i, c_out in enumerate(cfg.channels):
        fan = c_in * k * k
        add(f"f.conv{i}.w", (c_out, c_in, k, k), fan)
        add(f"f.conv{i}.b", (c_out,), fan)
        c_in = c_out
    c_feat = cfg.channels[-1]
    add("rot.w", (4, c_feat), c_feat)
    add("rot.b", (4,), c_feat)
    add("cls.w", (num_classes, c_feat), c_feat)
    add("cls.b", (num_classes,), c_feat)
    return params


def calibrate_params(params: ParamSet, cfg: EncoderConfig, contexts, frames) -> ParamSet:
    """Rescale each conv block so its pre-activation std is ~1 on a reference batch.

    Plain conv+relu stacks have no normalization layers, so activation scale
    at init is set entirely by the weight magnitudes, and whatever scale falls
    out determines how fast the pooled-feature heads can move under a fixed
    learning rate.  This is the LSUV recipe restricted to its scaling step:
    one pass, layer by layer, dividing weights and biases by the observed
    pre-activation std.  Init-time only; checkpoints store the result.
    """
    with ad.no_grad():
        for stack, batch, encode in (
            ("g", contexts, encode_context),
            ("f", frames, encode_target),
        ):
            for i in range(len(cfg.channels)):
                taps: list = []
                encode(params, cfg, batch, taps=taps)
                s = float(taps[i].data.std())
                if s > 0:  # a silent layer cannot be rescued by scaling
                    params[f"{stack}.conv{i}.w"].data /= s
                    params[f"{stack}.conv{i}.b"].data /= s
    return params


def num_classes_of(params: ParamSet) -> int:
    return params["cls.w"].shape[0]


def encode_context(params: ParamSet, cfg: EncoderConfig, context, taps=None) -> ad.Tensor:
    """(K, C, h, w) clip (or a (B, K, C, h, w) batch) -> latent grid.

    ``taps``, when a list, collects each pre-relu conv output; the gradient
    checker uses these to verify an instance sits clear of relu kinks.
    """
    x = ad.as_tensor(context)
    single = x.ndim == 4
    if single:
        x = x.reshape((1,) + x.shape)
    expect = (cfg.context_len, cfg.frame_channels, cfg.frame_size, cfg.frame_size)
    if x.ndim != 5 or x.shape[1:] != expect:
        raise ConfigError(f"context shape {x.shape[1:]} does not match config {expect}")
    x = ad.transpose(x, (0, 2, 1, 3, 4))  # channels first, K becomes depth
    for i in range(len(cfg.channels)):
        ts = cfg.temporal_strides[i]
        sh, sw = cfg.spatial_strides[i]
        pre = ad.conv3d(x, params[f"g.conv{i}.w"], params[f"g.conv{i}.b"],
                        stride=(ts, sh, sw), pad=cfg.pad)
        if taps is not None:
            taps.append(pre)
        x = ad.relu(pre)
    b, c, d, h, w = x.shape
    x = x.reshape(b, c, h, w)  # d == 1 guaranteed by config validation
    return x.reshape(c, h, w) if single else x


def encode_target(params: ParamSet, cfg: EncoderConfig, frame, taps=None) -> ad.Tensor:
    """(C, h, w) frame (or a (B, C, h, w) batch) -> latent grid."""
    x = ad.as_tensor(frame)
    single = x.ndim == 3
    if single:
        x = x.reshape((1,) + x.shape)
    expect = (cfg.frame_channels, cfg.frame_size, cfg.frame_size)
    if x.ndim != 4 or x.shape[1:] != expect:
        raise ConfigError(f"frame shape {x.shape[1:]} does not match config {expect}")
    for i in range(len(cfg.channels)):
        sh, sw = cfg.spatial_strides[i]
        pre = ad.conv2d(x, params[f"f.conv{i}.w"], params[f"f.conv{i}.b"],
                        stride=(sh, sw), pad=cfg.pad)
        if taps is not None:
            taps.append(pre)
        x = ad.relu(pre)
    return x.reshape(x.shape[1:]) if single else x


def encode_target_clip(params: ParamSet, cfg: EncoderConfig, clip, taps=None) -> ad.Tensor:
    """A (d, C, h, w) target clip; only d=1 is supported."""
    if clip.shape[0] != 1:
        raise DataError("target encoder requires single-frame clips")
    return encode_target(params, cfg, clip[0], taps=taps)


def _pool_grid(z) -> ad.Tensor:
    z = ad.as_tensor(z)
    return ad.pool(z, window=z.shape[-2:], kind="mean")


def predict_rotation(params: ParamSet, z) -> ad.Tensor:
    """Latent grid (or batch of grids) -> 4 rotation logits."""
    return ad.affine(_pool_grid(z), params["rot.w"], params["rot.b"])


def classify(params: ParamSet, h, num_classes: int | None = None) -> ad.Tensor:
    """Latent grid (or batch) -> class logits via mean pool + affine."""
    if num_classes is not None and num_classes != num_classes_of(params):
        raise ConfigError(
            f"head has {num_classes_of(params)} classes, caller expects {num_classes}"
        )
    return ad.affine(_pool_grid(h), params["cls.w"], params["cls.b"])
