"""Finite-difference verification of analytic gradients.

``finite_diff_check`` compares backward-pass gradients against central
differences, coordinate by coordinate, and reports the per-parameter maximum
relative error |g_analytic − g_fd| / max(|g_analytic|, |g_fd|, 1e-8).

``check_full_objective`` drives that check through the complete training
objective (ranking + contrastive + rotation) on randomly built tiny-geometry
instances.  Hinge and relu terms are piecewise linear, so instances whose
pre-activations or margin terms sit within a small band of a kink are
resampled; central differences straddling a kink would disagree with any
one-sided subgradient no matter how correct the code is.

All checking runs in 64-bit mode; callers do not need to switch precision
themselves.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .exceptions import NumericsError
from .rng import derive_rng

DEFAULT_STEP = 1e-4
DEFAULT_TOL = 1e-4
KINK_BAND = 1e-3


@dataclass
class ParamCheck:
    name: str
    max_rel_error: float
    coords_checked: int
    ok: bool


@dataclass
class GradCheckReport:
    step: float
    tol: float
    params: list = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max((p.max_rel_error for p in self.params), default=0.0)

    @property
    def passed(self) -> bool:
        return all(p.ok for p in self.params)

    @property
    def flagged(self) -> list:
        return [p for p in self.params if not p.ok]

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "tol": self.tol,
            "passed": self.passed,
            "max_rel_error": self.max_rel_error,
            "params": [
                {
                    "name": p.name,
                    "max_rel_error": p.max_rel_error,
                    "coords_checked": p.coords_checked,
                    "ok": p.ok,
                }
                for p in self.params
            ],
        }


def _rel_error(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def finite_diff_check(
    loss_fn,
    named_params,
    step: float = DEFAULT_STEP,
    tol: float = DEFAULT_TOL,
    coords_per_param: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Check analytic gradients of ``loss_fn`` w.r.t. ``named_params``.

    ``loss_fn`` takes no arguments, closes over the parameter Tensors, and
    must be deterministic.  ``named_params`` is a sequence of (name, Tensor)
    pairs.  When ``coords_per_param`` is given, only that many randomly
    chosen coordinates per parameter are probed (``rng`` required);
    otherwise every coordinate is.
    """
    if coords_per_param is not None and rng is None:
        raise ValueError("coordinate subsampling needs an rng")
    named_params = list(named_params)
    for _, p in named_params:
        p.zero_grad()
    root = loss_fn()
    root.backward()
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in named_params
    }

    def central_diff(flat, c, h):
        keep = flat[c]
        flat[c] = keep + h
        hi = loss_fn().item()
        flat[c] = keep - h
        lo = loss_fn().item()
        flat[c] = keep
        return (hi - lo) / (2.0 * h)

    # Below this absolute difference the comparison is vacuous: a central
    # difference carries ~eps*|L|/step of cancellation noise, so dead
    # coordinates (true gradient ~0) read as noise, and the 1e-8 floor in the
    # relative error would amplify that noise into a spurious failure.
    noise_floor = 1e-9 * max(1.0, abs(root.item()))

    def coord_error(a: float, fd: float) -> float:
        return 0.0 if abs(a - fd) <= noise_floor else _rel_error(a, fd)

    report = GradCheckReport(step=step, tol=tol)
    for name, p in named_params:
        flat = p.data.reshape(-1)
        n = flat.size
        if coords_per_param is None or coords_per_param >= n:
            coords = np.arange(n)
        else:
            coords = rng.choice(n, size=coords_per_param, replace=False)
        worst = 0.0
        ga = analytic[name].reshape(-1)
        for c in coords:
            fd = central_diff(flat, c, step)
            err = coord_error(float(ga[c]), fd)
            if err > tol / 2:
                # The probe may straddle a relu/hinge kink the perturbation
                # itself pushed past (the instance-level margin check only
                # sees unperturbed values).  Shrink the step until two
                # successive estimates agree; they converge to the true local
                # derivative, so genuinely wrong gradients stay flagged.
                h = step
                for _ in range(6):
                    h /= 2.0
                    refined = central_diff(flat, c, h)
                    if _rel_error(refined, fd) <= tol / 4:
                        fd = refined
                        break
                    fd = refined
                err = coord_error(float(ga[c]), fd)
            worst = max(worst, err)
        report.params.append(
            ParamCheck(name=name, max_rel_error=worst, coords_checked=len(coords), ok=worst <= tol)
        )
    return report


def tiny_check_geometry():
    """Smallest encoder/sampling geometry that exercises every code path.

    8x8 frames, a 4-frame context, 3 targets, 3 negatives: two conv blocks
    per encoder, grid 2x2, a couple hundred parameters, so a full-objective
    check over every coordinate runs in seconds.
    """
    from .encoders import EncoderConfig
    from .objectives import LossConfig
    from .sampling import SampleSpec

    enc = EncoderConfig(
        frame_channels=1,
        frame_size=8,
        context_len=4,
        channels=(3, 4),
        spatial_strides=((2, 2), (2, 2)),
        temporal_strides=(2, 2),
    )
    samp = SampleSpec(k=4, m=3, r=2, d=1, num_negatives=3)
    loss = LossConfig()
    return enc, samp, loss


def _kink_margins(taps, scores, neg_scores, loss_cfg) -> float:
    """Distance of the nearest relu input / hinge argument to its kink."""
    margin = np.inf
    for t in taps:
        margin = min(margin, float(np.abs(t.data).min()))
    s = np.asarray(scores, dtype=np.float64)
    for i in range(len(s)):
        for j in range(i + 1, len(s)):
            margin = min(margin, abs(-s[i] + s[j] + loss_cfg.delta_rank))
    mean_neg = float(np.mean(np.asarray(neg_scores, dtype=np.float64)))
    for i in range(len(s)):
        margin = min(margin, abs(-s[i] + mean_neg + loss_cfg.delta_neg))
    return margin


def check_full_objective(
    n_instances: int = 20,
    seed: int = 0,
    step: float = DEFAULT_STEP,
    tol: float = DEFAULT_TOL,
    coords_per_param: int | None = 6,
    max_resamples: int = 50,
    loss_cfg=None,
) -> list[GradCheckReport]:
    """Gradient-check the full objective on random tiny instances.

    Returns one report per instance.  Raises NumericsError if kink-free
    instances cannot be found, which would point at degenerate geometry
    rather than bad luck.  loss_cfg overrides the margins and term
    enables; the check geometry itself stays tiny regardless.
    """
    from .encoders import init_params
    from .objectives import example_loss

    enc_cfg, samp, default_loss = tiny_check_geometry()
    if loss_cfg is None:
        loss_cfg = default_loss
    reports = []
    with ad.precision("float64"):
        for inst in range(n_instances):
            for attempt in range(max_resamples):
                rng = derive_rng(seed, "gradcheck", inst, attempt)
                params = init_params(enc_cfg, num_classes=2, seed=int(rng.integers(2**63)))
                ex = _random_example(enc_cfg, samp, rng)

                taps: list = []
                total, _, score_set = example_loss(
                    ex, params, enc_cfg, loss_cfg, taps=taps
                )
                margin = _kink_margins(
                    taps, score_set.target_scores, score_set.negative_scores, loss_cfg
                )
                if margin <= KINK_BAND:
                    continue

                def loss_fn():
                    t, _, _ = example_loss(ex, params, enc_cfg, loss_cfg)
                    return t

                crng = derive_rng(seed, "gradcheck-coords", inst)
                reports.append(
                    finite_diff_check(
                        loss_fn,
                        params.items(),
                        step=step,
                        tol=tol,
                        coords_per_param=coords_per_param,
                        rng=crng,
                    )
                )
                break
            else:
                raise NumericsError(
                    f"instance {inst}: no kink-free sample in {max_resamples} tries"
                )
    return reports


def _random_example(enc_cfg, samp, rng):
    from .sampling import TrainingExample

    c, s = enc_cfg.frame_channels, enc_cfg.frame_size
    shape_frame = (c, s, s)
    context = rng.uniform(0.0, 1.0, size=(samp.k,) + shape_frame)
    targets = rng.uniform(0.0, 1.0, size=(samp.m, samp.d) + shape_frame)
    negatives = rng.uniform(0.0, 1.0, size=(samp.num_negatives, samp.d) + shape_frame)
    labels = rng.integers(0, 4, size=samp.m)
    rotations = np.stack(
        [np.rot90(targets[i, 0], k=int(labels[i]), axes=(-2, -1)) for i in range(samp.m)]
    )
    return TrainingExample(
        context=context.astype(np.float64),
        targets=targets.astype(np.float64),
        negatives=negatives.astype(np.float64),
        rotation_inputs=rotations.astype(np.float64),
        rotation_labels=labels.astype(np.int64),
        t=0,
        video_id="gradcheck",
        negative_ids=["gradcheck-neg"] * samp.num_negatives,
        flip=False,
        crop_y=0,
        crop_x=0,
        reversed=False,
    )
