"""Adam with a capped step-decay learning-rate schedule.

The schedule multiplies the base rate by ``decay_factor`` once per
``decay_every`` epochs; with ``decay_until`` set, decays stop accumulating
past that epoch.  Weight decay defaults to the decoupled form (parameters
shrink by lr*wd before the Adam delta is applied); the coupled L2 form (decay
added to the gradient) is available behind a switch since either reading of
"weight decay" is defensible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoders import ParamSet
from .exceptions import ConfigError, NumericsError


@dataclass(frozen=True)
class Schedule:
    base_lr: float
    decay_factor: float = 1.0
    decay_every: int = 1
    decay_until: int | None = None
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ConfigError(f"base_lr must be > 0, got {self.base_lr}")
        if not 0 < self.decay_factor <= 1:
            raise ConfigError(f"decay_factor must be in (0, 1], got {self.decay_factor}")
        if self.decay_every < 1:
            raise ConfigError("decay_every must be >= 1")
        if self.decay_until is not None and self.decay_until < 0:
            raise ConfigError("decay_until must be >= 0")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")


def lr_at_epoch(schedule: Schedule, epoch: int) -> float:
    """base_lr * decay_factor^floor(min(epoch, decay_until)/decay_every)."""
    if epoch < 0:
        raise ConfigError(f"epoch must be >= 0, got {epoch}")
    e = epoch if schedule.decay_until is None else min(epoch, schedule.decay_until)
    return schedule.base_lr * schedule.decay_factor ** (e // schedule.decay_every)


@dataclass(frozen=True)
class AdamConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decoupled_weight_decay: bool = True

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("betas must be in [0, 1)")
        if self.eps <= 0:
            raise ConfigError("eps must be > 0")


class Adam:
    """Bias-corrected Adam over a ParamSet (or a named subset of one).

    Parameters whose grad is None at step time are skipped, which is what
    freezing means here: a frozen tensor is simply never given a gradient.
    """

    def __init__(self, params, cfg: AdamConfig = AdamConfig()):
        self.cfg = cfg
        self._params = list(params.items()) if isinstance(params, ParamSet) else list(params)
        self.step_count = 0
        self.m = {name: np.zeros_like(t.data) for name, t in self._params}
        self.v = {name: np.zeros_like(t.data) for name, t in self._params}

    def step(self, lr: float, weight_decay: float = 0.0) -> None:
        self.step_count += 1
        b1, b2, eps = self.cfg.beta1, self.cfg.beta2, self.cfg.eps
        bc1 = 1.0 - b1**self.step_count
        bc2 = 1.0 - b2**self.step_count
        for name, p in self._params:
            g = p.grad
            if g is None:
                continue
            if not np.isfinite(g).all():
                raise NumericsError(f"non-finite gradient in parameter {name!r}")
            if weight_decay:
                if self.cfg.decoupled_weight_decay:
                    p.data -= (lr * weight_decay) * p.data
                else:
                    g = g + weight_decay * p.data
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)

    def state_dict(self) -> dict:
        return {
            "step": self.step_count,
            "m": {name: arr.copy() for name, arr in self.m.items()},
            "v": {name: arr.copy() for name, arr in self.v.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        for key in ("m", "v"):
            stored = state[key]
            own = getattr(self, key)
            if set(stored) != set(own):
                raise ConfigError("optimizer state names do not match parameters")
            for name, arr in stored.items():
                if arr.shape != own[name].shape:
                    raise ConfigError(
                        f"optimizer state {key}.{name} has shape {arr.shape}, "
                        f"parameter wants {own[name].shape}"
                    )
                own[name] = arr.astype(own[name].dtype, copy=True)
        self.step_count = int(state["step"])
