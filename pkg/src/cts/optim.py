"""AdamW, the warmup/cosine learning-rate schedule, and gradient checks.

Parameters are name -> ndarray dicts; updates mutate the arrays in place
so a single training loop owns optimizer state. Training runs in float32;
gradient verification casts to float64 (central differences are only
trustworthy there).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import ArgumentError, NumericError

Params = dict[str, np.ndarray]
Grads = Mapping[str, np.ndarray]


@dataclass(frozen=True)
class LrSchedule:
    """Linear warmup to 1, then cosine decay to 0 (or flat)."""

    total_steps: int
    warmup_ratio: float = 0.05
    shape: str = "cosine"

    def __post_init__(self):
        if self.total_steps < 1:
            raise ArgumentError("total_steps must be >= 1")
        if not 0.0 <= self.warmup_ratio < 1.0:
            raise ArgumentError("warmup_ratio must be in [0, 1)")
        if self.shape not in ("cosine", "constant"):
            raise ArgumentError(f"unknown schedule shape {self.shape!r}")

    @property
    def warmup_steps(self) -> int:
        return math.ceil(self.warmup_ratio * self.total_steps)


def lr_at(schedule: LrSchedule, step: int) -> float:
    """Multiplier in [0, 1] at a step; both pieces meet at 1 on warmup end."""
    if not 0 <= step <= schedule.total_steps:
        raise ArgumentError(
            f"step {step} outside [0, {schedule.total_steps}]"
        )
    w = schedule.warmup_steps
    if step < w:
        return step / w
    if schedule.shape == "constant" or schedule.total_steps == w:
        return 1.0
    span = schedule.total_steps - w
    return 0.5 * (1.0 + math.cos(math.pi * (step - w) / span))


@dataclass
class AdamWState:
    """Moment buffers plus hyperparameters for decoupled weight decay."""

    base_lr: float
    weight_decay: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)


def adamw_init(params: Params, base_lr: float, weight_decay: float) -> AdamWState:
    state = AdamWState(base_lr=base_lr, weight_decay=weight_decay)
    for name, value in params.items():
        state.m[name] = np.zeros_like(value)
        state.v[name] = np.zeros_like(value)
    return state


def adamw_step(
    params: Params,
    grads: Grads,
    state: AdamWState,
    lr_multiplier: float = 1.0,
) -> Params:
    """One bias-corrected AdamW update; decay is decoupled (lr * wd * w).

    Mutates ``params`` and ``state`` in place and returns ``params``.
    """
    for name, grad in grads.items():
        if name not in params:
            raise ArgumentError(f"gradient for unknown parameter {name!r}")
        if grad.shape != params[name].shape:
            raise ArgumentError(
                f"{name}: grad shape {grad.shape} != param shape "
                f"{params[name].shape}"
            )
        if not np.all(np.isfinite(grad)):
            raise NumericError(f"non-finite gradient in parameter {name!r}")

    state.step += 1
    t = state.step
    lr = state.base_lr * lr_multiplier
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, grad in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(grad)
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        if state.weight_decay:
            update = update + state.weight_decay * params[name]
        params[name] -= (lr * update).astype(params[name].dtype, copy=False)
    return params


LossFn = Callable[[Params], tuple[float, Grads]]


def grad_check(
    loss_fn: LossFn,
    params: Params,
    probe_count: int = 64,
    h: float = 1e-5,
    seed: int = 0,
) -> float:
    """Worst relative error between analytic and central-difference grads.

    ``loss_fn`` must be pure and return ``(loss, grads)``; parameters are
    promoted to float64 before probing. The error at a probed coordinate
    is ``|analytic - numeric| / max(|numeric|, 1e-8)``, so a gradient off
    by a factor reads as that factor minus one.
    """
    work: Params = {k: np.asarray(v, dtype=np.float64).copy() for k, v in params.items()}
    loss, grads = loss_fn(work)
    grads = {k: np.array(v, dtype=np.float64) for k, v in grads.items()}
    if not math.isfinite(loss):
        raise NumericError("loss is non-finite at the probe point")

    coords = [
        (name, idx)
        for name, value in sorted(work.items())
        for idx in range(value.size)
    ]
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    take = min(probe_count, len(coords))
    picked = rng.choice(len(coords), size=take, replace=False)

    worst = 0.0
    for c in picked:
        name, idx = coords[int(c)]
        flat = work[name].reshape(-1)
        keep = flat[idx]
        flat[idx] = keep + h
        up, _ = loss_fn(work)
        flat[idx] = keep - h
        down, _ = loss_fn(work)
        flat[idx] = keep
        if not (math.isfinite(up) and math.isfinite(down)):
            raise NumericError("loss is non-finite at a probe offset")
        numeric = (up - down) / (2.0 * h)
        analytic = float(np.asarray(grads[name]).reshape(-1)[idx])
        err = abs(analytic - numeric) / max(abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst
