"""Momentum SGD with a cosine learning-rate schedule and global-norm clipping."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from adanas.autograd.tensor import ShapeError


def cosine_lr(step, total_steps, base_lr):
    if total_steps <= 0:
        raise ValueError(f"total_steps must be positive, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def global_norm(grads):
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads))


def clip_global_norm(grads, clip_norm):
    """Scale all grads by ``clip_norm / norm`` when the joint L2 norm exceeds ``clip_norm``.

    Returns ``(clipped_grads, norm_before_clipping)``.
    """
    norm = global_norm(grads)
    if norm > clip_norm:
        scale = clip_norm / norm
        return [g * scale for g in grads], norm
    return list(grads), norm


@dataclass
class OptimizerState:
    velocity: list
    total_steps: int
    base_lr: float = 0.025
    momentum: float = 0.9
    clip_norm: float = 5.0
    step: int = 0
    lr_trace: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, total_steps, **kw):
        return cls(velocity=[np.zeros_like(p.data) for p in params], total_steps=total_steps, **kw)

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.clip_norm <= 0 or self.base_lr <= 0:
            raise ValueError("base_lr and clip_norm must be positive")


def sgd_momentum_step(params, grads, state: OptimizerState, lr=None):
    """Classic momentum update, in place: ``v = mu*v + g; p -= lr*v``.

    ``lr`` defaults to the cosine schedule at ``state.step``.
    """
    if state.step >= state.total_steps:
        raise ValueError(f"optimizer already ran its {state.total_steps} steps")
    if len(params) != len(grads) or len(params) != len(state.velocity):
        raise ShapeError("sgd_momentum_step", (len(params),), (len(grads),))
    if lr is None:
        lr = cosine_lr(state.step, state.total_steps, state.base_lr)
    for p, g, v in zip(params, grads, state.velocity):
        if p.data.shape != g.shape or v.shape != g.shape:
            raise ShapeError("sgd_momentum_step", p.data.shape, g.shape)
        v *= state.momentum
        v += g
        p.data -= lr * v
    state.step += 1
    state.lr_trace.append(lr)
    return lr


class SGD:
    """Bundles clipping, the cosine schedule and momentum for a parameter list."""

    def __init__(self, params, total_steps, base_lr=0.025, momentum=0.9, clip_norm=5.0):
        self.params = list(params)
        self.state = OptimizerState.for_params(
            self.params, total_steps, base_lr=base_lr, momentum=momentum, clip_norm=clip_norm
        )
        self.last_grad_norm = 0.0
        self.last_clipped_norm = 0.0

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        grads, self.last_grad_norm = clip_global_norm(grads, self.state.clip_norm)
        self.last_clipped_norm = global_norm(grads)
        return sgd_momentum_step(self.params, grads, self.state)
