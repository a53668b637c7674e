"""Adam with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .tensor import ShapeError, Tensor


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError(f"learning rate must be non-negative, got {self.lr}")


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[Optional[np.ndarray]],
    state: AdamState,
) -> tuple[list[np.ndarray], AdamState]:
    """One Adam update. Returns new parameter arrays; ``state`` is advanced in place.

    A ``None`` gradient leaves that parameter and its moments untouched.
    """
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameters but {len(grads)} gradients")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p) for p in params]
        state.second_moment = [np.zeros_like(p) for p in params]
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            out.append(p)
            continue
        if g.shape != p.shape or state.first_moment[i].shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter shape {p.shape}")
        m = state.first_moment[i]
        v = state.second_moment[i]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        out.append(p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
    return out, state


class Adam:
    """Applies :func:`adam_step` to tensors in place using their ``.grad``.

    ``lr_scales`` optionally gives one learning-rate multiplier per
    parameter; each distinct multiplier keeps its own moment state.
    """

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, lr_scales: Optional[Sequence[float]] = None):
        self.params = list(params)
        scales = [1.0] * len(self.params) if lr_scales is None else [float(s) for s in lr_scales]
        if len(scales) != len(self.params):
            raise ValueError(f"{len(self.params)} parameters but {len(scales)} learning-rate scales")
        self.groups = []
        for scale in dict.fromkeys(scales):
            members = [p for p, s in zip(self.params, scales) if s == scale]
            self.groups.append((members, AdamState(lr=lr * scale, beta1=beta1, beta2=beta2, eps=eps)))

    @property
    def state(self) -> AdamState:
        return self.groups[0][1]

    def step(self) -> None:
        for members, state in self.groups:
            new, _ = adam_step([p.data for p in members], [p.grad for p in members], state)
            for p, value in zip(members, new):
                p.data = value

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
