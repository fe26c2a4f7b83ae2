"""AdamW with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..tensor import Parameter


@dataclass
class AdamState:
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adamw_step(
    params: Sequence[Parameter],
    grads: Sequence[np.ndarray | None],
    state: AdamState,
    lr: float,
    weight_decay: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    """One in-place update.

    The decay ``p -= lr * wd * p`` is applied separately from the Adam
    step, and only to parameters whose ``decay`` flag is set (biases and
    layer-norm parameters clear it). Parameters whose gradient is ``None``
    are left untouched.
    """
    b1, b2 = betas
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    state.step += 1
    c1 = 1 - b1 ** state.step
    c2 = 1 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            continue
        if weight_decay and getattr(p, "decay", True):
            p.data *= 1 - lr * weight_decay
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


class AdamW:
    def __init__(self, params: Sequence[Parameter], lr: float, weight_decay: float = 0.0,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.state = AdamState()

    def step(self) -> None:
        adamw_step(self.params, [p.grad for p in self.params], self.state,
                   self.lr, self.weight_decay, self.betas, self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
