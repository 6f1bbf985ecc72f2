"""Adaptive-moment optimizer over named numpy parameters."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .autodiff import Tensor


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, names: list[str]):
        self.names = names
        super().__init__(f"non-finite gradient in: {', '.join(names)}")


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


class Adam:
    """Bias-corrected Adam.

    The step is all-or-nothing: if any gradient contains NaN/Inf no parameter
    or moment is touched and :class:`NonFiniteGradientError` is raised.
    """

    def __init__(self, params: Mapping[str, Tensor], lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = dict(params)
        self.state = OptimizerState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)
        for name, p in self.params.items():
            self.state.m[name] = np.zeros_like(p.data)
            self.state.v[name] = np.zeros_like(p.data)

    def step(self, grads: Mapping[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            if grads[name].shape != p.shape:
                raise ValueError(f"gradient for {name} has shape {grads[name].shape}, expected {p.shape}")
        bad = [n for n in self.params if not np.all(np.isfinite(grads[n]))]
        if bad:
            raise NonFiniteGradientError(bad)

        s = self.state
        s.step += 1
        c1 = 1 - s.beta1**s.step
        c2 = 1 - s.beta2**s.step
        for name, p in self.params.items():
            g = grads[name]
            m, v = s.m[name], s.v[name]
            m *= s.beta1
            m += (1 - s.beta1) * g
            v *= s.beta2
            v += (1 - s.beta2) * g * g
            update = s.lr * (m / c1) / (np.sqrt(v / c2) + s.eps)
            p.data -= update.astype(p.dtype, copy=False)


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Rescale ``grads`` in place so their joint L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))
    if max_norm > 0 and total > max_norm and np.isfinite(total):
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total
