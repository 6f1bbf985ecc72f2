"""Central finite-difference verification of reverse-mode gradients.

The default fourth-order stencil keeps both truncation error (O(h^4)) and
roundoff (O(eps / h)) near 1e-11 at h = 1e-4, so a 1e-4 relative tolerance
measures the gradient code rather than the reference.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .autodiff import ShapeError, Tensor, forward_backward


@dataclass
class ParamCheck:
    name: str
    max_rel_error: float
    worst_index: tuple[int, ...] | None
    analytic: float
    numeric: float


@dataclass
class GradCheckReport:
    tolerance: float
    step: float
    params: dict[str, ParamCheck] = field(default_factory=dict)

    @property
    def failed(self) -> list[str]:
        return [n for n, c in self.params.items() if not c.max_rel_error < self.tolerance]

    @property
    def passed(self) -> bool:
        return not self.failed

    @property
    def max_rel_error(self) -> float:
        return max((c.max_rel_error for c in self.params.values()), default=0.0)

    def summary(self) -> str:
        lines = []
        for c in self.params.values():
            flag = "ok" if c.max_rel_error < self.tolerance else "FAIL"
            lines.append(f"{c.name}: max_rel_err={c.max_rel_error:.3e} {flag}")
        return "\n".join(lines)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def grad_check(
    fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    tolerance: float = 1e-4,
    step: float = 1e-4,
    floor: float = 1e-6,
    order: int = 4,
) -> GradCheckReport:
    """Compare analytic gradients of scalar ``fn`` with central differences.

    ``floor`` bounds the denominator of the relative error so that entries
    whose true derivative is (numerically) zero are judged on absolute error.
    Run this on float64 parameters; float32 differences are too noisy.
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    stencil = [(1, 0.5), (-1, -0.5)] if order == 2 else [(2, -1 / 12), (1, 8 / 12), (-1, -8 / 12), (-2, 1 / 12)]
    report = GradCheckReport(tolerance=tolerance, step=step)
    if not params:
        return report

    out, grads = forward_backward(fn, params)
    if out.data.size != 1:
        raise ShapeError("grad_check", out.shape, detail="loss must be scalar")

    for p in params.values():
        p.requires_grad = False
    try:
        for name, p in params.items():
            numeric = np.zeros(p.shape, dtype=np.float64)
            flat = p.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                acc = 0.0
                for shift, coef in stencil:
                    flat[i] = orig + shift * step
                    acc += coef * float(fn().data)
                flat[i] = orig
                numeric.reshape(-1)[i] = acc / step
            analytic = np.asarray(grads[name], dtype=np.float64)
            err = relative_error(analytic, numeric, floor)
            if err.size:
                worst = np.unravel_index(int(np.argmax(err)), err.shape)
                report.params[name] = ParamCheck(
                    name, float(err[worst]), tuple(int(i) for i in worst),
                    float(analytic[worst]), float(numeric[worst]),
                )
            else:
                report.params[name] = ParamCheck(name, 0.0, None, 0.0, 0.0)
    finally:
        for p in params.values():
            p.requires_grad = True
    return report
