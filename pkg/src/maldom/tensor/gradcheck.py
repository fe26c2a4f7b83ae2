"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import Tensor, no_grad, precision


@dataclass
class GradcheckReport:
    passed: bool
    max_rel_error: float
    tol: float
    per_input: list[float] = field(default_factory=list)


def _scalarize(out: Tensor, weights: np.ndarray | None) -> Tensor:
    if weights is None:
        return out
    return (out * Tensor(weights)).sum()


def gradcheck(
    f: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    tol: float = 1e-4,
    h: float = 1e-4,
    seed: int = 0,
    wrt: Sequence[int] | None = None,
) -> GradcheckReport:
    """Compare backward() against central differences in float64.

    Non-scalar outputs are reduced with a fixed random projection. The error
    for each input is ``max|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)``
    taken over whole gradient arrays (infinity norms).
    """
    wrt = range(len(inputs)) if wrt is None else wrt
    with precision(np.float64):
        arrays = [np.array(a, dtype=np.float64) for a in inputs]
        tensors = [Tensor(a, requires_grad=i in wrt) for i, a in enumerate(arrays)]
        out = f(*tensors)
        weights = None
        if out.data.size != 1 or out.ndim != 0:
            weights = np.random.default_rng(seed).standard_normal(out.shape)
        _scalarize(out, weights).backward()

        def value() -> float:
            with no_grad():
                return float(_scalarize(f(*[Tensor(a) for a in arrays]), weights).data)

        errors = []
        for i in wrt:
            analytic = tensors[i].grad
            if analytic is None:
                analytic = np.zeros_like(arrays[i])
            numeric = np.zeros_like(arrays[i])
            flat = arrays[i].reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + h
                up = value()
                flat[j] = orig - h
                down = value()
                flat[j] = orig
                numeric.reshape(-1)[j] = (up - down) / (2 * h)
            scale = max(np.abs(analytic).max(initial=0), np.abs(numeric).max(initial=0), 1e-6)
            errors.append(float(np.abs(analytic - numeric).max(initial=0) / scale))
    worst = max(errors, default=0.0)
    return GradcheckReport(worst < tol, worst, tol, errors)
