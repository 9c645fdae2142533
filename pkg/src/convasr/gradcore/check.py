"""Central-difference gradient checking."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, grad


@dataclass
class GradCheckReport:
    max_rel_err: float
    per_input: list[float]
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_err < self.tol)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest per-coordinate relative error.

    The denominator is floored at a thousandth of the largest numeric gradient
    component (and at 1e-8) so coordinates with near-zero gradient are judged
    on an absolute scale instead of amplifying round-off.
    """
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    if analytic.size == 0:
        return 0.0
    floor = max(1e-3 * float(np.abs(numeric).max()), 1e-8)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((np.abs(analytic - numeric) / denom).max())


def numeric_gradient(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray], index: int,
                     h: float = 1e-5) -> np.ndarray:
    base = [np.array(a, dtype=np.float64, copy=True) for a in arrays]
    target = base[index]
    out = np.zeros_like(target)
    flat = target.reshape(-1)
    gflat = out.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        plus = fn(*[Tensor(a) for a in base]).item()
        flat[k] = orig - h
        minus = fn(*[Tensor(a) for a in base]).item()
        flat[k] = orig
        gflat[k] = (plus - minus) / (2 * h)
    return out


def grad_check(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], h: float = 1e-5,
               tol: float = 1e-5, wrt: Sequence[int] | None = None) -> GradCheckReport:
    """Compare reverse-mode gradients of scalar ``fn`` with central differences.

    ``fn`` receives one :class:`Tensor` per input array and must return a scalar
    tensor. Everything runs in float64.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in inputs]
    wrt = range(len(arrays)) if wrt is None else wrt
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = fn(*leaves)
    analytic = grad(out, leaves)
    errs = []
    for i in wrt:
        errs.append(relative_error(analytic[i], numeric_gradient(fn, arrays, i, h)))
    return GradCheckReport(max(errs) if errs else 0.0, errs, tol)
