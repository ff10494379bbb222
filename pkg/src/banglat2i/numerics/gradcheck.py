"""Central finite-difference verification of autodiff gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..errors import NumericsError
from .tensor import Tensor


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_parameter: str
    passed: bool


def grad_check(f: Callable[[], Tensor], params: Sequence[tuple[str, Tensor]],
               eps: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare autodiff gradients of scalar f() against central differences.

    Per parameter the relative error is max|ad - fd| scaled by the larger of
    the two gradients' max magnitudes (floored at 1e-8), so near-zero entries
    are judged against the tensor's own gradient scale. Ties across parameters
    keep the first in declaration order.
    """
    if not (1e-6 <= eps <= 1e-4):
        raise ValueError("eps must lie in [1e-6, 1e-4]")
    params = list(params)
    for _, p in params:
        p.grad = None
    out = f()
    if not np.isfinite(out.data).all():
        raise NumericsError("grad_check: non-finite function value")
    out.backward()
    analytic = []
    for name, p in params:
        analytic.append(np.zeros_like(p.data) if p.grad is None else p.grad.copy())
        p.grad = None

    def evaluate() -> float:
        val = f()
        v = float(val.data.reshape(-1)[0])
        if not np.isfinite(v):
            raise NumericsError("grad_check: non-finite probe value")
        return v

    max_rel = -1.0
    worst = params[0][0] if params else ""
    for (name, p), ad in zip(params, analytic):
        flat = p.data.reshape(-1)
        fd = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = evaluate()
            flat[i] = orig - eps
            f_minus = evaluate()
            flat[i] = orig
            fd[i] = (f_plus - f_minus) / (2.0 * eps)
        fd = fd.reshape(p.data.shape)
        scale = max(np.abs(ad).max(initial=0.0), np.abs(fd).max(initial=0.0), 1e-8)
        rel = float(np.abs(ad - fd).max(initial=0.0) / scale)
        if rel > max_rel:
            max_rel = rel
            worst = name
    max_rel = max(max_rel, 0.0)
    return GradCheckReport(max_rel_err=max_rel, worst_parameter=worst, passed=max_rel <= tol)
