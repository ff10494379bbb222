"""Deterministic tensor algebra with reverse-mode autodiff.

Public surface: the Tensor graph ops, labelled random streams, gradient
checking, the PSD matrix square root, and binary tensor serialization.
"""

from __future__ import annotations

import numpy as np

from ..errors import NumericsError, ShapeError
from . import tensor as ops
from .gradcheck import GradCheckReport, grad_check
from .linalg import sqrtm_psd
from .module import Module
from .optim import Adam
from .rng import RngStream
from .serialize import load_archive, load_tensor, save_archive, save_tensor
from .tensor import Tensor, check_finite

__all__ = [
    "Adam", "GradCheckReport", "Module", "RngStream", "Tensor", "check_finite",
    "gaussian_kl", "grad_check", "load_archive", "load_tensor", "ops",
    "reparam_sample", "save_archive", "save_tensor", "softmax", "sqrtm_psd",
]


def softmax(x, axis: int = -1):
    """Exp-normalize along one axis; ndarray in, ndarray out (Tensor likewise)."""
    if isinstance(x, Tensor):
        return ops.softmax(x, axis)
    return ops.softmax(Tensor(np.asarray(x, dtype=np.float64)), axis).data


def reparam_sample(mu: Tensor, logvar: Tensor, rng: RngStream) -> Tensor:
    """mu + exp(logvar/2) * eps with eps ~ N(0, 1) drawn from rng.

    Differentiable w.r.t. mu and logvar; the draw itself is a constant.
    """
    if mu.shape != logvar.shape:
        raise ShapeError(f"reparam_sample: mu {mu.shape} vs logvar {logvar.shape}")
    eps = Tensor(rng.normal(mu.shape).astype(mu.data.dtype))
    out = mu + ops.texp(logvar * 0.5) * eps
    check_finite("reparam_sample", out)
    return out


def gaussian_kl(mu: Tensor, logvar: Tensor) -> Tensor:
    """KL(N(mu, diag exp(logvar)) || N(0, I)) summed over coordinates."""
    if mu.shape != logvar.shape:
        raise ShapeError(f"gaussian_kl: mu {mu.shape} vs logvar {logvar.shape}")
    if not (np.isfinite(mu.data).all() and np.isfinite(logvar.data).all()):
        raise NumericsError("gaussian_kl: non-finite input")
    total = ops.tsum(ops.square(mu) + ops.texp(logvar) - logvar - 1.0) * 0.5
    check_finite("gaussian_kl", total)
    return total
