"""Symmetric PSD matrix square root via eigendecomposition."""

from __future__ import annotations

import numpy as np

from ..errors import LinAlgError

SYM_TOL = 1e-8
EIG_CLAMP = -1e-8


def sqrtm_psd(a: np.ndarray) -> np.ndarray:
    """Symmetric B with B @ B ~= a, for symmetric PSD a.

    Eigenvalues in [-1e-8, 0) are clamped to 0 (sample covariances of small
    batches are numerically indefinite); anything more negative is rejected.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise LinAlgError(f"sqrtm_psd: expected square matrix, got {a.shape}")
    scale = max(1.0, float(np.abs(a).max(initial=0.0)))
    if float(np.abs(a - a.T).max(initial=0.0)) > SYM_TOL * scale:
        raise LinAlgError("sqrtm_psd: matrix not symmetric within tolerance")
    sym = 0.5 * (a + a.T)
    vals, vecs = np.linalg.eigh(sym)
    if vals.min(initial=0.0) < EIG_CLAMP * scale:
        raise LinAlgError(f"sqrtm_psd: matrix indefinite (min eigenvalue {vals.min():.3e})")
    vals = np.maximum(vals, 0.0)
    root = (vecs * np.sqrt(vals)) @ vecs.T
    return 0.5 * (root + root.T)
