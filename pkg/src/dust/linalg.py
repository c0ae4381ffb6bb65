"""Dense-matrix helpers shared by the data, estimation and steering layers.

Everything here is a thin, deterministic wrapper around SVD/eigendecompositions
with the truncation conventions used throughout the package.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "pseudo_inverse",
    "matrix_rank",
    "spectral_norm",
    "sigma_min",
    "psd_sqrt",
    "sym",
    "is_symmetric",
    "min_eig",
]


def _svd_tol(s: np.ndarray, shape: tuple[int, int]) -> float:
    # standard truncation: max(dims) * machine eps * sigma_max
    if s.size == 0:
        return 0.0
    return max(shape) * np.finfo(float).eps * float(s[0])


def pseudo_inverse(M: np.ndarray) -> np.ndarray:
    """Moore-Penrose pseudoinverse with SVD truncation at max(p,q)*eps*sigma_max.

    Satisfies the four Penrose identities to high accuracy for well-scaled
    inputs; rank decisions use the same tolerance as :func:`matrix_rank`.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ValueError(f"expected a matrix, got ndim={M.ndim}")
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    tol = _svd_tol(s, M.shape)
    inv = np.where(s > tol, 1.0 / np.where(s > tol, s, 1.0), 0.0)
    return (Vt.T * inv) @ U.T


def matrix_rank(M: np.ndarray) -> int:
    """Numerical rank from singular values, truncated at max(dims)*eps*sigma_max."""
    M = np.asarray(M, dtype=float)
    s = np.linalg.svd(M, compute_uv=False)
    return int(np.sum(s > _svd_tol(s, M.shape)))


def spectral_norm(M: np.ndarray) -> float:
    """Largest singular value."""
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return 0.0
    return float(np.linalg.svd(M, compute_uv=False)[0])


def sigma_min(M: np.ndarray) -> float:
    """Smallest singular value (of min(p, q) total)."""
    M = np.asarray(M, dtype=float)
    return float(np.linalg.svd(M, compute_uv=False)[-1])


def sym(M: np.ndarray) -> np.ndarray:
    """Symmetric part (M + M^T)/2."""
    return 0.5 * (M + M.T)


def is_symmetric(M: np.ndarray, tol: float = 1e-10) -> bool:
    M = np.asarray(M, dtype=float)
    scale = 1.0 + float(np.abs(M).max()) if M.size else 1.0
    return bool(np.abs(M - M.T).max() <= tol * scale) if M.size else True


def min_eig(M: np.ndarray) -> float:
    """Smallest eigenvalue of the symmetrized matrix."""
    return float(np.linalg.eigvalsh(sym(np.asarray(M, dtype=float)))[0])


def psd_sqrt(M: np.ndarray, floor: float = 0.0) -> np.ndarray:
    """Symmetric square root of a PSD matrix via eigendecomposition.

    Eigenvalues below ``floor`` are clipped to ``floor`` before the square
    root, which keeps sampling and whitening well-defined for matrices that
    are PSD only up to roundoff.
    """
    M = sym(np.asarray(M, dtype=float))
    w, V = np.linalg.eigh(M)
    w = np.clip(w, floor, None)
    return (V * np.sqrt(w)) @ V.T
