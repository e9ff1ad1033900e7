"""Dense linear-algebra primitives shared by the rest of the package.

Everything here operates on plain float64 numpy arrays and is a pure
function of its inputs, so all routines are safe to call concurrently from
parallel episode workers.

Convention: covariances use the population divisor ``n`` (not ``n - 1``).
Eigenvalues quoted anywhere in this package follow that convention, which
matters when comparing against per-dimension variances.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "NumericalWarning",
    "as_matrix",
    "column_mean",
    "covariance",
    "pairwise_sqdist",
    "softmax_rows",
    "sym_eig",
]

# Eigenvalues at or below this threshold are treated as numerically zero
# when deciding how many usable dimensions a sample pool spans.
RANK_EPS = 1e-10


class NumericalWarning(UserWarning):
    """Degenerate numerical input handled by a documented fallback."""


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Validate ``x`` as a finite 2-D float64 array and return it."""
    X = np.asarray(x, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {X.shape}")
    if X.size and not np.isfinite(X).all():
        raise ValueError(f"{name} contains NaN or Inf")
    return X


def column_mean(X) -> np.ndarray:
    """Arithmetic mean of each column.

    Raises ValueError("empty input") when there are no rows.
    """
    X = as_matrix(X)
    if X.shape[0] < 1:
        raise ValueError("empty input")
    return X.mean(axis=0)


def covariance(X) -> np.ndarray:
    """Population covariance (divisor n) of the rows of ``X``.

    The result is symmetrized exactly, so it is safe to feed straight into
    :func:`sym_eig`.  Requires at least two rows.
    """
    X = as_matrix(X)
    n = X.shape[0]
    if n < 2:
        raise ValueError("insufficient samples")
    Xc = X - X.mean(axis=0)
    C = (Xc.T @ Xc) / n
    return (C + C.T) / 2.0


def sym_eig(C) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues sorted in
    descending order and eigenvectors as orthonormal columns.  Each
    eigenvector is flipped so that its largest-magnitude entry is positive,
    making the output deterministic up to degenerate eigenvalues.

    Input must be symmetric within 1e-8 (relative to its largest entry);
    it is symmetrized via (C + C^T)/2 before decomposition.
    """
    C = as_matrix(C)
    if C.shape[0] != C.shape[1]:
        raise ValueError(f"matrix must be square, got shape {C.shape}")
    scale = max(1.0, float(np.abs(C).max())) if C.size else 1.0
    if float(np.abs(C - C.T).max()) > 1e-8 * scale:
        raise ValueError("matrix is not symmetric")
    evals, evecs = np.linalg.eigh((C + C.T) / 2.0)
    order = np.argsort(evals)[::-1]
    evals = evals[order]
    evecs = evecs[:, order]
    return evals, flip_signs(evecs)


def flip_signs(V: np.ndarray) -> np.ndarray:
    """Flip each column of ``V`` so its largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def pairwise_sqdist(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between rows of ``A`` and rows of ``B``.

    Computed from the expansion |a|^2 - 2 a.b + |b|^2 with a clamp at zero,
    so tiny negative values from cancellation never leak out.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    sq = (A * A).sum(axis=1)[:, None] - 2.0 * (A @ B.T) + (B * B).sum(axis=1)[None, :]
    return np.maximum(sq, 0.0)


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max-subtraction for numerical stability."""
    logits = np.asarray(logits, dtype=np.float64)
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)
