"""Task-adaptive feature subspace fitting: PCA, whitening, and FastICA.

A few-shot episode pools its samples (support + queries in the transductive
setting, support + extra unlabeled data in the semi-supervised one) and fits
a low-dimensional linear map on that pool alone.  The fitted
:class:`SubspaceProjection` then maps every set of the episode into the
subspace where classification happens.

Dimension defaults: 4 components for PCA, 10 for ICA.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from tafssl.linalg import RANK_EPS, as_matrix, flip_signs

__all__ = [
    "ICA_DEFAULT_DIM",
    "PCA_DEFAULT_DIM",
    "SubspaceProjection",
    "fit_ica",
    "fit_pca",
    "whiten",
]

PCA_DEFAULT_DIM = 4
ICA_DEFAULT_DIM = 10

# FastICA settings: symmetric (parallel) decorrelation with g = tanh.
ICA_MAX_ITER = 200
ICA_TOL = 1e-4


@dataclass(frozen=True)
class SubspaceProjection:
    """An affine map ``x -> W @ (x - center)`` into an r-dimensional subspace.

    ``meta`` carries fit diagnostics: eigenvalues for PCA/whitening, the
    orthogonal unmixing matrix and convergence flag for ICA, and an
    ``r_reduced`` note when the requested dimension had to shrink because
    the pool was too small.
    """

    W: np.ndarray
    center: np.ndarray
    method: str
    meta: dict = field(default_factory=dict)

    @property
    def r(self) -> int:
        return self.W.shape[0]

    @property
    def m(self) -> int:
        return self.W.shape[1]

    def apply(self, X) -> np.ndarray:
        """Project rows of ``X`` (shape rows x m) into the subspace."""
        X = as_matrix(X)
        if X.shape[1] != self.m:
            raise ValueError(f"dimension mismatch: projection expects {self.m} columns, got {X.shape[1]}")
        return (X - self.center) @ self.W.T


def _principal_axes(X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Center ``X`` and return (mean, eigenvalues desc, principal axes as rows).

    Uses the SVD of the centered data matrix, which is equivalent to the
    eigendecomposition of the divisor-n covariance but much cheaper when
    there are far fewer samples than feature dimensions.
    """
    mean = X.mean(axis=0)
    _, svals, vt = np.linalg.svd(X - mean, full_matrices=False)
    evals = (svals * svals) / X.shape[0]
    return mean, evals, flip_signs(vt.T).T


def _effective_dim(requested: int, n_rows: int, meta: dict) -> int:
    """Shrink ``requested`` to n_rows - 1 when the pool is too small.

    A pool of n samples spans at most n - 1 centered directions, so rather
    than failing the episode the fit proceeds at the reduced dimension and
    records the reduction.
    """
    if n_rows < requested + 1:
        reduced = n_rows - 1
        meta["r_reduced"] = {"requested": requested, "used": reduced}
        return reduced
    return requested


def whiten(X, r: int) -> tuple[np.ndarray, SubspaceProjection]:
    """Whiten ``X`` down to ``r`` dimensions.

    Output columns have zero mean, unit (divisor-n) variance and zero
    pairwise covariance.  Raises when fewer than ``r`` eigenvalues exceed
    the rank threshold.
    """
    X = as_matrix(X)
    if X.shape[0] < 2:
        raise ValueError("insufficient samples")
    if r < 1:
        raise ValueError("r must be >= 1")
    mean, evals, axes = _principal_axes(X)
    available = int((evals > RANK_EPS).sum())
    if r > available:
        raise ValueError(f"rank deficient: requested {r}, available {available}")
    W = axes[:r] / np.sqrt(evals[:r])[:, None]
    proj = SubspaceProjection(W=W, center=mean, method="whiten", meta={"eigenvalues": evals[:r].copy()})
    return proj.apply(X), proj


def fit_pca(X, r: int = PCA_DEFAULT_DIM) -> SubspaceProjection:
    """Fit a PCA projection onto the top-``r`` variance directions of ``X``.

    Rows of ``W`` are the orthonormal eigenvectors of the divisor-n
    covariance, ordered by descending eigenvalue; the training data
    projected through the result has per-dimension variance equal to those
    eigenvalues.
    """
    X = as_matrix(X)
    if X.shape[0] < 2:
        raise ValueError("insufficient samples")
    if r < 1:
        raise ValueError("r must be >= 1")
    meta: dict = {}
    r = _effective_dim(r, X.shape[0], meta)
    mean, evals, axes = _principal_axes(X)
    available = int((evals > RANK_EPS).sum())
    if r > available:
        raise ValueError(f"rank deficient: requested {r}, available {available}")
    meta["eigenvalues"] = evals[:r].copy()
    return SubspaceProjection(W=axes[:r].copy(), center=mean, method="pca", meta=meta)


def _sym_decorrelate(W: np.ndarray) -> np.ndarray:
    """Replace ``W`` by (W W^T)^(-1/2) W, making its rows orthonormal."""
    d, V = np.linalg.eigh(W @ W.T)
    d = np.maximum(d, 1e-12)
    return (V / np.sqrt(d)) @ V.T @ W


def _fastica_parallel(Z: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, bool, int]:
    """Symmetric fixed-point FastICA with tanh nonlinearity on whitened ``Z``.

    Returns (orthogonal unmixing matrix, converged flag, iterations run).
    Convergence is measured as max_i | |diag(W_new W_old^T)|_i - 1 |.
    """
    n, r = Z.shape
    W = _sym_decorrelate(rng.standard_normal((r, r)))
    converged = False
    iterations = 0
    for iterations in range(1, ICA_MAX_ITER + 1):
        S = Z @ W.T
        G = np.tanh(S)
        # Fixed-point update w <- E[z g(w.z)] - E[g'(w.z)] w with g = tanh.
        W_new = (G.T @ Z) / n - (1.0 - G * G).mean(axis=0)[:, None] * W
        W_new = _sym_decorrelate(W_new)
        delta = float(np.abs(np.abs(np.einsum("ij,ij->i", W_new, W)) - 1.0).max())
        W = W_new
        if delta < ICA_TOL:
            converged = True
            break
    return W, converged, iterations


def _excess_kurtosis(S: np.ndarray) -> np.ndarray:
    """Per-column excess kurtosis, used to order ICA components."""
    Sc = S - S.mean(axis=0)
    m2 = (Sc * Sc).mean(axis=0)
    m4 = (Sc**4).mean(axis=0)
    m2 = np.maximum(m2, 1e-300)
    return m4 / (m2 * m2) - 3.0


def fit_ica(X, r: int = ICA_DEFAULT_DIM, seed: int = 0) -> SubspaceProjection:
    """Fit a FastICA projection: whiten ``X`` to ``r`` dimensions, then unmix.

    The unmixing matrix starts from a seeded orthonormalized normal draw and
    iterates the symmetric tanh fixed point; the result is deterministic for
    a fixed seed.  Components are ordered by descending excess kurtosis of
    the projected training data.  If the fixed point does not converge
    within the iteration budget the best iterate is returned with
    ``meta["converged"] = False``.
    """
    X = as_matrix(X)
    if X.shape[0] < 2:
        raise ValueError("insufficient samples")
    if r < 1:
        raise ValueError("r must be >= 1")
    meta: dict = {}
    r = _effective_dim(r, X.shape[0], meta)
    Z, white = whiten(X, r)

    rng = np.random.default_rng(seed)
    W_unmix, converged, iterations = _fastica_parallel(Z, rng)
    meta["converged"] = converged
    meta["iterations"] = iterations

    order = np.argsort(-_excess_kurtosis(Z @ W_unmix.T), kind="stable")
    W_unmix = W_unmix[order]

    W = W_unmix @ white.W
    # Sign convention on the full map keeps outputs deterministic; flipping a
    # row flips the corresponding component, which ICA leaves unidentified.
    idx = np.argmax(np.abs(W), axis=1)
    signs = np.sign(W[np.arange(W.shape[0]), idx])
    signs[signs == 0] = 1.0
    W = W * signs[:, None]
    meta["unmixing"] = W_unmix * signs[:, None]
    return SubspaceProjection(W=W, center=white.center, method="ica", meta=meta)
