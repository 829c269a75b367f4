"""Principal components of tangent vectors (the Log-PCA latent space).

Two score conventions are supported:

``orthonormal`` (default)
    ``x = U^T (v - m)`` and ``v = m + U x``; an isometry on the subspace.
``scaled``
    ``x = Lambda^{1/2} U^T (v - m)`` and ``v = m + U Lambda^{-1/2} x``.

The residual distance to the subspace is the same under both.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDirectionError, DomainError, NumericalError
from .histogram import PixelGrid
from .lot import TangentVector, as_matrix

CONVENTIONS = ("orthonormal", "scaled")
_ZERO_EIG = 1e-12


@dataclass(frozen=True, eq=False)
class PcaModel:
    grid: PixelGrid
    mean: np.ndarray = field(repr=False)
    basis: np.ndarray = field(repr=False)
    eigenvalues: np.ndarray
    convention: str = "orthonormal"
    metric_weights: np.ndarray | None = field(default=None, repr=False)
    total_variance: float = 0.0

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @property
    def weighted(self) -> bool:
        return self.metric_weights is not None

    def explained_variance_ratio(self) -> np.ndarray:
        if self.total_variance <= 0:
            return np.zeros(self.dim)
        return self.eigenvalues / self.total_variance

    def _to_space(self, X: np.ndarray) -> np.ndarray:
        if self.metric_weights is None:
            return X
        return X * np.sqrt(self.metric_weights)


def _flat(v) -> np.ndarray:
    return v.flatten() if isinstance(v, TangentVector) else np.asarray(v, dtype=np.float64)


def _complete_basis(U: np.ndarray, dim: int, target: int) -> np.ndarray:
    """Extend orthonormal columns ``U`` to ``target`` orthonormal columns."""
    k = U.shape[1]
    if k >= target:
        return U
    Q = np.linalg.qr(np.hstack([U, np.eye(dim)]))[0]
    return np.hstack([U, Q[:, k:target]])


def _rank(lam: np.ndarray) -> int:
    """Number of leading eigenvalues that are numerically nonzero."""
    top = lam[0] if lam.size else 0.0
    if top <= 0:
        return 0
    return int(np.sum(lam > _ZERO_EIG * top))


def _fix_signs(U: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs


def fit(vectors, d: int, convention: str = "orthonormal", weights: np.ndarray | None = None,
        grid: PixelGrid | None = None) -> PcaModel:
    """Fit the top-``d`` principal subspace of tangent vectors.

    Uses the ``n x n`` Gram matrix when ``n <= 2p`` and the ``2p x 2p``
    covariance otherwise. The covariance is normalized by ``n - 1``.
    ``weights`` (length ``2p``) switches to the template-weighted metric.
    """
    if convention not in CONVENTIONS:
        raise DomainError(f"unknown convention {convention!r}")
    if isinstance(vectors, np.ndarray):
        if grid is None:
            raise DomainError("grid is required when fitting on a raw matrix")
        X = np.asarray(vectors, dtype=np.float64)
    else:
        vectors = list(vectors)
        if len(vectors) < 2:
            raise DomainError("PCA needs at least two vectors")
        grid = grid or vectors[0].grid
        X = as_matrix(vectors)
    n, D = X.shape
    if D != 2 * grid.size:
        raise DomainError("vector length does not match the grid")
    if n < 2:
        raise DomainError("PCA needs at least two vectors")
    if not 1 <= d <= min(n - 1, D):
        raise DomainError(f"latent dimension d={d} out of range [1, {min(n - 1, D)}]")
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64)
        X = X * np.sqrt(weights)
    mean = X.mean(axis=0)
    Xc = X - mean
    total = float(np.sum(Xc * Xc) / (n - 1))
    try:
        if n <= D:
            lam, A = np.linalg.eigh(Xc @ Xc.T / (n - 1))
            lam, A = lam[::-1], A[:, ::-1]
            k = min(_rank(lam), d)
            U = Xc.T @ A[:, :k] / np.sqrt((n - 1) * lam[:k])
            if k:
                # Re-orthonormalize to remove Gram-route round-off.
                U = np.linalg.qr(U)[0]
        else:
            lam, V = np.linalg.eigh(Xc.T @ Xc / (n - 1))
            lam, V = lam[::-1], V[:, ::-1]
            k = min(_rank(lam), d)
            U = V[:, :k]
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc
    eig = np.zeros(d)
    eig[:k] = lam[:k]
    U = _complete_basis(U, D, d)
    U = _fix_signs(U)
    return PcaModel(grid, mean, U, eig, convention, weights, total)


def project_matrix(X: np.ndarray, model: PcaModel) -> np.ndarray:
    Z = (model._to_space(np.atleast_2d(X)) - model.mean) @ model.basis
    if model.convention == "scaled":
        Z = Z * np.sqrt(model.eigenvalues)
    return Z


def project(v, model: PcaModel) -> np.ndarray:
    """Latent coordinates of a tangent vector."""
    return project_matrix(_flat(v)[None, :], model)[0]


def reconstruct(x, model: PcaModel) -> TangentVector:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.dim,):
        raise DomainError(f"expected a latent vector of length {model.dim}")
    if model.convention == "scaled":
        zero = model.eigenvalues <= 0
        if np.any(zero & (x != 0)):
            raise DegenerateDirectionError("nonzero coordinate along a zero-variance direction")
        coef = np.zeros_like(x)
        coef[~zero] = x[~zero] / np.sqrt(model.eigenvalues[~zero])
    else:
        coef = x
    v = model.mean + model.basis @ coef
    if model.metric_weights is not None:
        w = np.sqrt(model.metric_weights)
        v = np.divide(v, w, out=np.zeros_like(v), where=w > 0)
    return TangentVector.from_flat(model.grid, v)


def residual_matrix(X: np.ndarray, model: PcaModel) -> np.ndarray:
    R = model._to_space(np.atleast_2d(X)) - model.mean
    R = R - (R @ model.basis) @ model.basis.T
    return np.linalg.norm(R, axis=1)


def residual_distance(v, model: PcaModel) -> float:
    """Euclidean distance from ``v`` to the affine principal subspace."""
    return float(residual_matrix(_flat(v)[None, :], model)[0])
