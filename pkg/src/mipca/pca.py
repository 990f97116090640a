"""Complete-data PCA: truncated SVD, noise variance and shrinkage.

Conventions
-----------
``SvdFactors.d`` holds the singular values of the centered matrix. The
eigenvalues of ``X'X`` are ``d**2``; those are the quantities compared
against the noise floor ``n p sigma^2 / min(n - 1, p)`` when computing
shrinkage factors, while reconstructions use ``d`` itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import IncompleteMatrix, as_incomplete
from .errors import DegenerateDofError, EmptyColumnError, RankTooLargeError


@dataclass(frozen=True, eq=False)
class SvdFactors:
    U: np.ndarray  # n x S
    d: np.ndarray  # S singular values, descending
    V: np.ndarray  # p x S

    @property
    def rank(self) -> int:
        return self.d.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.U.shape[0], self.V.shape[0]

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.d**2


@dataclass(frozen=True, eq=False)
class PcaFit:
    factors: SvdFactors
    sigma2: float
    phi: np.ndarray
    xhat: np.ndarray
    xhat_rpca: np.ndarray

    @property
    def rank(self) -> int:
        return self.factors.rank


def max_rank(n: int, p: int) -> int:
    """Largest rank a column-centered ``n x p`` matrix can have."""
    return min(n - 1, p)


def observed_column_means(x: IncompleteMatrix | np.ndarray) -> np.ndarray:
    """Means of each column over its observed cells."""
    if isinstance(x, IncompleteMatrix):
        mask = x.mask
        values = np.where(mask, x.values, 0.0)
    else:
        arr = np.asarray(x, dtype=float)
        mask = ~np.isnan(arr)
        values = np.where(mask, arr, 0.0)
    counts = mask.sum(axis=0)
    if np.any(counts == 0):
        raise EmptyColumnError(
            f"column(s) {np.flatnonzero(counts == 0) + 1} have no observed value"
        )
    return values.sum(axis=0) / counts


def _fix_signs(U, d, Vt):
    # Largest-magnitude loading of every component is made positive.
    idx = np.argmax(np.abs(Vt), axis=1)
    signs = np.sign(Vt[np.arange(Vt.shape[0]), idx])
    signs[signs == 0] = 1.0
    return U * signs, d, (Vt.T * signs)


def truncated_svd(x: np.ndarray, rank: int, centered: bool = True) -> SvdFactors:
    """Best rank-``rank`` factorization of ``x`` in Frobenius norm.

    With ``centered=True`` (the default, and the only way the imputation
    code calls it) the rank is capped at ``min(n - 1, p)``; pass
    ``centered=False`` to factor an arbitrary matrix up to ``min(n, p)``.
    """
    x = np.asarray(x, dtype=float)
    n, p = x.shape
    cap = max_rank(n, p) if centered else min(n, p)
    if rank < 0 or rank > cap:
        raise RankTooLargeError(f"rank {rank} outside [0, {cap}] for a {n}x{p} matrix")
    U, d, Vt = np.linalg.svd(x, full_matrices=False)
    U, d, V = _fix_signs(U[:, :rank], d[:rank], Vt[:rank])
    return SvdFactors(U, d, V)


def ml_reconstruct(f: SvdFactors) -> np.ndarray:
    return (f.U * f.d) @ f.V.T


def residual_dof(n: int, p: int, rank: int) -> int:
    """Cells minus free parameters of the centered rank-``rank`` model."""
    return n * p - (p + rank * (n - 1 + p - rank))


def estimate_sigma2(x: np.ndarray, xhat: np.ndarray, rank: int) -> float:
    """Residual sum of squares over the residual degrees of freedom."""
    n, p = np.shape(x)
    dof = residual_dof(n, p, rank)
    if dof <= 0:
        raise DegenerateDofError(
            f"no residual degrees of freedom for rank {rank} on a {n}x{p} matrix"
        )
    resid = np.asarray(x) - np.asarray(xhat)
    return float(np.sum(resid * resid) / dof)


def noise_floor(sigma2: float, n: int, p: int) -> float:
    """Expected eigenvalue contribution of pure noise per dimension."""
    return n * p / max_rank(n, p) * sigma2


def shrinkage_factors(eigenvalues, sigma2: float, n: int, p: int) -> np.ndarray:
    """Signal-to-total variance ratio of each component, clamped to [0, 1].

    ``eigenvalues`` are the squared singular values of the centered data.
    """
    lam = np.asarray(eigenvalues, dtype=float)
    floor = noise_floor(sigma2, n, p)
    with np.errstate(divide="ignore", invalid="ignore"):
        phi = np.where(lam > 0, (lam - floor) / lam, 0.0)
    return np.clip(phi, 0.0, 1.0)


def rpca_reconstruct(f: SvdFactors, phi) -> np.ndarray:
    return (f.U * (np.asarray(phi, dtype=float) * f.d)) @ f.V.T


def fit_pca(x: np.ndarray, rank: int, regularize: bool = True) -> PcaFit:
    """Fit the fixed-effect PCA model to a centered complete matrix.

    When ``regularize`` is False the noise variance is only estimated if the
    residual degrees of freedom allow it (NaN otherwise) and the shrinkage
    factors are left at one.
    """
    x = np.asarray(x, dtype=float)
    n, p = x.shape
    f = truncated_svd(x, rank)
    xhat = ml_reconstruct(f)
    try:
        sigma2 = estimate_sigma2(x, xhat, rank)
    except DegenerateDofError:
        if regularize:
            raise
        sigma2 = float("nan")
    if regularize:
        phi = shrinkage_factors(f.eigenvalues, sigma2, n, p)
        xhat_rpca = rpca_reconstruct(f, phi)
    else:
        phi = np.ones(rank)
        xhat_rpca = xhat
    return PcaFit(f, sigma2, phi, xhat, xhat_rpca)


def center(x) -> tuple[np.ndarray, np.ndarray]:
    """Column-center a complete matrix, returning ``(centered, means)``."""
    x = np.asarray(x, dtype=float)
    means = x.mean(axis=0)
    return x - means, means


__all__ = [
    "IncompleteMatrix",
    "PcaFit",
    "SvdFactors",
    "as_incomplete",
    "center",
    "estimate_sigma2",
    "fit_pca",
    "max_rank",
    "ml_reconstruct",
    "noise_floor",
    "observed_column_means",
    "residual_dof",
    "rpca_reconstruct",
    "shrinkage_factors",
    "truncated_svd",
]
