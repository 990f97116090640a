"""Single imputation by (regularized) iterative PCA.

The loop is an EM algorithm for the centered rank-S model: fill missing
cells, recompute column means, fit PCA on the centered completed matrix,
refill the missing cells with the fitted values. With ``regularize=True``
the fitted values come from the shrunk reconstruction, which avoids the
overfitting the plain algorithm shows when relationships are weak or many
cells are missing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import IncompleteMatrix, as_incomplete
from .errors import InputError, NonFiniteError, RankTooLargeError
from .pca import PcaFit, fit_pca, max_rank, observed_column_means

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 1000


@dataclass(frozen=True, eq=False)
class SingleImputeResult:
    completed: np.ndarray
    fit: PcaFit
    means: np.ndarray
    iterations: int
    final_change: float
    # Observed-cell criterion ||W * (X - Xhat)||^2 after each M-step.
    criterion: list[float] = field(default_factory=list)
    tol: float = DEFAULT_TOL

    @property
    def converged(self) -> bool:
        return self.final_change < self.tol


def relative_change(new: np.ndarray, old: np.ndarray) -> float:
    num = np.linalg.norm(new - old)
    den = np.linalg.norm(old)
    if den == 0.0:
        return float(num)
    return float(num / den)


def iterative_pca(
    x,
    rank: int,
    regularize: bool = True,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> SingleImputeResult:
    """Impute the missing cells of ``x`` with a rank-``rank`` PCA model.

    Parameters
    ----------
    x : IncompleteMatrix or array with NaN for missing cells
    rank : number of retained dimensions S
    regularize : shrink each component (regularized iterative PCA) or not
    tol : stop when the relative Frobenius change of the completed matrix
        between two iterations falls below this value
    max_iter : hard cap on the number of iterations

    Returns
    -------
    SingleImputeResult
        ``fit`` is expressed on the scale centered by ``means``, i.e. the
        prediction for cell ``ij`` is ``fit.xhat_rpca[i, j] + means[j]``
        (``fit.xhat`` when ``regularize`` is False).
    """
    x = as_incomplete(x)
    n, p = x.shape
    if rank > max_rank(n, p) or rank < 0:
        raise RankTooLargeError(f"rank {rank} outside [0, {max_rank(n, p)}]")
    if not tol > 0:
        raise InputError("tol must be positive")
    if max_iter < 1:
        raise InputError("max_iter must be at least 1")

    mask = x.mask
    observed = np.where(mask, x.values, 0.0)
    completed = x.fill(observed_column_means(x))
    criterion: list[float] = []
    change = 0.0
    it = 0
    for it in range(1, max_iter + 1):
        means = completed.mean(axis=0)
        fit = fit_pca(completed - means, rank, regularize=regularize)
        pred = (fit.xhat_rpca if regularize else fit.xhat) + means
        if not np.all(np.isfinite(pred)):
            raise NonFiniteError(f"non-finite reconstruction at iteration {it}")
        resid = np.where(mask, observed - pred, 0.0)
        criterion.append(float(np.sum(resid * resid)))
        new = np.where(mask, observed, pred)
        change = relative_change(new, completed)
        completed = new
        if change < tol:
            break
    completed = np.where(mask, x.values, completed)
    return SingleImputeResult(
        completed=completed,
        fit=fit,
        means=means,
        iterations=it,
        final_change=change,
        criterion=criterion,
        tol=tol,
    )
