"""Choose the number of PCA dimensions by cell-wise cross-validation.

Each fold hides an extra random fraction of the observed cells, imputes
them by regularized iterative PCA at every candidate rank and scores the
squared prediction error on the hidden cells. The same folds are reused
across candidates so their errors are paired.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import IncompleteMatrix, as_incomplete
from .errors import ConfigError, EmptyColumnError
from .impute import DEFAULT_MAX_ITER, DEFAULT_TOL, iterative_pca
from .pca import max_rank

MAX_FOLD_REDRAWS = 10
TIE_TOL = 1e-12


@dataclass(frozen=True)
class CvConfig:
    candidates: tuple[int, ...] = (1, 2, 3, 4, 5)
    holdout_fraction: float = 0.1
    folds: int = 5
    seed: int = 0
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER

    def validate(self, n: int, p: int) -> None:
        if not self.candidates:
            raise ConfigError("no candidate ranks")
        if not 0 < self.holdout_fraction < 0.5:
            raise ConfigError("holdout_fraction must lie in (0, 0.5)")
        if self.folds < 1:
            raise ConfigError("folds must be at least 1")
        top = max_rank(n, p)
        bad = [s for s in self.candidates if not 0 <= s <= top]
        if bad:
            raise ConfigError(f"candidate rank(s) {bad} outside [0, {top}]")


@dataclass(frozen=True, eq=False)
class CvReport:
    candidates: tuple[int, ...]
    msep: np.ndarray  # mean over folds, aligned with candidates
    msep_by_fold: np.ndarray  # folds x candidates
    selected: int

    def rows(self):
        return [(s, float(e)) for s, e in zip(self.candidates, self.msep)]


def _draw_holdout(x: IncompleteMatrix, fraction: float, rng: np.random.Generator) -> np.ndarray:
    observed = np.flatnonzero(x.mask.ravel())
    k = max(1, int(round(fraction * observed.size)))
    for _ in range(MAX_FOLD_REDRAWS):
        hide = np.zeros(x.mask.size, dtype=bool)
        hide[rng.choice(observed, size=k, replace=False)] = True
        hide = hide.reshape(x.shape)
        if (x.mask & ~hide).any(axis=0).all():
            return hide
    raise EmptyColumnError(f"could not draw a fold leaving every column observed in "
                           f"{MAX_FOLD_REDRAWS} attempts")


def select_rank(candidates, msep) -> int:
    """Smallest candidate whose error is within TIE_TOL of the minimum."""
    order = np.argsort(candidates, kind="stable")
    cands = np.asarray(candidates)[order]
    errs = np.asarray(msep)[order]
    best = errs.min()
    return int(cands[np.flatnonzero(errs - best < TIE_TOL)[0]])


def cross_validate_rank(x, cfg: CvConfig = CvConfig()) -> CvReport:
    x = as_incomplete(x)
    n, p = x.shape
    cfg.validate(n, p)
    candidates = tuple(int(s) for s in cfg.candidates)
    rng = np.random.default_rng(cfg.seed)
    errors = np.empty((cfg.folds, len(candidates)))
    for f in range(cfg.folds):
        hide = _draw_holdout(x, cfg.holdout_fraction, rng)
        train = IncompleteMatrix(x.values, x.mask & ~hide)
        truth = x.values[hide]
        for c, s in enumerate(candidates):
            res = iterative_pca(train, s, regularize=True, tol=cfg.tol, max_iter=cfg.max_iter)
            diff = res.completed[hide] - truth
            errors[f, c] = float(np.mean(diff * diff))
    msep = errors.mean(axis=0)
    return CvReport(candidates, msep, errors, select_rank(candidates, msep))
