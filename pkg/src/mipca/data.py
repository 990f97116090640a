"""The incomplete data matrix shared by every imputation path."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyColumnError, InputError


@dataclass(frozen=True, eq=False)
class IncompleteMatrix:
    """An ``n x p`` matrix with a binary observation mask.

    ``values`` holds NaN wherever ``mask`` is False, so the two never
    disagree. Fully missing rows are allowed; fully missing columns are
    rejected because nothing could be said about their location.
    """

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        mask = np.asarray(self.mask, dtype=bool)
        if values.ndim != 2:
            raise InputError(f"expected a 2-d matrix, got shape {values.shape}")
        if mask.shape != values.shape:
            raise InputError("mask and values have different shapes")
        if not np.all(np.isfinite(values[mask])):
            raise InputError("observed cells must be finite")
        empty = np.flatnonzero(~mask.any(axis=0))
        if empty.size:
            raise EmptyColumnError(
                f"column(s) {', '.join(str(j + 1) for j in empty)} have no observed value"
            )
        values[~mask] = np.nan
        values.setflags(write=False)
        mask = mask.copy()
        mask.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @classmethod
    def from_array(cls, x) -> IncompleteMatrix:
        """Build from an array in which NaN marks a missing cell."""
        x = np.asarray(x, dtype=float)
        return cls(x, ~np.isnan(x))

    @property
    def shape(self):
        return self.values.shape

    @property
    def n_missing(self) -> int:
        return int((~self.mask).sum())

    def fill(self, fill_values: np.ndarray) -> np.ndarray:
        """Completed copy: observed cells from ``values``, the rest from ``fill_values``."""
        return np.where(self.mask, self.values, fill_values)

    def complete_rows(self) -> np.ndarray:
        return np.asarray(self.values[self.mask.all(axis=1)])


def as_incomplete(x) -> IncompleteMatrix:
    if isinstance(x, IncompleteMatrix):
        return x
    return IncompleteMatrix.from_array(x)
