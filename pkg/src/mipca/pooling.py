"""Per-dataset analyses and Rubin's rules.

Each analyzer returns an estimate, its sampling variance and the
complete-data degrees of freedom that the Barnard-Rubin adjustment needs
(n - 1 for a mean, n - 3 for a Fisher-z correlation, n minus the number of
design columns for a regression coefficient). Correlations are analysed and
pooled on the z scale and mapped back only for reporting.

The pooling rules assume approximately normal estimators from reasonably
large samples; nothing checks that at run time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .data import as_incomplete
from .errors import (
    ConstantColumnError,
    InputError,
    MixedTransformsError,
    OutOfRangeError,
    SingularDesignError,
    TooFewCompleteRowsError,
    TooFewRowsError,
)

LEVEL = 0.95


@dataclass(frozen=True)
class AnalysisResult:
    estimate: float
    variance: float
    n_complete: int
    df_complete: float
    transform: str = "none"  # "none" or "fisher_z"

    def interval(self, level: float = LEVEL) -> Interval:
        """Complete-data interval with a t quantile at ``df_complete``."""
        return make_interval(self.estimate, self.variance, self.df_complete, self.transform, level)


@dataclass(frozen=True)
class Interval:
    """Point estimate and confidence bounds on the reporting scale."""

    estimate: float
    low: float
    high: float
    df: float

    @property
    def width(self) -> float:
        return self.high - self.low

    def covers(self, value: float) -> bool:
        return self.low <= value <= self.high


@dataclass(frozen=True)
class PooledResult:
    estimate: float  # analysis scale
    within: float
    between: float
    total_variance: float
    df: float
    ci_low: float
    ci_high: float
    m: int
    transform: str = "none"
    back_transformed: tuple[float, float, float] | None = None

    @property
    def interval(self) -> Interval:
        if self.back_transformed is not None:
            return Interval(*self.back_transformed, df=self.df)
        return Interval(self.estimate, self.ci_low, self.ci_high, self.df)


def fisher_z(rho):
    rho = np.asarray(rho, dtype=float)
    if np.any(np.abs(rho) >= 1):
        raise OutOfRangeError("Fisher z needs |rho| < 1")
    z = 0.5 * np.log((1 + rho) / (1 - rho))
    return float(z) if z.ndim == 0 else z


def inverse_fisher_z(z):
    out = np.tanh(np.asarray(z, dtype=float))
    return float(out) if out.ndim == 0 else out


def make_interval(estimate, variance, df, transform="none", level=LEVEL) -> Interval:
    half = stats.t.ppf(0.5 + level / 2, df) * math.sqrt(variance)
    lo, hi = estimate - half, estimate + half
    if transform == "fisher_z":
        return Interval(inverse_fisher_z(estimate), inverse_fisher_z(lo), inverse_fisher_z(hi), df)
    return Interval(estimate, lo, hi, df)


def _matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise InputError("expected a 2-d matrix")
    return x


def analyze_mean(x, col: int) -> AnalysisResult:
    v = _matrix(x)[:, col]
    n = v.shape[0]
    if n < 2:
        raise TooFewRowsError("the mean needs at least 2 rows")
    return AnalysisResult(float(v.mean()), float(v.var(ddof=1) / n), n, n - 1)


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    saa, sbb = np.dot(a, a), np.dot(b, b)
    if saa == 0 or sbb == 0:
        raise ConstantColumnError("correlation with a constant column")
    r = float(np.dot(a, b) / math.sqrt(saa * sbb))
    # Round-off can leave an exactly collinear pair a hair inside (-1, 1).
    if abs(r) > 1 - 1e-12:
        r = math.copysign(1.0, r)
    return r


def analyze_correlation(x, i: int, j: int) -> AnalysisResult:
    x = _matrix(x)
    n = x.shape[0]
    if n < 4:
        raise TooFewRowsError("the correlation needs at least 4 rows")
    r = pearson(x[:, i], x[:, j])
    return AnalysisResult(fisher_z(r), 1.0 / (n - 3), n, n - 3, transform="fisher_z")


def analyze_regression(x, response_col: int, predictor_cols: Sequence[int]) -> AnalysisResult:
    """OLS with intercept; reports the coefficient of the first predictor."""
    x = _matrix(x)
    n = x.shape[0]
    predictor_cols = list(predictor_cols)
    k = len(predictor_cols) + 1
    if n <= k:
        raise TooFewRowsError(f"regression with {k} design columns needs more than {k} rows")
    design = np.column_stack([np.ones(n), x[:, predictor_cols]])
    y = x[:, response_col]
    if np.linalg.matrix_rank(design) < k:
        raise SingularDesignError("design matrix is rank deficient")
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    s2 = float(resid @ resid) / (n - k)
    # Invert through the QR factor for stability.
    r = np.linalg.qr(design, mode="r")
    rinv = np.linalg.solve(r, np.eye(k))
    cov_unscaled = rinv @ rinv.T
    return AnalysisResult(float(coef[1]), s2 * float(cov_unscaled[1, 1]), n, n - k)


@dataclass(frozen=True)
class Quantity:
    """A scalar estimand; column indices are 0-based."""

    kind: str  # "mean", "correlation" or "regression"
    cols: tuple[int, ...]

    @classmethod
    def parse(cls, text: str) -> Quantity:
        """Parse ``mean:1``, ``corr:5,6`` or ``reg:1~2,3`` (1-based columns).

        For regressions the response comes first; ``reg:1,2,3`` is accepted
        as a shorthand for ``reg:1~2,3``.
        """
        try:
            kind, _, rest = text.partition(":")
            kind = {"mean": "mean", "corr": "correlation", "correlation": "correlation",
                    "reg": "regression", "regression": "regression"}[kind.strip().lower()]
            cols = tuple(int(t) - 1 for t in rest.replace("~", ",").split(","))
        except (KeyError, ValueError) as exc:
            raise InputError(f"cannot parse quantity {text!r}") from exc
        need = {"mean": (1, 1), "correlation": (2, 2), "regression": (2, None)}[kind]
        if len(cols) < need[0] or (need[1] is not None and len(cols) > need[1]):
            raise InputError(f"wrong number of columns in quantity {text!r}")
        if min(cols) < 0:
            raise InputError("column indices are 1-based")
        return cls(kind, cols)

    def label(self) -> str:
        one_based = [c + 1 for c in self.cols]
        if self.kind == "mean":
            return f"mean:{one_based[0]}"
        if self.kind == "correlation":
            return f"corr:{one_based[0]},{one_based[1]}"
        return f"reg:{one_based[0]}~" + ",".join(str(c) for c in one_based[1:])

    @property
    def n_design(self) -> int:
        return len(self.cols) if self.kind == "regression" else 1

    def analyze(self, x) -> AnalysisResult:
        if self.kind == "mean":
            return analyze_mean(x, self.cols[0])
        if self.kind == "correlation":
            return analyze_correlation(x, *self.cols)
        return analyze_regression(x, self.cols[0], self.cols[1:])


def barnard_rubin_df(m: int, within: float, between: float, df_complete: float) -> float:
    """Small-sample degrees of freedom for a multiply imputed estimate."""
    if within < 0 or between < 0:
        raise InputError("variances must be nonnegative")
    if within == 0 and between == 0:
        raise InputError("within and between variances are both zero")
    inflated = (1 + 1 / m) * between
    frac_obs = within / (within + inflated)
    df_obs = (df_complete + 1) / (df_complete + 3) * df_complete * frac_obs
    if between == 0:
        return df_obs
    if within == 0:
        # df_obs -> 0; the harmonic combination would collapse to 0, so fall
        # back to the large-sample value.
        return float(m - 1)
    r = inflated / within
    # 1 / df_old with df_old = (m - 1) (1 + 1/r)^2, written to avoid overflow as r -> 0.
    inv_df_old = (r / (1 + r)) ** 2 / (m - 1)
    return 1.0 / (inv_df_old + 1.0 / df_obs)


def rubin_pool(
    results: Sequence[AnalysisResult], df_complete: float | None = None, level: float = LEVEL
) -> PooledResult:
    m = len(results)
    if m < 2:
        raise InputError("pooling needs at least 2 analyses")
    transforms = {r.transform for r in results}
    if len(transforms) != 1:
        raise MixedTransformsError(f"analyses use different transforms: {sorted(transforms)}")
    transform = transforms.pop()
    est = np.array([r.estimate for r in results])
    var = np.array([r.variance for r in results])
    # Offsetting by the first entry makes identical inputs pool exactly.
    psi = float(est[0] + np.mean(est - est[0]))
    within = float(var[0] + np.mean(var - var[0]))
    between = float(np.sum((est - psi) ** 2) / (m - 1))
    total = within + (1 + 1 / m) * between
    if df_complete is None:
        df_complete = float(np.mean([r.df_complete for r in results]))
    df = barnard_rubin_df(m, within, between, df_complete)
    half = stats.t.ppf(0.5 + level / 2, df) * math.sqrt(total)
    lo, hi = psi - half, psi + half
    back = None
    if transform == "fisher_z":
        back = (inverse_fisher_z(psi), inverse_fisher_z(lo), inverse_fisher_z(hi))
    return PooledResult(psi, within, between, total, df, lo, hi, m, transform, back)


def complete_case_analysis(x, quantity: Quantity) -> AnalysisResult:
    """Listwise deletion: analyze only the fully observed rows."""
    x = as_incomplete(x)
    rows = x.complete_rows()
    need = {"mean": 2, "correlation": 4}.get(quantity.kind, quantity.n_design + 1)
    if rows.shape[0] < need:
        raise TooFewCompleteRowsError(
            f"{rows.shape[0]} complete row(s); {quantity.kind} needs at least {need}"
        )
    return quantity.analyze(rows)


def record_fields(quantity: Quantity, pooled: PooledResult) -> dict:
    """Flat export record; estimate and bounds on the reporting scale."""
    iv = pooled.interval
    return {
        "quantity": quantity.label(),
        "estimate": iv.estimate,
        "within": pooled.within,
        "between": pooled.between,
        "total_variance": pooled.total_variance,
        "df": pooled.df,
        "ci_low": iv.low,
        "ci_high": iv.high,
    }
