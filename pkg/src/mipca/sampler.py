"""Multiple imputation with a Bayesian treatment of the PCA model.

The sampler alternates two steps, starting from a regularized iterative
PCA fit:

(I)  draw every missing cell from N(signal + column mean, sigma2);
(P)  recompute means on the completed matrix, refit regularized PCA and draw
     a new signal matrix cell-wise from
     N(xhat_rpca, sigma2 * sum(phi) / min(n - 1, p)).

Note the posterior variance uses the *sum* of shrinkage factors, as in the
published algorithm, not the per-component ``sigma2 * phi_s / min(n-1, p)``.

After ``burn_in`` iterations one completed matrix is kept every ``spacing``
iterations until ``n_imputations`` are collected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .data import IncompleteMatrix, as_incomplete
from .errors import ConfigError
from .impute import DEFAULT_TOL, iterative_pca
from .pca import fit_pca, max_rank

RNG_ALGORITHM = "numpy.random.Generator(PCG64)"
TRACE_QUANTILES = (0.05, 0.5, 0.95)


@dataclass(frozen=True)
class MiConfig:
    rank: int
    n_imputations: int = 20
    burn_in: int = 1000
    spacing: int = 100
    seed: int = 0

    def validate(self, n: int, p: int) -> None:
        if self.n_imputations < 2:
            raise ConfigError("n_imputations must be at least 2")
        if self.burn_in < 1 or self.spacing < 1:
            raise ConfigError("burn_in and spacing must be at least 1")
        if not 1 <= self.rank <= max_rank(n, p):
            raise ConfigError(f"rank must lie in [1, {max_rank(n, p)}], got {self.rank}")

    @property
    def total_iterations(self) -> int:
        return self.burn_in + self.n_imputations * self.spacing

    @property
    def kept_iterations(self) -> list[int]:
        return [self.burn_in + k * self.spacing for k in range(1, self.n_imputations + 1)]


@dataclass(frozen=True, eq=False)
class SamplerState:
    xtilde: np.ndarray  # signal draw, centered scale
    sigma2: float
    phi: np.ndarray
    means: np.ndarray
    completed: np.ndarray


@dataclass(frozen=True, eq=False)
class TraceLog:
    """One row per sampler iteration; imputed-cell summaries are NaN when
    nothing is missing."""

    sigma2: np.ndarray
    sum_phi: np.ndarray
    imputed_mean: np.ndarray
    q05: np.ndarray
    q50: np.ndarray
    q95: np.ndarray
    column_means: np.ndarray  # iterations x p

    SUMMARIES = ("sigma2", "sum_phi", "imputed_mean", "q05", "q50", "q95")

    def __len__(self) -> int:
        return self.sigma2.shape[0]

    def rows(self):
        for i in range(len(self)):
            yield (i + 1,) + tuple(float(getattr(self, k)[i]) for k in self.SUMMARIES)


@dataclass(frozen=True, eq=False)
class ImputationSet:
    datasets: list[np.ndarray]
    config: MiConfig
    trace: TraceLog
    rng_algorithm: str = RNG_ALGORITHM

    def __len__(self) -> int:
        return len(self.datasets)


def _quantile_plan(size: int, probs):
    # Indices for numpy's default "linear" quantile on a sorted sample.
    h = (size - 1) * np.asarray(probs, dtype=float)
    lo = np.floor(h).astype(int)
    hi = np.minimum(lo + 1, size - 1)
    return lo, hi, h - lo


def posterior_variance(sigma2: float, phi, n: int, p: int) -> float:
    return float(sigma2 * np.sum(phi) / max_rank(n, p))


def initial_state(x: IncompleteMatrix, rank: int, tol: float = DEFAULT_TOL) -> SamplerState:
    """Start the chain from a regularized iterative PCA fit."""
    res = iterative_pca(x, rank, regularize=True, tol=tol)
    return SamplerState(
        xtilde=res.fit.xhat_rpca,
        sigma2=res.fit.sigma2,
        phi=res.fit.phi,
        means=res.means,
        completed=res.completed,
    )


def step_I(state: SamplerState, x: IncompleteMatrix, rng: np.random.Generator) -> SamplerState:
    """Predictive draw of the missing cells given the current parameters."""
    miss = ~x.mask
    completed = np.array(x.values)
    if miss.any():
        _, cols = np.nonzero(miss)
        noise = rng.standard_normal(cols.shape[0]) * math.sqrt(state.sigma2)
        completed[miss] = state.xtilde[miss] + state.means[cols] + noise
    return replace(state, completed=completed)


def step_P(state: SamplerState, rank: int, rng: np.random.Generator) -> SamplerState:
    """Refit regularized PCA on the completed data and draw a new signal."""
    completed = state.completed
    n, p = completed.shape
    means = completed.mean(axis=0)
    fit = fit_pca(completed - means, rank, regularize=True)
    sd = math.sqrt(posterior_variance(fit.sigma2, fit.phi, n, p))
    xtilde = fit.xhat_rpca + sd * rng.standard_normal((n, p))
    return SamplerState(
        xtilde=xtilde, sigma2=fit.sigma2, phi=fit.phi, means=means, completed=completed
    )


def bayes_mipca(x, cfg: MiConfig, init_tol: float = DEFAULT_TOL) -> ImputationSet:
    """Draw ``cfg.n_imputations`` completed datasets.

    Output is a pure function of ``(x, cfg)``: all randomness comes from a
    PCG64 generator seeded with ``cfg.seed``.
    """
    x = as_incomplete(x)
    n, p = x.shape
    cfg.validate(n, p)
    rng = np.random.default_rng(cfg.seed)
    miss = ~x.mask
    has_missing = bool(miss.any())

    total = cfg.total_iterations
    keep = set(cfg.kept_iterations)
    sigma2 = np.empty(total)
    sum_phi = np.empty(total)
    stats = np.full((total, 4), np.nan)
    col_means = np.empty((total, p))
    datasets = []

    if has_missing:
        lo, hi, frac = _quantile_plan(int(miss.sum()), TRACE_QUANTILES)

    state = initial_state(x, cfg.rank, tol=init_tol)
    for it in range(1, total + 1):
        state = step_I(state, x, rng)
        if it in keep:
            datasets.append(state.completed.copy())
        if has_missing:
            imputed = np.sort(state.completed[miss])
            stats[it - 1, 0] = imputed.mean()
            stats[it - 1, 1:] = imputed[lo] + frac * (imputed[hi] - imputed[lo])
        state = step_P(state, cfg.rank, rng)
        sigma2[it - 1] = state.sigma2
        sum_phi[it - 1] = state.phi.sum()
        col_means[it - 1] = state.means

    trace = TraceLog(
        sigma2=sigma2,
        sum_phi=sum_phi,
        imputed_mean=stats[:, 0],
        q05=stats[:, 1],
        q50=stats[:, 2],
        q95=stats[:, 3],
        column_means=col_means,
    )
    return ImputationSet(datasets=datasets, config=cfg, trace=trace)


def _autocorrelation(series: np.ndarray, lag: int) -> float | None:
    if series.shape[0] <= lag or not np.all(np.isfinite(series)):
        return None
    if np.ptp(series) == 0.0:
        return None
    centered = series - series.mean()
    denom = np.dot(centered, centered)
    return float(np.dot(centered[:-lag], centered[lag:]) / denom)


@dataclass(frozen=True, eq=False)
class SummaryDiagnostics:
    name: str
    running_mean: np.ndarray
    autocorrelation: dict[int, float | None]


def diagnostics(trace: TraceLog, lags=(1, 10, 100)) -> dict[str, SummaryDiagnostics]:
    """Running means and lagged autocorrelations of every trace summary.

    The autocorrelation is ``None`` when it is undefined: constant series,
    series with NaN entries, or a series not longer than the lag.
    """
    if len(trace) == 0:
        raise ConfigError("empty trace")
    out = {}
    for name in TraceLog.SUMMARIES:
        series = np.asarray(getattr(trace, name), dtype=float)
        running = np.cumsum(series) / np.arange(1, series.shape[0] + 1)
        out[name] = SummaryDiagnostics(
            name=name,
            running_mean=running,
            autocorrelation={k: _autocorrelation(series, k) for k in lags},
        )
    return out


def trace_from_series(**series) -> TraceLog:
    """Build a TraceLog from bare arrays; missing summaries default to NaN."""
    length = len(next(iter(series.values())))
    fields = {k: np.asarray(series.get(k, np.full(length, np.nan)), dtype=float)
              for k in TraceLog.SUMMARIES}
    fields["column_means"] = np.asarray(series.get("column_means", np.zeros((length, 0))))
    return TraceLog(**fields)
