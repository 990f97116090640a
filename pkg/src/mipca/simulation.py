"""Monte-Carlo engine for coverage studies.

Seeding scheme
--------------
Every random stream is a ``numpy.random.SeedSequence(master_seed,
spawn_key=key)`` with a fixed integer key:

* ``(0, k, 0)`` data of replication ``k``
* ``(0, k, 1)`` amputation of replication ``k``
* ``(0, k, 2)`` sampler seed of replication ``k``
* ``(1,)``      the random correlation matrix of the ``random`` design
* ``(2, c, j)`` stream ``j`` of the ``c``-th rank-selection dataset

The data of replication ``k`` therefore do not depend on the method, so
``full_data``, ``listwise`` and ``bayes_mipca`` runs with the same master seed
see identical datasets, and execution order never changes a result.
"""

from __future__ import annotations

import math
import os
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import IncompleteMatrix
from .errors import (
    CannotAmputeError,
    ConfigError,
    MipcaError,
    NotPositiveDefiniteError,
)
from .pooling import Quantity, complete_case_analysis, rubin_pool
from .rank import CvConfig, cross_validate_rank
from .sampler import RNG_ALGORITHM, MiConfig, bayes_mipca

METHODS = ("bayes_mipca", "listwise", "full_data")
QUANTITY_KINDS = ("mean", "correlation", "regression")
WORKERS_ENV = "MIPCA_WORKERS"
MAX_AMPUTE_ATTEMPTS = 100


def _rng(master_seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=key))


def _seed_int(master_seed: int, *key: int) -> int:
    ss = np.random.SeedSequence(master_seed, spawn_key=key)
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def block_sizes(p: int) -> tuple[int, int]:
    first = math.ceil(2 * p / 3)
    return first, p - first


def block_covariance(p: int, rho: float) -> np.ndarray:
    """Two independent equicorrelated blocks of sizes ceil(2p/3) and the rest."""
    if p < 3:
        raise ConfigError("the block design needs p >= 3")
    if not 0 < rho < 1:
        raise ConfigError("rho must lie in (0, 1)")
    first, _ = block_sizes(p)
    cov = np.zeros((p, p))
    cov[:first, :first] = rho
    cov[first:, first:] = rho
    np.fill_diagonal(cov, 1.0)
    return cov


def random_correlation(p: int, seed) -> np.ndarray:
    """Dense random correlation matrix from a normalized Gram matrix.

    ``G G'`` with ``G`` a ``p x (p + 2)`` standard normal matrix is almost
    surely positive definite; rescaling to unit diagonal keeps it so. The
    result is *not* uniform over correlation matrices.
    """
    if p < 2:
        raise ConfigError("random_correlation needs p >= 2")
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((p, p + 2))
    gram = g @ g.T
    scale = 1.0 / np.sqrt(np.diag(gram))
    corr = gram * np.outer(scale, scale)
    corr = (corr + corr.T) / 2
    np.fill_diagonal(corr, 1.0)
    return corr


def gen_gaussian(cov: np.ndarray, n: int, seed) -> np.ndarray:
    """``n`` i.i.d. N(0, cov) rows via the Cholesky factor of ``cov``."""
    cov = np.asarray(cov, dtype=float)
    if not np.allclose(cov, cov.T):
        raise NotPositiveDefiniteError("covariance is not symmetric")
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("covariance is not positive definite") from exc
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.standard_normal((n, cov.shape[0])) @ chol.T


def ampute_mcar(x: np.ndarray, rate: float, seed) -> IncompleteMatrix:
    """Hide exactly ``floor(rate * n * p)`` cells chosen uniformly at random.

    Draws that would leave a column fully missing are rejected and redrawn.
    """
    x = np.asarray(x, dtype=float)
    if not 0 <= rate < 1:
        raise ConfigError("rate must lie in [0, 1)")
    n, p = x.shape
    count = math.floor(rate * n * p + 1e-9)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    for _ in range(MAX_AMPUTE_ATTEMPTS):
        mask = np.ones(n * p, dtype=bool)
        mask[rng.choice(n * p, size=count, replace=False)] = False
        mask = mask.reshape(n, p)
        if mask.any(axis=0).all():
            return IncompleteMatrix(x, mask)
    raise CannotAmputeError(f"every draw emptied a column after {MAX_AMPUTE_ATTEMPTS} attempts")


def regression_truth(cov: np.ndarray, response: int, predictors) -> float:
    """Population OLS coefficient of the first predictor."""
    predictors = list(predictors)
    sxx = cov[np.ix_(predictors, predictors)]
    sxy = cov[predictors, response]
    return float(np.linalg.solve(sxx, sxy)[0])


@dataclass(frozen=True)
class SimConfig:
    n: int = 200
    p: int = 6
    rho: float | None = 0.3
    design: str = "block"  # "block" or "random"
    miss_rate: float = 0.1
    K: int = 200
    quantities: tuple[str, ...] = QUANTITY_KINDS
    method: str = "bayes_mipca"
    rank: int | str = 2  # an integer, or "cv"
    n_imputations: int = 20
    burn_in: int = 1000
    spacing: int = 100
    cv: CvConfig | None = None
    cv_datasets: int = 20
    master_seed: int = 0

    def validate(self) -> None:
        if self.design not in ("block", "random"):
            raise ConfigError(f"unknown design {self.design!r}")
        if self.design == "block" and (self.rho is None or not 0 < self.rho < 1):
            raise ConfigError("the block design needs 0 < rho < 1")
        if not 0 <= self.miss_rate < 1:
            raise ConfigError("miss_rate must lie in [0, 1)")
        if self.K < 1:
            raise ConfigError("K must be at least 1")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        unknown = set(self.quantities) - set(QUANTITY_KINDS)
        if unknown:
            raise ConfigError(f"unknown quantities {sorted(unknown)}")
        if not (self.rank == "cv" or isinstance(self.rank, int)):
            raise ConfigError("rank must be an integer or 'cv'")

    def label(self) -> str:
        rho = f"rho={self.rho}" if self.design == "block" else "random"
        return f"n={self.n},p={self.p},{rho},miss={self.miss_rate}"


def covariance_for(cfg: SimConfig) -> np.ndarray:
    if cfg.design == "block":
        return block_covariance(cfg.p, cfg.rho)
    return random_correlation(cfg.p, _rng(cfg.master_seed, 1))


def quantities_for(cfg: SimConfig) -> dict[str, Quantity]:
    p = cfg.p
    table = {
        "mean": Quantity("mean", (0,)),
        "correlation": Quantity("correlation", (p - 2, p - 1)),
        "regression": Quantity("regression", tuple(range(p))),
    }
    return {k: table[k] for k in cfg.quantities}


def true_values(cfg: SimConfig, cov: np.ndarray) -> dict[str, float]:
    p = cfg.p
    sd = np.sqrt(np.diag(cov))
    corr = cov / np.outer(sd, sd)
    table = {
        "mean": 0.0,
        "correlation": float(corr[p - 2, p - 1]),
        "regression": regression_truth(cov, 0, range(1, p)),
    }
    return {k: table[k] for k in cfg.quantities}


def replication_data(cfg: SimConfig, cov: np.ndarray, k: int) -> tuple[np.ndarray, IncompleteMatrix]:
    full = gen_gaussian(cov, cfg.n, _rng(cfg.master_seed, 0, k, 0))
    return full, ampute_mcar(full, cfg.miss_rate, _rng(cfg.master_seed, 0, k, 1))


def choose_rank_by_cv(cfg: SimConfig, cov: np.ndarray) -> tuple[int, list[int]]:
    """Modal CV choice over ``cfg.cv_datasets`` independent incomplete datasets.

    Ties between equally frequent ranks go to the smaller rank.
    """
    cv = cfg.cv or CvConfig(candidates=tuple(range(1, min(cfg.p - 1, cfg.n - 2, 10) + 1)))
    choices = []
    for c in range(cfg.cv_datasets):
        full = gen_gaussian(cov, cfg.n, _rng(cfg.master_seed, 2, c, 0))
        x = ampute_mcar(full, cfg.miss_rate, _rng(cfg.master_seed, 2, c, 1))
        fold_cfg = CvConfig(
            candidates=cv.candidates,
            holdout_fraction=cv.holdout_fraction,
            folds=cv.folds,
            seed=_seed_int(cfg.master_seed, 2, c, 2),
            tol=cv.tol,
            max_iter=cv.max_iter,
        )
        choices.append(cross_validate_rank(x, fold_cfg).selected)
    counts = Counter(choices)
    top = max(counts.values())
    return min(s for s, c in counts.items() if c == top), choices


@dataclass(frozen=True)
class QuantityOutcome:
    estimate: float | None = None
    low: float | None = None
    high: float | None = None
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None


@dataclass(frozen=True)
class ReplicationRecord:
    index: int
    outcomes: dict[str, QuantityOutcome]


def run_replication(cfg: SimConfig, cov: np.ndarray, rank: int | None, k: int) -> ReplicationRecord:
    quantities = quantities_for(cfg)
    full, x = replication_data(cfg, cov, k)
    outcomes: dict[str, QuantityOutcome] = {}

    datasets = None
    if cfg.method == "bayes_mipca":
        mi = MiConfig(rank, cfg.n_imputations, cfg.burn_in, cfg.spacing,
                      seed=_seed_int(cfg.master_seed, 0, k, 2))
        try:
            datasets = bayes_mipca(x, mi).datasets
        except (MipcaError, np.linalg.LinAlgError) as exc:
            err = f"{type(exc).__name__}: {exc}"
            return ReplicationRecord(k, {name: QuantityOutcome(error=err) for name in quantities})

    for name, q in quantities.items():
        try:
            if cfg.method == "full_data":
                iv = q.analyze(full).interval()
            elif cfg.method == "listwise":
                iv = complete_case_analysis(x, q).interval()
            else:
                iv = rubin_pool([q.analyze(d) for d in datasets]).interval
            outcomes[name] = QuantityOutcome(iv.estimate, iv.low, iv.high)
        except (MipcaError, np.linalg.LinAlgError) as exc:
            outcomes[name] = QuantityOutcome(error=f"{type(exc).__name__}: {exc}")
    return ReplicationRecord(k, outcomes)


@dataclass(frozen=True)
class QuantitySummary:
    truth: float
    bias: float
    rmse: float
    median_ci_width: float
    coverage: float
    hits: int
    failures: int
    K: int
    bias_se: float

    @property
    def successes(self) -> int:
        return self.K - self.failures


@dataclass(frozen=True, eq=False)
class SimReport:
    config: SimConfig
    rank: int | None
    summaries: dict[str, QuantitySummary]
    records: list[ReplicationRecord] = field(repr=False)
    cv_choices: list[int] | None = None

    COLUMNS = ("configuration", "quantity", "method", "bias", "rmse",
               "median_ci_width", "coverage", "failures", "K")

    def rows(self):
        for name, s in self.summaries.items():
            yield (self.config.label(), name, self.config.method, s.bias, s.rmse,
                   s.median_ci_width, s.coverage, s.failures, s.K)

    def metadata(self) -> dict:
        cfg = asdict(self.config)
        return {
            "config": cfg,
            "rank": self.rank,
            "cv_choices": self.cv_choices,
            "rng": RNG_ALGORITHM,
            "seed_scheme": "SeedSequence(master_seed, spawn_key=(0, k, stream))",
        }


def summarize(records: list[ReplicationRecord], truths: dict[str, float]) -> dict[str, QuantitySummary]:
    K = len(records)
    out = {}
    for name, truth in truths.items():
        ok = [r.outcomes[name] for r in records if not r.outcomes[name].failed]
        failures = K - len(ok)
        if not ok:
            nan = float("nan")
            out[name] = QuantitySummary(truth, nan, nan, nan, nan, 0, failures, K, nan)
            continue
        err = np.array([o.estimate for o in ok]) - truth
        widths = np.array([o.high - o.low for o in ok])
        hits = sum(o.low <= truth <= o.high for o in ok)
        se = float(err.std(ddof=1) / math.sqrt(err.size)) if err.size > 1 else float("nan")
        out[name] = QuantitySummary(
            truth=truth,
            bias=float(err.mean()),
            rmse=float(math.sqrt(np.mean(err * err))),
            median_ci_width=float(np.median(widths)),
            coverage=hits / len(ok),
            hits=int(hits),
            failures=failures,
            K=K,
            bias_se=se,
        )
    return out


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _replication_task(args):
    return run_replication(*args)


def run_experiment(cfg: SimConfig, workers: int | None = None,
                   indices: list[int] | None = None) -> SimReport:
    """Run ``cfg.K`` replications (or just ``indices``) and aggregate.

    Failed replications are counted per quantity and excluded from the
    summaries.
    """
    cfg.validate()
    cov = covariance_for(cfg)
    truths = true_values(cfg, cov)
    rank = None
    cv_choices = None
    if cfg.method == "bayes_mipca":
        if cfg.rank == "cv":
            rank, cv_choices = choose_rank_by_cv(cfg, cov)
        else:
            rank = int(cfg.rank)
    indices = list(range(cfg.K)) if indices is None else list(indices)
    workers = default_workers() if workers is None else workers
    tasks = [(cfg, cov, rank, k) for k in indices]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_replication_task, tasks, chunksize=4))
    else:
        records = [_replication_task(t) for t in tasks]
    records.sort(key=lambda r: r.index)
    return SimReport(cfg, rank, summarize(records, truths), records, cv_choices)
