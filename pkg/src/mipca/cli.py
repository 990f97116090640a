"""Command-line front end.

Subcommands: impute, mi, pool, cv, simulate, replay. Every command that
writes files also writes ``manifest.json`` into its output directory; the
manifest stores the argv needed to regenerate the outputs (``mipca replay``).

Options can also come from a flat ``key = value`` file given with
``--config``; keys are long option names without the dashes and explicit
flags win over the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .data import IncompleteMatrix
from .errors import ConfigError, InputError, MipcaError
from .impute import DEFAULT_MAX_ITER, DEFAULT_TOL, iterative_pca
from .io import Dataset, DatasetFile, read_dataset, sha256, write_json, write_matrix, write_table
from .pca import max_rank, residual_dof
from .pooling import Quantity, record_fields, rubin_pool
from .rank import CvConfig, cross_validate_rank
from .sampler import RNG_ALGORITHM, MiConfig, bayes_mipca, diagnostics
from .simulation import SimConfig, default_workers, run_experiment

log = logging.getLogger("mipca")

POOL_COLUMNS = ("quantity", "estimate", "within", "between", "total_variance", "df",
                "ci_low", "ci_high")
TRACE_COLUMNS = ("iteration", "sigma2", "sum_phi", "imputed_mean", "q05", "q50", "q95")


def warn(message: str) -> None:
    print(f"mipca: warning: {message}", file=sys.stderr)


def _int_list(text: str) -> list[int]:
    """Parse ``1-5`` or ``1,2,4``."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            a, b = part.split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError(f"empty list {text!r}")
    return out


def _add_io_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--delimiter", default=",")
    p.add_argument("--na-token", default="NA")
    p.add_argument("--header", action="store_true", help="first line holds column names")
    p.add_argument("--out-dir", type=Path, default=Path("."))


def _add_rank_options(p: argparse.ArgumentParser, required: bool) -> None:
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--rank", type=int, help="number of dimensions S")
    g.add_argument("--cv", action="store_true", help="choose S by cross-validation")
    p.add_argument("--cv-candidates", type=_int_list, default=None,
                   help="candidate ranks for --cv, e.g. 1-5 (default 1..5 within bounds)")
    p.add_argument("--cv-folds", type=int, default=5)
    p.add_argument("--cv-holdout", type=float, default=0.1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mipca", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", type=Path, help="key = value file of default options")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("impute", help="single imputation by regularized iterative PCA")
    p.add_argument("input", type=Path)
    _add_io_options(p)
    _add_rank_options(p, required=True)
    p.add_argument("--no-regularize", action="store_true", help="plain iterative PCA")
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--max-iter", type=int, default=DEFAULT_MAX_ITER)
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--seed", type=int, default=0, help="seed for --cv folds")

    p = sub.add_parser("mi", help="multiple imputation with Bayesian PCA")
    p.add_argument("input", type=Path)
    _add_io_options(p)
    _add_rank_options(p, required=True)
    p.add_argument("-M", "--imputations", dest="M", type=int, default=20)
    p.add_argument("--lstart", type=int, default=1000, help="burn-in iterations")
    p.add_argument("--spacing", type=int, default=100, help="iterations between kept draws")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL, help="tolerance of the initial fit")
    p.add_argument("--standardize", action="store_true")

    p = sub.add_parser("pool", help="analyze imputed files and pool with Rubin's rules")
    p.add_argument("inputs", type=Path, nargs="+")
    p.add_argument("--quantity", "-q", action="append", required=True,
                   help="mean:J, corr:I,J or reg:Y~X1,X2 (1-based columns); repeatable")
    _add_io_options(p)

    p = sub.add_parser("cv", help="select the rank by cross-validation")
    p.add_argument("input", type=Path)
    _add_io_options(p)
    p.add_argument("--candidates", type=_int_list, default=None)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--holdout", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--max-iter", type=int, default=DEFAULT_MAX_ITER)

    p = sub.add_parser("simulate", help="Monte-Carlo coverage study")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--p", type=int, default=6)
    p.add_argument("--rho", type=float, default=0.3)
    p.add_argument("--design", choices=("block", "random"), default="block")
    p.add_argument("--miss-rate", type=float, default=0.1)
    p.add_argument("--K", type=int, default=200)
    p.add_argument("--method", choices=("bayes_mipca", "listwise", "full_data"),
                   default="bayes_mipca")
    p.add_argument("--quantities", default="mean,correlation,regression")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--rank", type=int, default=2)
    g.add_argument("--cv", action="store_true")
    p.add_argument("-M", "--imputations", dest="M", type=int, default=20)
    p.add_argument("--lstart", type=int, default=1000)
    p.add_argument("--spacing", type=int, default=100)
    p.add_argument("--cv-datasets", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=None,
                   help="worker processes (default from $MIPCA_WORKERS, else 1)")
    p.add_argument("--out-dir", type=Path, default=Path("."))

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest", type=Path)
    return parser


def read_config(path: Path) -> list[str]:
    """Turn a ``key = value`` file into option tokens."""
    tokens = []
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for num, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{num}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        flag = "-M" if key == "M" else "--" + key.replace("_", "-")
        if value.lower() in ("true", "yes", "on"):
            tokens.append(flag)
        elif value.lower() in ("false", "no", "off"):
            continue
        else:
            tokens.extend([flag, value])
    return tokens


EXCLUSIVE = {"--rank": "--cv", "--cv": "--rank"}


def _merge_config(argv: list[str], tokens: list[str]) -> list[str]:
    """Insert config tokens right after the subcommand so explicit flags win."""
    idx = next(i for i, a in enumerate(argv) if a in COMMANDS)
    explicit = set(argv[idx + 1:])
    kept, i = [], 0
    while i < len(tokens):
        flag = tokens[i]
        takes_value = i + 1 < len(tokens) and not tokens[i + 1].startswith("-")
        step = 2 if takes_value else 1
        # --rank and --cv are mutually exclusive; an explicit one drops the other.
        if EXCLUSIVE.get(flag) not in explicit:
            kept.extend(tokens[i:i + step])
        i += step
    return argv[: idx + 1] + kept + argv[idx + 1:]


def parse_args(argv: list[str]) -> argparse.Namespace:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", type=Path)
    known, _ = pre.parse_known_args(argv)
    if known.config is not None and any(a in COMMANDS for a in argv):
        argv = _merge_config(argv, read_config(known.config))
    return build_parser().parse_args(argv)


class Run:
    """Collects the outputs of one command and writes its manifest."""

    def __init__(self, args: argparse.Namespace, argv: list[str], inputs: list[Path]):
        self.args = args
        self.argv = argv
        self.inputs = inputs
        self.outputs: list[str] = []
        self.started = datetime.now(timezone.utc).isoformat()
        self.out_dir = Path(args.out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out_dir / name

    def finish(self, **extra) -> Path:
        config = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(self.args).items()}
        payload = {
            "command": self.args.command,
            "argv": self.argv,
            "config": config,
            "seed": getattr(self.args, "seed", None),
            "version": __version__,
            "rng": RNG_ALGORITHM,
            "inputs": {str(p): sha256(p) for p in self.inputs},
            "outputs": self.outputs,
            "started": self.started,
            "finished": datetime.now(timezone.utc).isoformat(),
        }
        payload.update(extra)
        return write_json(self.out_dir / "manifest.json", payload)


def _load(args, path: Path) -> Dataset:
    return read_dataset(DatasetFile(path, args.delimiter, args.na_token, args.header))


def _standardizer(x: IncompleteMatrix):
    sd = np.array([np.std(x.values[x.mask[:, j], j], ddof=1) if x.mask[:, j].sum() > 1 else 1.0
                   for j in range(x.shape[1])])
    sd[~(sd > 0)] = 1.0
    return IncompleteMatrix(x.values / sd, x.mask), sd


def _cv_rank(args, x: IncompleteMatrix, seed: int) -> tuple[int, CvConfig]:
    n, p = x.shape
    candidates = args.cv_candidates
    if candidates is None:
        candidates = [s for s in range(1, min(5, max_rank(n, p)) + 1) if residual_dof(n, p, s) > 0]
    cfg = CvConfig(tuple(candidates), args.cv_holdout, args.cv_folds, seed)
    report = cross_validate_rank(x, cfg)
    log.info("cross-validation selected rank %d", report.selected)
    return report.selected, cfg


def cmd_impute(args, argv) -> int:
    data = _load(args, args.input)
    x = data.matrix
    scale = None
    if args.standardize:
        x, scale = _standardizer(x)
    rank = args.rank
    if args.cv:
        rank, _ = _cv_rank(args, x, args.seed)
    res = iterative_pca(x, rank, regularize=not args.no_regularize, tol=args.tol,
                        max_iter=args.max_iter)
    completed = res.completed if scale is None else res.completed * scale
    completed = np.where(data.matrix.mask, data.matrix.values, completed)
    if not res.converged:
        warn(f"no convergence after {res.iterations} iterations "
             f"(change {res.final_change:.3g})")
    run = Run(args, argv, [args.input])
    write_matrix(run.path(f"{args.input.stem}_imputed.csv"), completed, data.columns,
                 args.delimiter, args.na_token)
    run.finish(rank=rank, iterations=res.iterations, final_change=res.final_change)
    return 0


def cmd_mi(args, argv) -> int:
    data = _load(args, args.input)
    x = data.matrix
    scale = None
    if args.standardize:
        x, scale = _standardizer(x)
    if x.n_missing == 0:
        warn("input has no missing values; all imputed datasets equal the input")
    rank = args.rank
    if args.cv:
        rank, _ = _cv_rank(args, x, args.seed)
    cfg = MiConfig(rank, args.M, args.lstart, args.spacing, args.seed)
    result = bayes_mipca(x, cfg, init_tol=args.tol)
    run = Run(args, argv, [args.input])
    for k, d in enumerate(result.datasets, 1):
        if scale is not None:
            d = np.where(data.matrix.mask, data.matrix.values, d * scale)
        write_matrix(run.path(f"{args.input.stem}_imp{k}.csv"), d, data.columns,
                     args.delimiter, args.na_token)
    write_table(run.path(f"{args.input.stem}_trace.csv"), TRACE_COLUMNS, result.trace.rows(),
                args.delimiter)
    diag = diagnostics(result.trace)
    lags = sorted(next(iter(diag.values())).autocorrelation)
    write_table(
        run.path(f"{args.input.stem}_diagnostics.csv"),
        ["summary", "mean"] + [f"acf_lag{k}" for k in lags],
        ([d.name, float(d.running_mean[-1])]
         + [("NA" if d.autocorrelation[k] is None else d.autocorrelation[k]) for k in lags]
         for d in diag.values()),
        args.delimiter,
    )
    run.finish(rank=rank, mi_config=asdict(cfg))
    return 0


def cmd_pool(args, argv) -> int:
    if len(args.inputs) < 2:
        raise InputError("pool needs at least 2 imputed files")
    datasets = [_load(args, path).matrix for path in args.inputs]
    for path, d in zip(args.inputs, datasets):
        if d.n_missing:
            raise InputError(f"{path} still has missing cells")
    rows = []
    for text in args.quantity:
        q = Quantity.parse(text)
        pooled = rubin_pool([q.analyze(np.asarray(d.values)) for d in datasets])
        rec = record_fields(q, pooled)
        rows.append([rec[c] for c in POOL_COLUMNS])
    run = Run(args, argv, list(args.inputs))
    write_table(run.path("pooled.csv"), POOL_COLUMNS, rows, args.delimiter)
    run.finish()
    return 0


def cmd_cv(args, argv) -> int:
    data = _load(args, args.input)
    n, p = data.matrix.shape
    candidates = args.candidates or [s for s in range(1, min(5, max_rank(n, p)) + 1)
                                     if residual_dof(n, p, s) > 0]
    cfg = CvConfig(tuple(candidates), args.holdout, args.folds, args.seed, args.tol,
                   args.max_iter)
    report = cross_validate_rank(data.matrix, cfg)
    run = Run(args, argv, [args.input])
    write_table(run.path(f"{args.input.stem}_cv.csv"), ("rank", "msep"), report.rows(),
                args.delimiter)
    print(report.selected)
    run.finish(selected=report.selected)
    return 0


def cmd_simulate(args, argv) -> int:
    quantities = tuple(q.strip() for q in args.quantities.split(",") if q.strip())
    cfg = SimConfig(
        n=args.n, p=args.p, rho=args.rho if args.design == "block" else None,
        design=args.design, miss_rate=args.miss_rate, K=args.K, quantities=quantities,
        method=args.method, rank="cv" if args.cv else args.rank, n_imputations=args.M,
        burn_in=args.lstart, spacing=args.spacing, cv_datasets=args.cv_datasets,
        master_seed=args.seed,
    )
    workers = args.workers if args.workers is not None else default_workers()
    report = run_experiment(cfg, workers=workers)
    run = Run(args, argv, [])
    write_table(run.path("simulation.csv"), report.COLUMNS, report.rows())
    write_json(run.path("simulation_meta.json"), report.metadata())
    run.finish()
    return 0


def cmd_replay(args, argv) -> int:
    manifest = json.loads(Path(args.manifest).read_text())
    return main(manifest["argv"])


COMMANDS = {
    "impute": cmd_impute,
    "mi": cmd_mi,
    "pool": cmd_pool,
    "cv": cmd_cv,
    "simulate": cmd_simulate,
    "replay": cmd_replay,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except MipcaError as exc:
        print(f"mipca: error [{exc.code}]: {exc}", file=sys.stderr)
        return exc.exit_status
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="mipca: %(levelname)s: %(message)s")
    try:
        return COMMANDS[args.command](args, argv)
    except MipcaError as exc:
        print(f"mipca: error [{exc.code}]: {exc}", file=sys.stderr)
        return exc.exit_status


if __name__ == "__main__":
    sys.exit(main())
