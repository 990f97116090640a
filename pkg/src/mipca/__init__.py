"""Single and multiple imputation of continuous data with PCA models."""

__version__ = "0.1.0"

from .data import IncompleteMatrix
from .impute import SingleImputeResult, iterative_pca
from .pca import PcaFit, SvdFactors, fit_pca, truncated_svd
from .pooling import (
    AnalysisResult,
    PooledResult,
    Quantity,
    analyze_correlation,
    analyze_mean,
    analyze_regression,
    barnard_rubin_df,
    complete_case_analysis,
    rubin_pool,
)
from .rank import CvConfig, CvReport, cross_validate_rank
from .sampler import ImputationSet, MiConfig, bayes_mipca, diagnostics
from .simulation import SimConfig, SimReport, run_experiment

__all__ = [
    "AnalysisResult",
    "CvConfig",
    "CvReport",
    "ImputationSet",
    "IncompleteMatrix",
    "MiConfig",
    "PcaFit",
    "PooledResult",
    "Quantity",
    "SimConfig",
    "SimReport",
    "SingleImputeResult",
    "SvdFactors",
    "analyze_correlation",
    "analyze_mean",
    "analyze_regression",
    "barnard_rubin_df",
    "bayes_mipca",
    "complete_case_analysis",
    "cross_validate_rank",
    "diagnostics",
    "fit_pca",
    "iterative_pca",
    "rubin_pool",
    "run_experiment",
    "truncated_svd",
]
