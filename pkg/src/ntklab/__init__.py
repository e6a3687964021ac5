"""Training-free neural architecture search on the empirical NTK."""

from .errors import (
    ConfigError,
    ConvergenceError,
    DivergenceError,
    EvaluatorError,
    NtkLabError,
    NumericFailure,
    ParseError,
    UndefinedCorrelation,
)
from .metrics import METRIC_NAMES, MetricReport, NtkSummary, ScoreConfig, compute_metrics, score_pool
from .netcore import Dataset, ModelInstance, init_params
from .searchspace import ArchPool, CellArch, decode, encode, sample_pool

__version__ = "0.1.0"

__all__ = [
    "METRIC_NAMES",
    "ArchPool",
    "CellArch",
    "ConfigError",
    "ConvergenceError",
    "Dataset",
    "DivergenceError",
    "EvaluatorError",
    "MetricReport",
    "ModelInstance",
    "NtkLabError",
    "NtkSummary",
    "NumericFailure",
    "ParseError",
    "ScoreConfig",
    "UndefinedCorrelation",
    "compute_metrics",
    "decode",
    "encode",
    "init_params",
    "sample_pool",
    "score_pool",
]
