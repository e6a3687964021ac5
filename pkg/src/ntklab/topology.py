"""NTKs of the wide (sum of layers) and deep (product of layers) linear nets.

``wide``: ``f(x) = 1^T (W_1 + ... + W_L) x``.  Every row of every ``W_i`` has
gradient ``x``, so the NTK is ``L n X^T X`` for any draw of the weights.

``deep``: ``f(x) = 1^T W_L ... W_1 x``.  Row ``j`` of ``W_i`` has gradient
``s_i[j] * P_{i-1} x`` with ``s_i = 1^T W_L ... W_{i+1}`` and
``P_{i-1} = W_{i-1} ... W_1``, giving
``NTK = sum_i |s_i|^2 (P_{i-1} X)^T (P_{i-1} X)``.  Its expectation over
standard normal weights is ``L n^L X^T X``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .metrics import NtkSummary, ntk_matrix, summarize_ntk
from .netcore import BuiltinArch, Dataset, init_params
from .seeding import derive_seed

ORTHO_TOL = 1e-12
PRECONDITION_TOL = 1e-9
CSV_HEADER = "topology,n,L,m,trials,trace_metric_mean,trace_metric_std,kappa_mean,kappa_std"


@dataclass(frozen=True)
class TopologySpec:
    n: int
    L: int
    m: int
    seed: int = 0

    def __post_init__(self):
        if self.n < 2 or self.L < 1 or self.m < 1:
            raise ConfigError("need n >= 2, L >= 1, m >= 1")
        if self.m > self.n:
            raise ConfigError(f"m={self.m} exceeds input dimension n={self.n}")


def orthonormalize(X) -> np.ndarray:
    """Center each column by its own mean, then modified Gram-Schmidt (two passes).

    Columns are samples.  Raises ``ConfigError`` if ``m > n0`` or the centered
    columns are linearly dependent.
    """
    A = np.array(X, dtype=np.float64)
    if A.ndim != 2:
        raise ConfigError("expected an n0 x m matrix")
    n0, m = A.shape
    if m > n0:
        raise ConfigError(f"cannot orthonormalize {m} columns in dimension {n0}")
    A = A - A.mean(axis=0, keepdims=True)
    scale = max(float(np.max(np.linalg.norm(A, axis=0))) if m else 0.0, 1e-300)
    Q = np.zeros_like(A)
    for k in range(m):
        v = A[:, k].copy()
        for _ in range(2):  # second pass restores orthogonality lost to rounding
            for j in range(k):
                v -= (Q[:, j] @ v) * Q[:, j]
        norm = float(np.linalg.norm(v))
        if norm <= 1e-10 * scale:
            raise ConfigError(f"column {k} is linearly dependent on earlier columns after centering")
        Q[:, k] = v / norm
    return Q


def _check_inputs(spec: TopologySpec, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape != (spec.n, spec.m):
        raise ConfigError(f"expected X of shape {(spec.n, spec.m)}, got {X.shape}")
    if float(np.max(np.abs(X.T @ X - np.eye(spec.m)))) > PRECONDITION_TOL:
        raise ConfigError("inputs must satisfy X^T X = I")
    return X


def _as_dataset(X: np.ndarray) -> Dataset:
    return Dataset(X.T.copy(), np.zeros(X.shape[1]), "topology")


def wide_ntk(spec: TopologySpec, X) -> NtkSummary:
    """Empirical NTK of the wide net via backprop through the reference model."""
    X = _check_inputs(spec, X)
    model = init_params(BuiltinArch("wide", spec.L), spec.n, spec.n, seed=spec.seed)
    return ntk_matrix(model, _as_dataset(X))


def deep_weights(spec: TopologySpec, seed: int) -> list[np.ndarray]:
    """Same draws as ``init_params`` on the deep reference model."""
    model = init_params(BuiltinArch("deep", spec.L), spec.n, spec.n, seed=seed)
    blocks = model.blocks()
    return [blocks[f"W{i + 1}"] for i in range(spec.L)]


def deep_ntk_matrix(weights: list[np.ndarray], X: np.ndarray) -> np.ndarray:
    L = len(weights)
    n = weights[0].shape[0]
    # suffix[i] = 1^T W_L ... W_{i+2}, so suffix[i] is the s vector for layer i+1
    suffix = [None] * L
    s = np.ones(n)
    for i in range(L - 1, -1, -1):
        suffix[i] = s
        s = s @ weights[i]
    theta = np.zeros((X.shape[1], X.shape[1]))
    P = X
    for i in range(L):
        theta += float(suffix[i] @ suffix[i]) * (P.T @ P)
        P = weights[i] @ P
    return 0.5 * (theta + theta.T)


def deep_ntk(spec: TopologySpec, X) -> NtkSummary:
    X = _check_inputs(spec, X)
    return summarize_ntk(deep_ntk_matrix(deep_weights(spec, spec.seed), X), BuiltinArch("deep", spec.L).arch_id)


def trace_metric(ntk: NtkSummary) -> float:
    return math.sqrt(max(ntk.trace, 0.0) / ntk.m)


@dataclass(frozen=True)
class DeepExpectation:
    mean: np.ndarray
    std: np.ndarray  # entrywise standard deviation across trials
    kappas: np.ndarray
    trace_metrics: np.ndarray

    @property
    def trials(self) -> int:
        return self.kappas.shape[0]


def trial_seed(spec: TopologySpec, k: int) -> int:
    return derive_seed(spec.seed, f"deep-trial:{k}")


def deep_expectation(spec: TopologySpec, X, trials: int) -> DeepExpectation:
    """Monte Carlo mean of the deep NTK over independent initializations."""
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    X = _check_inputs(spec, X)
    mats = np.empty((trials, spec.m, spec.m))
    kappas = np.empty(trials)
    traces = np.empty(trials)
    for k in range(trials):
        summary = summarize_ntk(deep_ntk_matrix(deep_weights(spec, trial_seed(spec, k)), X))
        mats[k] = summary.matrix
        kappas[k] = summary.kappa
        traces[k] = trace_metric(summary)
    # compensated summation keeps the mean independent of trial order
    mean = np.array([[math.fsum(mats[:, i, j]) / trials for j in range(spec.m)] for i in range(spec.m)])
    std = np.sqrt(np.array([[math.fsum((mats[:, i, j] - mean[i, j]) ** 2) / trials
                             for j in range(spec.m)] for i in range(spec.m)]))
    return DeepExpectation(mean, std, kappas, traces)


def standard_inputs(spec: TopologySpec) -> np.ndarray:
    """Seeded Gaussian inputs, orthonormalized."""
    rng = np.random.default_rng(derive_seed(spec.seed, "topology-inputs"))
    return orthonormalize(rng.standard_normal((spec.n, spec.m)))


@dataclass(frozen=True)
class TopologyRow:
    topology: str
    n: int
    L: int
    m: int
    trials: int
    trace_metric_mean: float
    trace_metric_std: float
    kappa_mean: float
    kappa_std: float

    def csv(self) -> str:
        return (f"{self.topology},{self.n},{self.L},{self.m},{self.trials},{self.trace_metric_mean!r},"
                f"{self.trace_metric_std!r},{self.kappa_mean!r},{self.kappa_std!r}")


def _row(name: str, spec: TopologySpec, trace_metrics: np.ndarray, kappas: np.ndarray) -> TopologyRow:
    return TopologyRow(name, spec.n, spec.L, spec.m, len(kappas), float(np.mean(trace_metrics)),
                       float(np.std(trace_metrics)), float(np.mean(kappas)), float(np.std(kappas)))


def topology_report(specs: list[TopologySpec], trials: int) -> list[TopologyRow]:
    """Mean and std of the trace metric and kappa for both topologies, per configuration."""
    rows = []
    for spec in specs:
        X = standard_inputs(spec)
        wide_m, wide_k = np.empty(trials), np.empty(trials)
        for k in range(trials):
            s = wide_ntk(TopologySpec(spec.n, spec.L, spec.m, trial_seed(spec, k)), X)
            wide_m[k], wide_k[k] = trace_metric(s), s.kappa
        deep = deep_expectation(spec, X, trials)
        rows.append(_row("wide", spec, wide_m, wide_k))
        rows.append(_row("deep", spec, deep.trace_metrics, deep.kappas))
    return rows


def report_csv(rows: list[TopologyRow]) -> str:
    return "\n".join([CSV_HEADER] + [r.csv() for r in rows]) + "\n"


def verify_wide(spec: TopologySpec, X, rtol: float = 1e-9) -> tuple[bool, float]:
    """Whether the wide NTK equals ``L n I``; also returns the max relative error."""
    s = wide_ntk(spec, X)
    target = spec.L * spec.n
    err = float(np.max(np.abs(s.matrix - target * np.eye(spec.m)))) / target
    return err <= rtol and abs(s.kappa - 1.0) <= rtol, err
