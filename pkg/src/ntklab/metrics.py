"""Gradient-based training-free metrics and the empirical NTK at initialization."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .eigen import jacobi_eigh, sym_eigen
from .errors import ConfigError, NtkLabError, NumericFailure
from .netcore import (
    Dataset,
    GradientBundle,
    ModelInstance,
    hvp,
    init_params,
    loss_gradients,
    output_gradients,
)
from .searchspace import ArchPool
from .seeding import derive_seed

METRIC_NAMES = ("grad", "snip", "grasp", "trace")
KAPPA_FLOOR = 1e-12
PSD_TOL = 1e-8
TRACE_AGREEMENT = 1e-10

__all__ = [
    "METRIC_NAMES", "NtkSummary", "MetricReport", "ScoreConfig", "summarize_ntk", "ntk_matrix",
    "metric_trace", "metric_grad", "metric_snip", "metric_grasp", "sym_eigen", "jacobi_eigh",
    "compute_metrics", "score_pool", "sample_batch", "reports_to_jsonl", "reports_to_csv",
    "reports_from_jsonl",
]


@dataclass(frozen=True, eq=False)
class NtkSummary:
    matrix: np.ndarray
    trace: float
    lambda_min: float  # before clamping
    lambda_max: float
    kappa: float
    clamped: bool

    @property
    def m(self) -> int:
        return self.matrix.shape[0]


def summarize_ntk(matrix, arch_id: str | None = None) -> NtkSummary:
    """Spectrum, trace and condition number of a Gram matrix.

    ``lambda_min`` is floored at ``1e-12 * lambda_max`` for ``kappa``; the
    ``clamped`` flag records when the floor binds.  An all-zero matrix gives
    ``kappa = inf``.
    """
    mat = np.array(matrix, dtype=np.float64)
    mat = 0.5 * (mat + mat.T)
    eig = sym_eigen(mat)
    lam_min, lam_max = float(eig[0]), float(eig[-1])
    if lam_min < -PSD_TOL * max(lam_max, 0.0):
        raise NumericFailure(f"NTK not positive semidefinite (lambda_min={lam_min:.3e})", arch_id)
    if lam_max <= 0.0:
        kappa, clamped = math.inf, True
    else:
        floor = KAPPA_FLOOR * lam_max
        clamped = lam_min < floor
        kappa = lam_max / max(lam_min, floor)
    mat.flags.writeable = False
    return NtkSummary(mat, float(np.trace(mat)), lam_min, lam_max, kappa, clamped)


def ntk_matrix(model: ModelInstance, data: Dataset, bundle: GradientBundle | None = None) -> NtkSummary:
    if bundle is None:
        bundle = output_gradients(model, data)
    g = bundle.output_grads
    return summarize_ntk(g @ g.T, model.arch_id)


def metric_trace(model: ModelInstance, data: Dataset, bundle: GradientBundle | None = None,
                 ntk: NtkSummary | None = None) -> float:
    """sqrt(trace(NTK) / m), cross-checked against the per-sample gradient norms."""
    if bundle is None:
        bundle = output_gradients(model, data)
    if ntk is None:
        ntk = ntk_matrix(model, data, bundle)
    m = data.m
    via_matrix = math.sqrt(max(ntk.trace, 0.0) / m)
    via_norms = math.sqrt(float(np.sum(bundle.output_grads ** 2)) / m)
    if abs(via_matrix - via_norms) > TRACE_AGREEMENT * max(via_matrix, via_norms):
        raise NumericFailure(f"trace paths disagree: {via_matrix!r} vs {via_norms!r}", model.arch_id)
    return via_matrix


def _loss_bundle(model, data, bundle):
    if bundle is None or bundle.loss_grads is None:
        bundle = loss_gradients(model, data, bundle)
    return bundle


def metric_grad(model: ModelInstance, data: Dataset, bundle: GradientBundle | None = None) -> float:
    bundle = _loss_bundle(model, data, bundle)
    return float(np.linalg.norm(bundle.mean_loss_grad))


def metric_snip(model: ModelInstance, data: Dataset, bundle: GradientBundle | None = None) -> float:
    bundle = _loss_bundle(model, data, bundle)
    return abs(float(model.params @ bundle.mean_loss_grad))


def metric_grasp(model: ModelInstance, data: Dataset, bundle: GradientBundle | None = None,
                 method: str = "finite_diff") -> float:
    bundle = _loss_bundle(model, data, bundle)
    total = 0.0
    for i in range(data.m):
        g = bundle.loss_grads[i]
        if not np.any(g):
            continue
        total += float(model.params @ hvp(model, data, i, g, method))
    return abs(total / data.m)


@dataclass(frozen=True)
class MetricReport:
    arch_id: str
    grad: float | None
    snip: float | None
    grasp: float | None
    trace: float | None
    kappa: float | None
    clamped: bool
    m: int
    seed: int
    flag: str | None = None

    def value(self, metric: str) -> float | None:
        if metric not in METRIC_NAMES:
            raise ConfigError(f"unknown metric {metric!r}")
        return getattr(self, metric)

    @property
    def ok(self) -> bool:
        return self.flag is None

    def usable(self, metric: str) -> bool:
        """True when the report can enter an objective that divides by the metric."""
        v = self.value(metric)
        return self.ok and v is not None and v > 0 and self.kappa is not None and math.isfinite(self.kappa)


def compute_metrics(model: ModelInstance, data: Dataset, which=METRIC_NAMES) -> MetricReport:
    which = tuple(which)
    for w in which:
        if w not in METRIC_NAMES:
            raise ConfigError(f"unknown metric {w!r}")
    bundle = loss_gradients(model, data)
    ntk = ntk_matrix(model, data, bundle)
    values = {
        "trace": metric_trace(model, data, bundle, ntk) if "trace" in which else None,
        "grad": metric_grad(model, data, bundle) if "grad" in which else None,
        "snip": metric_snip(model, data, bundle) if "snip" in which else None,
        "grasp": metric_grasp(model, data, bundle) if "grasp" in which else None,
    }
    kappa = ntk.kappa if math.isfinite(ntk.kappa) else None
    flag = None if kappa is not None else "degenerate_ntk"
    return MetricReport(model.arch_id, values["grad"], values["snip"], values["grasp"], values["trace"],
                        kappa, ntk.clamped, data.m, model.seed, flag)


@dataclass(frozen=True)
class ScoreConfig:
    width: int = 32
    scheme: str = "lecun"
    seed: int = 0
    metrics: tuple[str, ...] = METRIC_NAMES
    jobs: int = 1


def sample_batch(data: Dataset, m: int, seed: int) -> Dataset:
    """Fixed-seed batch of ``m`` samples (without replacement) used for metric evaluation."""
    if m < 1:
        raise ConfigError("batch size must be >= 1")
    if m >= data.m:
        return data
    idx = np.sort(np.random.default_rng(derive_seed(seed, "metric-batch")).choice(data.m, size=m, replace=False))
    return data.subset(idx)


def _score_one(args) -> MetricReport:
    arch, data, config = args
    seed = derive_seed(config.seed, arch.arch_id)
    try:
        model = init_params(arch, config.width, data.input_dim, config.scheme, seed)
        return compute_metrics(model, data, config.metrics)
    except NtkLabError as exc:
        if isinstance(exc, ConfigError):
            raise
        return MetricReport(arch.arch_id, None, None, None, None, None, False, data.m, seed,
                            f"numeric: {exc}")


def score_pool(pool: ArchPool, data: Dataset, config: ScoreConfig = ScoreConfig()) -> list[MetricReport]:
    """One report per architecture, in pool order.  Failures are flagged, not raised."""
    archs = list(pool)
    if not archs:
        raise ConfigError("pool is empty")
    tasks = [(a, data, config) for a in archs]
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as ex:
            return list(ex.map(_score_one, tasks, chunksize=max(1, len(tasks) // (4 * config.jobs))))
    return [_score_one(t) for t in tasks]


# ---------------------------------------------------------------------------
# Serialization

CSV_COLUMNS = ("arch_id", "grad", "snip", "grasp", "trace", "kappa", "clamped")


def reports_to_jsonl(reports, header: dict | None = None) -> str:
    lines = []
    if header is not None:
        lines.append(json.dumps(header, sort_keys=True))
    lines.extend(json.dumps(asdict(r), sort_keys=True) for r in reports)
    return "\n".join(lines) + "\n"


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(float(v)) if isinstance(v, float) else str(v)


def reports_to_csv(reports, header: dict | None = None) -> str:
    buf = io.StringIO()
    if header is not None:
        buf.write("# " + json.dumps(header, sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in reports:
        w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
    return buf.getvalue()


def reports_from_jsonl(text: str) -> tuple[dict | None, list[MetricReport]]:
    header, reports = None, []
    for line in text.splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        if "arch_id" not in obj:
            header = obj
            continue
        reports.append(MetricReport(**obj))
    return header, reports
