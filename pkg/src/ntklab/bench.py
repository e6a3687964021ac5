"""Datasets, tabular benchmarks, and the correlation experiments."""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bounds import BoundParams, ObjectiveParams, hnas_objective, nonrealizable_score, realizable_score
from .errors import ConfigError, NtkLabError
from .gp import ei_from_moments, gp_fit, gp_posterior_batch
from .hnas import N_CANDIDATES, N_INIT
from .metrics import METRIC_NAMES, MetricReport, ScoreConfig, ntk_matrix, score_pool
from .netcore import Dataset, init_params, load_dataset_csv, mse, train_gd
from .searchspace import ArchPool, decode
from .seeding import derive_seed, rng_for
from .stats import kendall, pearson, spearman

SCHEMA_VERSION = "1.0"
TEACHER_HIDDEN = 16


# ---------------------------------------------------------------------------
# Datasets


def _unit_ball(rng: np.random.Generator, m: int, n0: int) -> np.ndarray:
    g = rng.standard_normal((m, n0))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * rng.random(m)[:, None] ** (1.0 / n0)


def teacher_weights(seed: int, n0: int) -> tuple[np.ndarray, np.ndarray]:
    """Weights of the fixed 2-layer tanh teacher; depends only on (seed, n0)."""
    rng = rng_for(seed, f"teacher:{n0}")
    return rng.standard_normal((TEACHER_HIDDEN, n0)), rng.standard_normal(TEACHER_HIDDEN)


def teacher_outputs(seed: int, X: np.ndarray) -> np.ndarray:
    w1, w2 = teacher_weights(seed, X.shape[1])
    return np.tanh(X @ w1.T) @ w2 / math.sqrt(TEACHER_HIDDEN)


def make_dataset(kind: str = "teacher", n0: int = 8, m_train: int = 64, m_val: int = 64, m_test: int = 64,
                 seed: int = 0, path=None) -> tuple[Dataset, Dataset, Dataset]:
    """Train/val/test splits.

    ``teacher``: x uniform on the unit ball, labels from a random 2-layer tanh
    teacher, min-max normalized with train-split statistics (val/test clipped
    to [0, 1]).  ``file``: CSV loaded via :func:`load_dataset_csv`, shuffled
    with ``seed`` and split in order.
    """
    if min(m_train, m_val, m_test) < 1 or n0 < 1:
        raise ConfigError("dataset sizes must be >= 1")
    sizes = (m_train, m_val, m_test)
    if kind == "teacher":
        rng = rng_for(seed, "inputs")
        X = _unit_ball(rng, sum(sizes), n0)
        raw = teacher_outputs(seed, X)
        lo, hi = float(raw[:m_train].min()), float(raw[:m_train].max())
        span = hi - lo if hi > lo else 1.0
        y = np.clip((raw - lo) / span, 0.0, 1.0)
        meta = {"kind": "teacher", "seed": seed, "label_min": lo, "label_max": hi}
    elif kind == "file":
        if path is None:
            raise ConfigError("file datasets need a path")
        full = load_dataset_csv(path)
        if full.m < sum(sizes):
            raise ConfigError(f"{path}: {full.m} rows but {sum(sizes)} requested")
        perm = np.random.default_rng(derive_seed(seed, "split")).permutation(full.m)[:sum(sizes)]
        X, y = full.inputs[perm], full.labels[perm]
        meta = dict(full.meta, kind="file")
    else:
        raise ConfigError(f"unknown dataset kind {kind!r}")
    cuts = np.cumsum((0,) + sizes)
    names = ("train", "val", "test")
    return tuple(Dataset(X[a:b], y[a:b], f"{kind}-{nm}", dict(meta)) for nm, a, b in zip(names, cuts[:-1], cuts[1:]))


def fingerprint(*datasets: Dataset) -> str:
    h = hashlib.sha256()
    for d in datasets:
        h.update(np.ascontiguousarray(d.inputs).tobytes())
        h.update(np.ascontiguousarray(d.labels).tobytes())
    return h.hexdigest()[:16]


# ---------------------------------------------------------------------------
# Tabular benchmarks


@dataclass(frozen=True)
class BenchEntry:
    val: float | None
    test: float | None
    steps: int
    flag: str | None = None


@dataclass
class TabularBench:
    entries: dict[str, BenchEntry]
    dataset_fingerprint: str
    seed: int
    mode: str
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in ("trained", "synthetic"):
            raise ConfigError(f"unknown bench mode {self.mode!r}")
        for arch_id, e in self.entries.items():
            decode(arch_id)
            if e.flag is None and not (e.val is not None and e.test is not None
                                       and math.isfinite(e.val) and math.isfinite(e.test)):
                raise ConfigError(f"unflagged bench entry {arch_id} has non-finite scores")

    def valid_ids(self) -> list[str]:
        return sorted(a for a, e in self.entries.items() if e.flag is None)

    def evaluator(self, counter: dict | None = None):
        """Tabular lookup of validation scores; flagged entries raise."""
        def evaluate(arch_id: str) -> float:
            if counter is not None:
                counter["lookups"] = counter.get("lookups", 0) + 1
            e = self.entries.get(arch_id)
            if e is None:
                raise KeyError(f"{arch_id} not in bench")
            if e.flag is not None:
                raise ValueError(f"{arch_id} is flagged ({e.flag})")
            return e.val
        return evaluate

    def to_json(self) -> str:
        obj = {
            "schema_version": SCHEMA_VERSION,
            "mode": self.mode,
            "seed": self.seed,
            "dataset_fingerprint": self.dataset_fingerprint,
            "config": self.config,
            "entries": {a: {"val": e.val, "test": e.test, "steps": e.steps, "flag": e.flag}
                        for a, e in sorted(self.entries.items())},
        }
        return json.dumps(obj, sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> TabularBench:
        obj = json.loads(text)
        check_schema(obj.get("schema_version", SCHEMA_VERSION))
        entries = {a: BenchEntry(e["val"], e["test"], e["steps"], e.get("flag"))
                   for a, e in obj["entries"].items()}
        return cls(entries, obj["dataset_fingerprint"], obj["seed"], obj["mode"], obj.get("config", {}))


def check_schema(version: str):
    major = str(version).split(".")[0]
    if major != SCHEMA_VERSION.split(".")[0]:
        raise ConfigError(f"unsupported schema version {version} (reader supports {SCHEMA_VERSION})")


@dataclass(frozen=True)
class TrainConfig:
    width: int = 32
    steps: int = 200
    scheme: str = "lecun"
    lr_cap: float = 0.1
    jobs: int = 1


def policy_lr(lambda_max: float, m: int, cap: float = 0.1) -> float:
    """``min(cap, 0.5 m / lambda_max)``: half the linearized stability limit."""
    if lambda_max <= 0:
        return cap
    return min(cap, 0.5 * m / lambda_max)


def _train_one(args):
    arch, train, val, test, config, seed = args
    arch_seed = derive_seed(seed, arch.arch_id)
    try:
        model = init_params(arch, config.width, train.input_dim, config.scheme, arch_seed)
        lam_max = ntk_matrix(model, train).lambda_max
        lr = policy_lr(lam_max, train.m, config.lr_cap)
        trained, _ = train_gd(model, train, lr, config.steps)
        return arch.arch_id, BenchEntry(-mse(trained, val), mse(trained, test), config.steps)
    except NtkLabError as exc:
        if isinstance(exc, ConfigError):
            raise
        return arch.arch_id, BenchEntry(None, None, config.steps, f"diverged: {exc}")


def build_bench(pool: ArchPool, datasets: tuple[Dataset, Dataset, Dataset], config: TrainConfig = TrainConfig(),
                seed: int = 0) -> TabularBench:
    """Train every architecture with full-batch GD and record val/test MSE."""
    if len(pool) == 0:
        raise ConfigError("pool is empty")
    train, val, test = datasets
    tasks = [(a, train, val, test, config, seed) for a in pool]
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as ex:
            results = list(ex.map(_train_one, tasks))
    else:
        results = [_train_one(t) for t in tasks]
    cfg = {"width": config.width, "steps": config.steps, "scheme": config.scheme, "lr_cap": config.lr_cap}
    return TabularBench(dict(results), fingerprint(train, val, test), seed, "trained", cfg)


def live_evaluator(datasets: tuple[Dataset, Dataset, Dataset], config: TrainConfig = TrainConfig(),
                   seed: int = 0, counter: dict | None = None):
    """Evaluator that trains each requested architecture on demand (same protocol as ``build_bench``)."""
    def evaluate(arch_id: str) -> float:
        if counter is not None:
            counter["train_calls"] = counter.get("train_calls", 0) + 1
        _, entry = _train_one((decode(arch_id), *datasets, config, seed))
        if entry.flag is not None:
            raise ValueError(f"{arch_id}: {entry.flag}")
        return entry.val
    return evaluate


def synth_bench(reports: list[MetricReport], metric: str, hidden: ObjectiveParams, noise: float = 0.0,
                seed: int = 0) -> TabularBench:
    """Planted-optimum bench: val = -objective + noise, test = objective + independent noise."""
    if noise < 0:
        raise ConfigError("noise must be >= 0")
    rng = rng_for(seed, "synth-bench")
    entries = {}
    for r in sorted(reports, key=lambda r: r.arch_id):
        eps_val, eps_test = rng.standard_normal(2) * noise
        if not r.usable(metric):
            entries[r.arch_id] = BenchEntry(None, None, 0, "unusable_metric")
            continue
        obj = hnas_objective(r.value(metric), r.kappa, hidden)
        entries[r.arch_id] = BenchEntry(-obj + eps_val, obj + eps_test, 0)
    fp = hashlib.sha256(json.dumps([r.arch_id for r in reports]).encode()).hexdigest()[:16]
    cfg = {"metric": metric, "mu": hidden.mu, "nu": hidden.nu, "t": hidden.t, "noise": noise}
    return TabularBench(entries, fp, seed, "synthetic", cfg)


# ---------------------------------------------------------------------------
# Correlations


@dataclass(frozen=True)
class CorrelationRow:
    metric: str
    spearman: float
    kendall: float
    pearson: float
    n: int


@dataclass
class CorrelationReport:
    scenario: str
    rows: list[CorrelationRow]
    params: dict = field(default_factory=dict)

    def row(self, metric: str) -> CorrelationRow:
        for r in self.rows:
            if r.metric == metric:
                return r
        raise KeyError(metric)

    def to_csv(self) -> str:
        lines = ["scenario,metric,spearman,kendall,pearson,n"]
        lines += [f"{self.scenario},{r.metric},{r.spearman!r},{r.kendall!r},{r.pearson!r},{r.n}" for r in self.rows]
        return "\n".join(lines) + "\n"


def _aligned(bench: TabularBench, reports: list[MetricReport], metric: str):
    by_id = {r.arch_id: r for r in reports}
    ids = [a for a in bench.valid_ids() if a in by_id and by_id[a].usable(metric)]
    if len(ids) < 3:
        raise ConfigError(f"only {len(ids)} architectures shared between bench and reports for {metric}")
    values = np.array([by_id[a].value(metric) for a in ids])
    kappas = np.array([by_id[a].kappa for a in ids])
    err = np.array([bench.entries[a].test for a in ids])
    return values, kappas, err


def bound_scores(values: np.ndarray, kappas: np.ndarray, scenario: str, params: BoundParams | None) -> np.ndarray:
    if scenario == "realizable":
        return np.array([realizable_score(v) for v in values])
    if scenario == "nonrealizable":
        if params is None:
            raise ConfigError("non-realizable scenario needs bound parameters")
        return np.array([nonrealizable_score(v, k, params) for v, k in zip(values, kappas)])
    raise ConfigError(f"unknown scenario {scenario!r}")


def _row(metric: str, scores: np.ndarray, err: np.ndarray) -> CorrelationRow:
    return CorrelationRow(metric, spearman(scores, err), kendall(scores, err), pearson(scores, err), len(err))


def correlate(bench: TabularBench, reports: list[MetricReport], scenario: str,
              params: dict[str, BoundParams] | BoundParams | None = None,
              metrics=METRIC_NAMES) -> CorrelationReport:
    """Correlate bound scores with test error for every metric present in the reports."""
    rows, used = [], {}
    for metric in metrics:
        if not any(r.value(metric) is not None for r in reports):
            continue
        p = params.get(metric) if isinstance(params, dict) else params
        values, kappas, err = _aligned(bench, reports, metric)
        rows.append(_row(metric, bound_scores(values, kappas, scenario, p), err))
        if p is not None:
            used[metric] = {"eta": p.eta, "c": p.c, "t": p.t, "m": p.m}
    return CorrelationReport(scenario, rows, used)


LOG_LAMBDA_RANGE = (-8.0, 2.0)


def optimize_bound_params(bench: TabularBench, reports: list[MetricReport], metric: str, budget: int = 20,
                          seed: int = 0) -> tuple[BoundParams, CorrelationReport]:
    """BO over ``lambda = eta / (m c)`` (t = 1, c = 1) maximizing Spearman with test error."""
    if budget < 1:
        raise ConfigError("budget must be >= 1")
    values, kappas, err = _aligned(bench, reports, metric)
    m = next(r.m for r in reports if r.usable(metric))
    lo, hi = LOG_LAMBDA_RANGE

    def objective(u: float) -> float:
        params = BoundParams.from_lambda(10.0 ** (lo + (hi - lo) * u), m)
        return spearman(bound_scores(values, kappas, "nonrealizable", params), err)

    rng = rng_for(seed, f"bound-bo:{metric}")
    design = rng.random(min(N_INIT, budget))
    us, vals = [], []
    for k in range(budget):
        if k < len(design):
            u = float(design[k])
        else:
            state = gp_fit(np.array(us)[:, None], np.array(vals))
            grid = rng.random((N_CANDIDATES, 1))
            mean, var = gp_posterior_batch(state, grid)
            u = float(grid[int(np.argmax(ei_from_moments(mean, np.sqrt(var), max(vals)))), 0])
        us.append(u)
        vals.append(objective(u))
    best = int(np.argmax(vals))
    params = BoundParams.from_lambda(10.0 ** (lo + (hi - lo) * us[best]), m)
    report = CorrelationReport("nonrealizable", [_row(metric, bound_scores(values, kappas, "nonrealizable", params), err)],
                               {metric: {"eta": params.eta, "c": params.c, "t": params.t, "m": params.m}})
    return params, report


@dataclass
class TransferReport:
    scenario: str
    datasets: list[str]
    correlations: dict[str, list[float]]  # metric -> Spearman per metric dataset

    def mean(self, metric: str) -> float:
        return float(np.mean(self.correlations[metric]))

    def std(self, metric: str) -> float:
        return float(np.std(self.correlations[metric]))

    def to_csv(self) -> str:
        lines = ["scenario,metric,mean,std,n_datasets," + ",".join(f"spearman_{d}" for d in self.datasets)]
        for metric, vals in self.correlations.items():
            lines.append(f"{self.scenario},{metric},{self.mean(metric)!r},{self.std(metric)!r},{len(vals)},"
                         + ",".join(repr(v) for v in vals))
        return "\n".join(lines) + "\n"


def transfer_experiment(bench: TabularBench, pool: ArchPool, metric_datasets: list[Dataset], scenario: str,
                        params: dict[str, BoundParams] | BoundParams | None = None,
                        score_config: ScoreConfig = ScoreConfig(),
                        metrics=METRIC_NAMES) -> tuple[TransferReport, list[list[MetricReport]]]:
    """Re-score the pool on each metric dataset and correlate against the fixed bench."""
    if len(metric_datasets) < 2:
        raise ConfigError("need at least 2 metric datasets")
    all_reports = []
    corrs: dict[str, list[float]] = {m: [] for m in metrics}
    for data in metric_datasets:
        reports = score_pool(pool, data, score_config)
        all_reports.append(reports)
        rep = correlate(bench, reports, scenario, params, metrics)
        for row in rep.rows:
            corrs[row.metric].append(row.spearman)
    corrs = {k: v for k, v in corrs.items() if v}
    return TransferReport(scenario, [d.name for d in metric_datasets], corrs), all_reports
