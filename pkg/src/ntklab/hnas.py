"""Hybrid search: Bayesian optimization over the objective's (mu, nu) plus baselines.

Each BO step proposes ``(mu, nu)``, picks the pool architecture minimizing
``kappa / metric + mu (metric^2 - nu)^2``, evaluates its validation score (higher is
better), and refits the GP on the observed scores.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .bounds import ObjectiveParams, hnas_objective_array
from .errors import ConfigError, EvaluatorError
from .gp import GpConfig, ei_from_moments, gp_fit, gp_posterior_batch
from .metrics import MetricReport, ScoreConfig, score_pool
from .seeding import derive_seed

LOG_MU_RANGE = (-8.0, 4.0)
N_INIT = 5
N_CANDIDATES = 2048

Evaluator = Callable[[str], float]


@dataclass(frozen=True)
class StepRecord:
    k: int
    mu: float | None
    nu: float | None
    arch: str
    val: float


@dataclass
class SearchTrace:
    steps: list[StepRecord] = field(default_factory=list)
    evals: int = 0

    @property
    def best_arch(self) -> str | None:
        best = self._best()
        return None if best is None else best.arch

    @property
    def best_val(self) -> float | None:
        best = self._best()
        return None if best is None else best.val

    def _best(self) -> StepRecord | None:
        best = None
        for s in self.steps:  # earliest step wins ties
            if best is None or s.val > best.val:
                best = s
        return best

    def to_dict(self) -> dict:
        return {
            "steps": [asdict(s) for s in self.steps],
            "best_arch": self.best_arch,
            "best_val": self.best_val,
            "evals": self.evals,
        }

    def to_json(self, **extra) -> str:
        return json.dumps({**extra, **self.to_dict()}, sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_dict(cls, obj: dict) -> SearchTrace:
        return cls([StepRecord(**s) for s in obj["steps"]], obj["evals"])


class _Memo:
    """Caches validation scores so each architecture is evaluated at most once."""

    def __init__(self, evaluator: Evaluator, trace: SearchTrace):
        self.evaluator = evaluator
        self.trace = trace
        self.cache: dict[str, float] = {}

    def __call__(self, arch_id: str) -> float:
        if arch_id not in self.cache:
            try:
                val = float(self.evaluator(arch_id))
            except Exception as exc:
                raise EvaluatorError(f"evaluator failed on {arch_id}: {exc}", self.trace) from exc
            if not math.isfinite(val):
                raise EvaluatorError(f"evaluator returned non-finite score for {arch_id}", self.trace)
            self.cache[arch_id] = val
            self.trace.evals += 1
        return self.cache[arch_id]


class Candidates:
    """Usable reports sorted by canonical ID, with metric/kappa arrays."""

    def __init__(self, reports: list[MetricReport], metric: str):
        usable = sorted((r for r in reports if r.usable(metric)), key=lambda r: r.arch_id)
        if not usable:
            raise ConfigError("no usable architectures (all flagged or zero metric)")
        self.ids = [r.arch_id for r in usable]
        self.metric = np.array([r.value(metric) for r in usable])
        self.kappa = np.array([r.kappa for r in usable])

    def select(self, params: ObjectiveParams) -> str:
        obj = hnas_objective_array(self.metric, self.kappa, params)
        return self.ids[int(np.argmin(obj))]  # first minimum = smallest ID


def select_candidate(reports: list[MetricReport], metric: str, params: ObjectiveParams) -> str:
    if not reports:
        raise ConfigError("no reports")
    return Candidates(reports, metric).select(params)


def _decode_point(u: np.ndarray, nu_box: tuple[float, float]) -> tuple[float, float]:
    lo, hi = LOG_MU_RANGE
    log_mu = lo + (hi - lo) * u[0]
    log_nu = nu_box[0] + (nu_box[1] - nu_box[0]) * u[1]
    return 10.0 ** log_mu, 10.0 ** log_nu


def hnas_search(reports: list[MetricReport], metric: str, evaluator: Evaluator, budget: int, seed: int,
                n_init: int = N_INIT, n_candidates: int = N_CANDIDATES,
                gp_config: GpConfig = GpConfig()) -> SearchTrace:
    if budget < 1:
        raise ConfigError("budget must be >= 1")
    cands = Candidates(reports, metric)
    m2 = cands.metric ** 2
    nu_box = (math.log10(0.5 * float(m2.min())), math.log10(2.0 * float(m2.max())))
    rng = np.random.default_rng(derive_seed(seed, "hnas"))
    design = rng.random((min(n_init, budget), 2))
    trace = SearchTrace()
    evaluate = _Memo(evaluator, trace)
    points: list[np.ndarray] = []
    vals: list[float] = []
    for k in range(budget):
        if k < len(design):
            u = design[k]
        else:
            state = gp_fit(np.array(points), np.array(vals), gp_config)
            grid = rng.random((n_candidates, 2))
            mean, var = gp_posterior_batch(state, grid)
            ei = ei_from_moments(mean, np.sqrt(var), max(vals))
            u = grid[int(np.argmax(ei))]
        mu, nu = _decode_point(u, nu_box)
        arch = cands.select(ObjectiveParams(mu, nu))
        val = evaluate(arch)
        trace.steps.append(StepRecord(k + 1, mu, nu, arch, val))
        points.append(u)
        vals.append(val)
    return trace


def run_hnas(pool, data, metric: str, evaluator: Evaluator, budget: int, seed: int,
             score_config: ScoreConfig | None = None) -> tuple[SearchTrace, list[MetricReport]]:
    """Score the pool once, then search."""
    if score_config is None:
        score_config = ScoreConfig(seed=seed, metrics=(metric,))
    reports = score_pool(pool, data, score_config)
    return hnas_search(reports, metric, evaluator, budget, seed), reports


def random_search(arch_ids: list[str], evaluator: Evaluator, budget: int, seed: int) -> SearchTrace:
    if budget < 1:
        raise ConfigError("budget must be >= 1")
    rng = np.random.default_rng(derive_seed(seed, "random-search"))
    picks = rng.choice(len(arch_ids), size=min(budget, len(arch_ids)), replace=False)
    trace = SearchTrace()
    evaluate = _Memo(evaluator, trace)
    for k, idx in enumerate(picks):
        arch = arch_ids[int(idx)]
        trace.steps.append(StepRecord(k + 1, None, None, arch, evaluate(arch)))
    return trace


def training_free_argmax(reports: list[MetricReport], metric: str, evaluator: Evaluator) -> SearchTrace:
    """Evaluate only the architecture with the largest metric value."""
    usable = sorted((r for r in reports if r.ok and r.value(metric) is not None), key=lambda r: r.arch_id)
    if not usable:
        raise ConfigError("no usable architectures")
    values = np.array([r.value(metric) for r in usable])
    arch = usable[int(np.argmax(values))].arch_id
    trace = SearchTrace()
    trace.steps.append(StepRecord(1, None, None, arch, _Memo(evaluator, trace)(arch)))
    return trace


def baselines(reports: list[MetricReport], metric: str, evaluator: Evaluator, budget: int,
              seed: int) -> dict[str, SearchTrace]:
    ids = [r.arch_id for r in reports]
    return {
        "random": random_search(ids, evaluator, budget, seed),
        "training_free": training_free_argmax(reports, metric, evaluator),
    }
