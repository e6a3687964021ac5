import json

import numpy as np
import pytest

from conftest import PLANT_BENCH_SEED, PLANT_MU, PLANT_NOISE, PLANT_NU
from ntklab.bench import (
    BenchEntry,
    TabularBench,
    TrainConfig,
    build_bench,
    correlate,
    make_dataset,
    optimize_bound_params,
    policy_lr,
    synth_bench,
    teacher_outputs,
    transfer_experiment,
)
from ntklab.bounds import BoundParams, ObjectiveParams, hnas_objective
from ntklab.errors import ConfigError
from ntklab.metrics import MetricReport, ScoreConfig, score_pool
from ntklab.netcore import Dataset, init_params, mse
from ntklab.searchspace import ArchPool, CellArch, sample_pool
from ntklab.seeding import derive_seed
from ntklab.stats import spearman

SMALL_SCORE = ScoreConfig(width=8, seed=0)


class TestDatasets:
    def test_deterministic(self):
        a, b = make_dataset(seed=3), make_dataset(seed=3)
        for x, y in zip(a, b):
            assert np.array_equal(x.inputs, y.inputs) and np.array_equal(x.labels, y.labels)

    def test_contract(self):
        for d in make_dataset(n0=5, seed=1):
            assert np.all(np.linalg.norm(d.inputs, axis=1) <= 1 + 1e-12)
            assert np.all((d.labels >= 0) & (d.labels <= 1))

    def test_labels_reproducible_from_seed_and_dim(self):
        train, _, _ = make_dataset(n0=6, m_train=20, seed=7)
        raw = teacher_outputs(7, train.inputs)
        lo, hi = train.meta["label_min"], train.meta["label_max"]
        assert np.allclose((raw - lo) / (hi - lo), train.labels, atol=1e-14)

    def test_bad_sizes(self):
        with pytest.raises(ConfigError):
            make_dataset(m_train=0)
        with pytest.raises(ConfigError):
            make_dataset(kind="nope")


def test_policy_lr():
    assert policy_lr(10.0, 4) == 0.1
    assert policy_lr(100.0, 4) == pytest.approx(0.02)
    assert policy_lr(0.0, 4, cap=0.3) == 0.3


class TestBuildBench:
    def test_zero_steps_scores_initialization(self):
        data = make_dataset(m_train=8, m_val=8, m_test=8, seed=0)
        arch = CellArch.from_index(1234)
        bench = build_bench(ArchPool((arch,)), data, TrainConfig(width=8, steps=0), seed=4)
        model = init_params(arch, 8, 8, seed=derive_seed(4, arch.arch_id))
        assert bench.entries[arch.arch_id].val == -mse(model, data[1])
        assert bench.entries[arch.arch_id].test == mse(model, data[2])

    def test_rebuild_identical(self):
        data = make_dataset(m_train=8, m_val=8, m_test=8, seed=0)
        pool = sample_pool(6, 1)
        cfg = TrainConfig(width=8, steps=20)
        assert build_bench(pool, data, cfg, 2).to_json() == build_bench(pool, data, cfg, 2).to_json()

    def test_parallel_matches_serial(self):
        data = make_dataset(m_train=8, m_val=8, m_test=8, seed=0)
        pool = sample_pool(6, 1)
        serial = build_bench(pool, data, TrainConfig(width=8, steps=20), 2)
        parallel = build_bench(pool, data, TrainConfig(width=8, steps=20, jobs=2), 2)
        assert serial.to_json() == parallel.to_json()

    def test_skip_only_converges_on_matched_linear_data(self):
        rng = np.random.default_rng(0)
        a = np.abs(rng.standard_normal(8))
        a /= np.linalg.norm(a)
        splits = []
        for name in ("train", "val", "test"):
            X = np.abs(rng.standard_normal((16, 8)))
            X /= np.linalg.norm(X, axis=1, keepdims=True)
            splits.append(Dataset(X, X @ a, name))
        pool = ArchPool((CellArch.uniform("skip"),))
        before = build_bench(pool, tuple(splits), TrainConfig(width=8, steps=0), 0)
        after = build_bench(pool, tuple(splits), TrainConfig(width=8, steps=200), 0)
        arch = pool.ids[0]
        assert after.entries[arch].test < 0.1 * before.entries[arch].test

    def test_empty_pool(self):
        with pytest.raises(ConfigError):
            build_bench(ArchPool(()), make_dataset(seed=0))


class TestBenchFile:
    def test_round_trip(self):
        b = TabularBench({"|skip|skip|skip|skip|skip|skip|x1": BenchEntry(-0.5, 0.4, 10),
                          "|zero|zero|zero|zero|zero|zero|x1": BenchEntry(None, None, 10, "diverged")},
                         "abc", 1, "trained")
        assert TabularBench.from_json(b.to_json()).to_json() == b.to_json()
        assert set(json.loads(b.to_json())) >= {"mode", "seed", "dataset_fingerprint", "entries"}

    def test_rejects_unknown_major(self):
        b = TabularBench({}, "abc", 1, "trained")
        obj = json.loads(b.to_json())
        obj["schema_version"] = "2.0"
        with pytest.raises(ConfigError):
            TabularBench.from_json(json.dumps(obj))

    def test_flagged_entries_raise_in_evaluator(self):
        b = TabularBench({"|zero|zero|zero|zero|zero|zero|x1": BenchEntry(None, None, 10, "diverged")},
                         "abc", 1, "trained")
        with pytest.raises(ValueError):
            b.evaluator()("|zero|zero|zero|zero|zero|zero|x1")


def report(arch_index, trace, kappa, m=8):
    return MetricReport(CellArch.from_index(arch_index).arch_id, None, None, None, trace, kappa, False, m, 0)


@pytest.fixture(scope="module")
def toy_reports():
    rng = np.random.default_rng(11)
    return [report(k, float(rng.uniform(0.2, 2.0)), float(10 ** rng.uniform(0, 3))) for k in range(60)]


def bench_from_errors(reports, errors):
    return TabularBench({r.arch_id: BenchEntry(-e, e, 0) for r, e in zip(reports, errors)}, "x", 0, "synthetic")


class TestSynth:
    def test_noiseless_argmax_is_objective_argmin(self, toy_reports):
        p = ObjectiveParams(2.0, 1.0)
        bench = synth_bench(toy_reports, "trace", p)
        best = max(bench.valid_ids(), key=lambda a: bench.entries[a].val)
        objective = {r.arch_id: hnas_objective(r.trace, r.kappa, p) for r in toy_reports}
        assert best == min(objective, key=objective.get)

    def test_noiseless_spearman_is_one(self, toy_reports):
        p = ObjectiveParams(2.0, 1.0)
        bench = synth_bench(toy_reports, "trace", p)
        obj = [hnas_objective(r.trace, r.kappa, p) for r in toy_reports]
        assert spearman(obj, [bench.entries[r.arch_id].test for r in toy_reports]) == 1.0

    def test_small_noise_keeps_ranking(self, plant_reports):
        p = ObjectiveParams(PLANT_MU, PLANT_NU)
        bench = synth_bench(plant_reports, "trace", p, PLANT_NOISE, PLANT_BENCH_SEED)
        ids = bench.valid_ids()
        by_id = {r.arch_id: r for r in plant_reports}
        obj = np.array([hnas_objective(by_id[a].trace, by_id[a].kappa, p) for a in ids])
        assert obj.max() - obj.min() >= 0.5
        assert spearman(obj, [bench.entries[a].test for a in ids]) >= 0.95

    def test_negative_noise(self, toy_reports):
        with pytest.raises(ConfigError):
            synth_bench(toy_reports, "trace", ObjectiveParams(1.0, 1.0), -1.0)


class TestCorrelate:
    def test_inverse_metric_is_perfect(self, toy_reports):
        bench = bench_from_errors(toy_reports, [1.0 / r.trace for r in toy_reports])
        row = correlate(bench, toy_reports, "realizable").row("trace")
        assert row.spearman == pytest.approx(1.0, abs=1e-12)
        assert row.kendall == pytest.approx(1.0, abs=1e-12)
        assert row.n == len(toy_reports)

    def test_rank_invariance(self, toy_reports):
        err = np.random.default_rng(0).random(len(toy_reports))
        a = correlate(bench_from_errors(toy_reports, err), toy_reports, "realizable").row("trace")
        b = correlate(bench_from_errors(toy_reports, np.exp(3 * err) + 5), toy_reports, "realizable").row("trace")
        assert a.spearman == pytest.approx(b.spearman, abs=1e-12)
        assert a.kendall == pytest.approx(b.kendall, abs=1e-12)

    def test_insufficient_overlap(self, toy_reports):
        bench = bench_from_errors(toy_reports[:2], [1.0, 2.0])
        with pytest.raises(ConfigError):
            correlate(bench, toy_reports, "realizable")

    def test_nonrealizable_needs_params(self, toy_reports):
        bench = bench_from_errors(toy_reports, [1.0 / r.trace for r in toy_reports])
        with pytest.raises(ConfigError):
            correlate(bench, toy_reports, "nonrealizable")

    def test_csv(self, toy_reports):
        bench = bench_from_errors(toy_reports, [1.0 / r.trace for r in toy_reports])
        text = correlate(bench, toy_reports, "realizable").to_csv()
        assert text.splitlines()[0] == "scenario,metric,spearman,kendall,pearson,n"


class TestOptimizeBoundParams:
    def test_condition_ratio_bench(self, toy_reports):
        bench = bench_from_errors(toy_reports, [r.kappa / r.trace for r in toy_reports])
        _, rep = optimize_bound_params(bench, toy_reports, "trace", budget=20, seed=0)
        assert rep.row("trace").spearman >= 0.98

    def test_single_probe(self, toy_reports):
        bench = bench_from_errors(toy_reports, [r.kappa / r.trace for r in toy_reports])
        p1, _ = optimize_bound_params(bench, toy_reports, "trace", budget=1, seed=3)
        p2, _ = optimize_bound_params(bench, toy_reports, "trace", budget=1, seed=3)
        assert isinstance(p1, BoundParams) and p1 == p2 and 1e-8 <= p1.lam <= 1e2

    def test_beats_realizable_on_planted_bench(self, plant_reports):
        bench = synth_bench(plant_reports, "trace", ObjectiveParams(PLANT_MU, PLANT_NU), PLANT_NOISE, PLANT_BENCH_SEED)
        real = correlate(bench, plant_reports, "realizable", metrics=("trace",)).row("trace").spearman
        _, rep = optimize_bound_params(bench, plant_reports, "trace", budget=20, seed=0)
        assert rep.row("trace").spearman >= real

    def test_bad_budget(self, toy_reports):
        bench = bench_from_errors(toy_reports, [1.0] * len(toy_reports))
        with pytest.raises(ConfigError):
            optimize_bound_params(bench, toy_reports, "trace", budget=0)


class TestTransfer:
    @pytest.fixture(scope="class")
    @staticmethod
    def setup():
        pool = sample_pool(30, 3)
        train, _, _ = make_dataset(n0=8, m_train=8, m_val=4, m_test=4, seed=0)
        reports = score_pool(pool, train, SMALL_SCORE)
        bench = synth_bench(reports, "trace", ObjectiveParams(1.0, 1.0), 0.01, 0)
        return pool, train, bench

    def test_identical_datasets(self, setup):
        pool, train, bench = setup
        rep, _ = transfer_experiment(bench, pool, [train, train], "realizable", score_config=SMALL_SCORE)
        for metric in rep.correlations:
            assert rep.std(metric) == 0.0

    def test_near_duplicate_inputs_flag_clamping(self, setup):
        pool, train, bench = setup
        rng = np.random.default_rng(0)
        X = np.tile(train.inputs[:1], (8, 1)) + 1e-9 * rng.standard_normal((8, 8))
        dup = Dataset(X, train.labels, "dup")
        rep, all_reports = transfer_experiment(bench, pool, [train, dup], "realizable",
                                               score_config=SMALL_SCORE)
        assert any(r.clamped for r in all_reports[1])
        assert all(len(v) == 2 for v in rep.correlations.values())

    def test_needs_two(self, setup):
        pool, train, bench = setup
        with pytest.raises(ConfigError):
            transfer_experiment(bench, pool, [train], "realizable")
