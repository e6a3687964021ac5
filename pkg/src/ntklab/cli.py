"""Command-line entry point: ``ntklab <command> [flags]``.

Exit codes: 0 ok, 2 configuration error, 3 numeric failure, 4 evaluator failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import topology
from .bounds import BoundParams, ObjectiveParams
from .errors import ConfigError, EvaluatorError, NtkLabError, NumericFailure, ParseError
from .hnas import baselines, hnas_search
from .metrics import METRIC_NAMES, ScoreConfig, reports_from_jsonl, reports_to_csv, reports_to_jsonl, sample_batch, score_pool
from .netcore import INIT_SCHEMES
from .searchspace import dump_pool, enumerate_space, load_pool, sample_pool
from .seeding import derive_seed

SCHEMA_VERSION = bench_mod.SCHEMA_VERSION
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_EVALUATOR = 0, 2, 3, 4
SEED_ENV = "NTKLAB_SEED"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def atomic_write(path, text: str):
    """Write to a temp file in the target directory, then rename over the target."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{target.name}.", dir=target.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _emit(args, text: str):
    if args.out is None:
        sys.stdout.write(text)
    else:
        atomic_write(args.out, text)


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"{SEED_ENV}={env!r} is not an integer") from None


def _config_echo(args, seed: int) -> dict:
    skip = {"func", "out", "seed"}
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    cfg["seed"] = seed
    return {"schema_version": SCHEMA_VERSION, "config": cfg}


def _read_reports(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read reports: {exc}") from None
    try:
        header, reports = reports_from_jsonl(text)
    except (json.JSONDecodeError, TypeError) as exc:
        raise ConfigError(f"{path}: not a JSONL report file ({exc})") from None
    if header is not None:
        bench_mod.check_schema(header.get("schema_version", SCHEMA_VERSION))
    if not reports:
        raise ConfigError(f"{path}: no reports")
    return reports


def _read_bench(path) -> bench_mod.TabularBench:
    try:
        return bench_mod.TabularBench.from_json(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read bench: {exc}") from None
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigError(f"{path}: malformed bench file ({exc})") from None


def _read_pool(path):
    try:
        return load_pool(path)
    except OSError as exc:
        raise ConfigError(f"cannot read pool: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed pool file ({exc})") from None


def _datasets(args, seed: int, label: str = "dataset"):
    """(train, val, test) from ``--data`` CSV or the seeded teacher."""
    data_seed = derive_seed(seed, label)
    if args.data is not None:
        return bench_mod.make_dataset("file", m_train=args.m_train, m_val=args.m_val, m_test=args.m_test,
                                      seed=data_seed, path=args.data)
    return bench_mod.make_dataset("teacher", n0=args.n0, m_train=args.m_train, m_val=args.m_val,
                                  m_test=args.m_test, seed=data_seed)


def _score_config(args, seed: int, metrics=METRIC_NAMES) -> ScoreConfig:
    return ScoreConfig(width=args.width, scheme=args.scheme, seed=seed, metrics=tuple(metrics), jobs=args.jobs)


def _metric_batch(args, seed: int, label: str = "dataset"):
    train, _, _ = _datasets(args, seed, label)
    return sample_batch(train, args.batch, seed)


# ---------------------------------------------------------------------------
# Commands


def cmd_pool(args) -> int:
    seed = _resolve_seed(args)
    pool = enumerate_space(args.size) if args.enumerate else sample_pool(args.size, seed)
    _emit(args, dump_pool(pool))
    return EXIT_OK


def cmd_score(args) -> int:
    seed = _resolve_seed(args)
    pool = _read_pool(args.pool)
    metrics = (args.metric_only,) if args.metric_only else METRIC_NAMES
    reports = score_pool(pool, _metric_batch(args, seed), _score_config(args, seed, metrics))
    header = _config_echo(args, seed)
    text = reports_to_csv(reports, header) if args.format == "csv" else reports_to_jsonl(reports, header)
    _emit(args, text)
    if all(not r.ok for r in reports):
        print("every architecture failed numerically", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def _reports_for_search(args, seed: int, pool):
    if args.reports is not None:
        return _read_reports(args.reports)
    return score_pool(pool, _metric_batch(args, seed), _score_config(args, seed, (args.metric,)))


def cmd_search(args) -> int:
    seed = _resolve_seed(args)
    if (args.bench is None) == (not args.live):
        raise ConfigError("choose exactly one of --bench FILE or --live")
    pool = _read_pool(args.pool)
    reports = _reports_for_search(args, seed, pool)
    counter: dict = {}
    if args.live:
        cfg = bench_mod.TrainConfig(args.width, args.steps, args.scheme, args.lr_cap)
        evaluator = bench_mod.live_evaluator(_datasets(args, seed), cfg, seed, counter)
    else:
        evaluator = _read_bench(args.bench).evaluator(counter)
    trace = hnas_search(reports, args.metric, evaluator, args.budget, seed)
    extra = _config_echo(args, seed)
    extra["train_calls"] = counter.get("train_calls", 0)
    if args.baselines:
        extra["baselines"] = {k: v.to_dict() for k, v in baselines(reports, args.metric, evaluator,
                                                                   args.budget, seed).items()}
    _emit(args, trace.to_json(**extra))
    print(f"best {trace.best_arch} {trace.best_val!r}")
    return EXIT_OK


def _bound_params(args, seed: int, bench, reports, metrics) -> dict[str, BoundParams] | None:
    if args.scenario == "realizable":
        return None
    m = next(r.m for r in reports if r.ok)
    if args.lam is not None:
        return {metric: BoundParams.from_lambda(args.lam, m) for metric in metrics}
    return {mt: bench_mod.optimize_bound_params(bench, reports, mt, args.budget, derive_seed(seed, mt))[0]
            for mt in metrics}


def _present_metrics(reports):
    return tuple(mt for mt in METRIC_NAMES if any(r.value(mt) is not None for r in reports))


def _correlation_text(args, header: dict, report) -> str:
    if args.format == "csv":
        return "# " + json.dumps(header, sort_keys=True) + "\n" + report.to_csv()
    rows = [{"metric": r.metric, "spearman": r.spearman, "kendall": r.kendall, "pearson": r.pearson, "n": r.n}
            for r in report.rows]
    return json.dumps({**header, "scenario": report.scenario, "params": report.params, "rows": rows},
                      sort_keys=True, indent=1) + "\n"


def cmd_correlate(args) -> int:
    seed = _resolve_seed(args)
    bench = _read_bench(args.bench)
    reports = _read_reports(args.reports)
    metrics = _present_metrics(reports)
    params = _bound_params(args, seed, bench, reports, metrics)
    report = bench_mod.correlate(bench, reports, args.scenario, params, metrics)
    header = _config_echo(args, seed)
    _emit(args, _correlation_text(args, header, report))
    for r in report.rows:
        print(f"{report.scenario} {r.metric} spearman={r.spearman:.4f}")
    return EXIT_OK


def cmd_transfer(args) -> int:
    seed = _resolve_seed(args)
    if args.datasets < 2:
        raise ConfigError("--datasets must be >= 2")
    bench = _read_bench(args.bench)
    pool = _read_pool(args.pool)
    metric_sets = []
    for k in range(args.datasets):
        batch = _metric_batch(args, seed, f"transfer:{k}")
        metric_sets.append(batch.subset(np.arange(batch.m), name=f"metric-set-{k}"))
    params = None
    if args.scenario == "nonrealizable":
        if args.lam is None:
            raise ConfigError("non-realizable transfer needs --lam")
        params = BoundParams.from_lambda(args.lam, args.batch)
    report, _ = bench_mod.transfer_experiment(bench, pool, metric_sets, args.scenario, params,
                                              _score_config(args, seed))
    header = _config_echo(args, seed)
    if args.format == "csv":
        text = "# " + json.dumps(header, sort_keys=True) + "\n" + report.to_csv()
    else:
        body = {mt: {"mean": report.mean(mt), "std": report.std(mt), "spearman": v}
                for mt, v in report.correlations.items()}
        text = json.dumps({**header, "scenario": report.scenario, "datasets": report.datasets, "metrics": body},
                          sort_keys=True, indent=1) + "\n"
    _emit(args, text)
    for mt in report.correlations:
        print(f"{mt} mean={report.mean(mt):.4f} std={report.std(mt):.4f}")
    return EXIT_OK


def cmd_verify_topology(args) -> int:
    seed = _resolve_seed(args)
    base = topology.TopologySpec(args.n, args.L, args.m, seed)
    X = topology.standard_inputs(base)
    worst, ok = 0.0, True
    for k in range(args.seeds):
        spec = topology.TopologySpec(args.n, args.L, args.m, topology.trial_seed(base, k))
        passed, err = topology.verify_wide(spec, X, args.rtol)
        ok, worst = ok and passed, max(worst, err)
    rows = topology.topology_report([base], args.trials) if args.trials > 0 else []
    header = _config_echo(args, seed)
    header.update({"wide_identity": ok, "max_rel_error": worst})
    if args.format == "csv":
        text = "# " + json.dumps(header, sort_keys=True) + "\n" + topology.report_csv(rows)
    else:
        text = json.dumps({**header, "rows": [vars(r) for r in rows]}, sort_keys=True, indent=1) + "\n"
    _emit(args, text)
    print(f"wide identity {'holds' if ok else 'FAILS'} (max relative error {worst:.3e})")
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_bench_build(args) -> int:
    seed = _resolve_seed(args)
    pool = _read_pool(args.pool)
    cfg = bench_mod.TrainConfig(args.width, args.steps, args.scheme, args.lr_cap, args.jobs)
    bench = bench_mod.build_bench(pool, _datasets(args, seed), cfg, seed)
    _emit(args, bench.to_json())
    return EXIT_OK


def cmd_bench_synth(args) -> int:
    seed = _resolve_seed(args)
    reports = _read_reports(args.reports)
    bench = bench_mod.synth_bench(reports, args.metric, ObjectiveParams(args.mu, args.nu), args.noise, seed)
    _emit(args, bench.to_json())
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser


def _common(p, fmt: bool = True):
    p.add_argument("--seed", type=int, default=None, help=f"global seed (default: ${SEED_ENV} or 0)")
    p.add_argument("--out", default=None, help="output file (default: stdout)")
    if fmt:
        p.add_argument("--format", choices=("json", "csv"), default="json", help="output format (default: json)")


def _data_flags(p, m_train: int = 32):
    p.add_argument("--data", default=None, help="CSV dataset with header x0..x{n0-1},y (default: teacher data)")
    p.add_argument("--synth", action="store_true", help="use the seeded teacher dataset (the default)")
    p.add_argument("--n0", type=int, default=8, help="teacher input dimension (default: 8)")
    p.add_argument("--m-train", type=int, default=m_train, help=f"training split size (default: {m_train})")
    p.add_argument("--m-val", type=int, default=32, help="validation split size (default: 32)")
    p.add_argument("--m-test", type=int, default=32, help="test split size (default: 32)")


def _model_flags(p, width: int = 32):
    p.add_argument("--width", type=int, default=width, help=f"hidden width (default: {width})")
    p.add_argument("--scheme", choices=INIT_SCHEMES, default="lecun", help="initialization (default: lecun)")
    p.add_argument("--jobs", type=int, default=1, help="concurrent architecture evaluations (default: 1)")


def _train_flags(p):
    p.add_argument("--steps", type=int, default=200, help="gradient-descent steps (default: 200)")
    p.add_argument("--lr-cap", type=float, default=0.1, help="learning-rate cap (default: 0.1)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ntklab", description="Training-free NAS with NTK metrics and HNAS search.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("pool", help="write an architecture pool file")
    p.add_argument("--size", type=int, default=100, help="number of architectures (default: 100)")
    p.add_argument("--enumerate", action="store_true", help="take the first SIZE architectures in index order")
    _common(p, fmt=False)
    p.set_defaults(func=cmd_pool)

    p = sub.add_parser("score", help="compute training-free metrics for a pool")
    p.add_argument("--pool", required=True, help="pool file (JSON array of encodings)")
    p.add_argument("--batch", type=int, default=32, help="metric batch size m (default: 32)")
    p.add_argument("--metric-only", choices=METRIC_NAMES, default=None, help="compute a single metric")
    _data_flags(p)
    _model_flags(p)
    _common(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("search", help="run HNAS over a pool")
    p.add_argument("--pool", required=True, help="pool file")
    p.add_argument("--bench", default=None, help="tabular bench file (tabular mode)")
    p.add_argument("--live", action="store_true", help="train architectures on demand")
    p.add_argument("--reports", default=None, help="precomputed metric reports (JSONL); scored on the fly if absent")
    p.add_argument("--metric", choices=METRIC_NAMES, default="trace", help="metric (default: trace)")
    p.add_argument("--budget", type=int, default=20, help="search budget, i.e. number of evaluations (default: 20)")
    p.add_argument("--batch", type=int, default=32, help="metric batch size m (default: 32)")
    p.add_argument("--baselines", action="store_true", help="also run random search and training-free argmax")
    _data_flags(p)
    _model_flags(p)
    _train_flags(p)
    _common(p, fmt=False)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("correlate", help="correlate bound scores with bench test error")
    p.add_argument("--bench", required=True, help="bench file")
    p.add_argument("--reports", required=True, help="metric reports (JSONL)")
    p.add_argument("--scenario", choices=("realizable", "nonrealizable"), default="realizable",
                   help="bound scenario (default: realizable)")
    p.add_argument("--lam", type=float, default=None,
                   help="fixed eta/(m c) for the non-realizable score (default: optimize by BO)")
    p.add_argument("--budget", type=int, default=20, help="BO budget when optimizing (default: 20)")
    _common(p)
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("transfer", help="correlation deviation across metric datasets")
    p.add_argument("--bench", required=True, help="bench file")
    p.add_argument("--pool", required=True, help="pool file")
    p.add_argument("--datasets", type=int, default=2, help="number of metric datasets (default: 2)")
    p.add_argument("--batch", type=int, default=32, help="metric batch size m (default: 32)")
    p.add_argument("--scenario", choices=("realizable", "nonrealizable"), default="realizable",
                   help="bound scenario (default: realizable)")
    p.add_argument("--lam", type=float, default=None, help="eta/(m c) for the non-realizable score")
    _data_flags(p)
    _model_flags(p)
    _common(p)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("verify-topology", help="check the wide/deep NTK identities")
    p.add_argument("--n", type=int, default=8, help="width (default: 8)")
    p.add_argument("--L", type=int, default=3, help="layers (default: 3)")
    p.add_argument("--m", type=int, default=4, help="samples (default: 4)")
    p.add_argument("--seeds", type=int, default=50, help="seeds for the wide identity (default: 50)")
    p.add_argument("--trials", type=int, default=0, help="Monte Carlo trials for the report table (default: 0)")
    p.add_argument("--rtol", type=float, default=1e-9, help="relative tolerance (default: 1e-9)")
    _common(p)
    p.set_defaults(func=cmd_verify_topology)

    p = sub.add_parser("bench", help="build tabular benchmarks")
    bsub = p.add_subparsers(dest="bench_command", required=True, parser_class=_Parser)
    b = bsub.add_parser("build", help="train every pool architecture")
    b.add_argument("--pool", required=True, help="pool file")
    _data_flags(b)
    _model_flags(b)
    _train_flags(b)
    _common(b, fmt=False)
    b.set_defaults(func=cmd_bench_build)
    b = bsub.add_parser("synth", help="planted-optimum bench from metric reports")
    b.add_argument("--reports", required=True, help="metric reports (JSONL)")
    b.add_argument("--metric", choices=METRIC_NAMES, default="trace", help="metric (default: trace)")
    b.add_argument("--mu", type=float, required=True, help="hidden mu")
    b.add_argument("--nu", type=float, required=True, help="hidden nu")
    b.add_argument("--noise", type=float, default=0.0, help="noise std (default: 0)")
    _common(b, fmt=False)
    b.set_defaults(func=cmd_bench_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "data", None) is not None and getattr(args, "synth", False):
        parser.error("--data and --synth are mutually exclusive")
    try:
        return args.func(args)
    except EvaluatorError as exc:
        print(f"evaluator error: {exc}", file=sys.stderr)
        return EXIT_EVALUATOR
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ParseError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NtkLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
