"""Command-line driver: ``sparse-oracle <command> ...``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import bench
from .errors import SparseOracleError
from .features import DEFAULT_TRUE_DIAG_RATIO
from .formats import ConversionConfig, from_coo
from .ingest import CorpusFilter, build_training_csv, fetch_corpus, read_features_csv, read_matrix_market, \
    read_profile_csv
from .model import load_model
from .trainer import HyperParams
from .tuners import MODEL_ENV_VAR, TunerConfig, tune_ml

log = logging.getLogger("sparse_oracle")

DEFAULT_REPS = 1000


def _globals(suppress: bool) -> argparse.ArgumentParser:
    # global flags are accepted before or after the subcommand; the copy on
    # each subcommand suppresses its defaults so it cannot clobber the first
    def d(value):
        return argparse.SUPPRESS if suppress else value

    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--threads", type=int, default=d(1), help="SpMV threads (default 1, serial)")
    g.add_argument("--reps", type=int, default=d(DEFAULT_REPS), help="SpMV repetitions per timing (default 1000)")
    g.add_argument("--seed", type=int, default=d(0), help="seed for the train/test split and training")
    g.add_argument("--true-diag-ratio", type=float, default=d(DEFAULT_TRUE_DIAG_RATIO))
    g.add_argument("--max-padding-factor", type=float, default=d(10.0))
    g.add_argument("--failures", type=Path, default=d(None),
                   help="where to write the failure manifest (default: next to the output)")
    g.add_argument("-v", "--verbose", action="store_true", default=d(False))
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _globals(True)
    parser = argparse.ArgumentParser(prog="sparse-oracle", parents=[_globals(False)],
                                     description="Sparse matrix format selection for SpMV.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fetch", parents=[common], help="download a corpus listed in a manifest CSV")
    p.add_argument("manifest", type=Path)
    p.add_argument("dest", type=Path)
    p.add_argument("--min-rows", type=int)
    p.add_argument("--max-rows", type=int)
    p.add_argument("--min-nnz", type=int)
    p.add_argument("--max-nnz", type=int)
    p.add_argument("--square-only", action="store_true")
    p.add_argument("--parallel-corpus", type=int, default=4, metavar="N", help="concurrent downloads")
    p.add_argument("--retries", type=int, default=3)

    p = sub.add_parser("profile", parents=[common], help="time SpMV in every format")
    p.add_argument("corpus", type=Path)
    p.add_argument("-o", "--out", type=Path, default=Path("profile.csv"))
    p.add_argument("--gnuplot", action="store_true", help="also write a .dat distribution file")

    p = sub.add_parser("features", parents=[common], help="extract feature vectors")
    p.add_argument("corpus", type=Path)
    p.add_argument("-o", "--out", type=Path, default=Path("features.csv"))
    p.add_argument("--parallel-corpus", type=int, default=1, metavar="N",
                   help="process N matrices concurrently")

    p = sub.add_parser("label", parents=[common], help="join features and profiles into a training CSV")
    p.add_argument("features", type=Path)
    p.add_argument("profile", type=Path)
    p.add_argument("-o", "--out", type=Path, default=Path("training.csv"))

    p = sub.add_parser("train", parents=[common], help="grid search, hold-out test, save model")
    p.add_argument("training", type=Path)
    p.add_argument("--grid", type=Path, required=True)
    p.add_argument("-o", "--out", type=Path, default=Path("model.txt"))
    p.add_argument("--folds", type=int, default=5)

    p = sub.add_parser("predict", parents=[common], help="predict the format of one matrix")
    p.add_argument("matrix", type=Path)
    p.add_argument("--model", default=None, help=f"model file (default ${MODEL_ENV_VAR})")

    p = sub.add_parser("bench", parents=[common], help="benchmark the tuner against CSR")
    p.add_argument("corpus", type=Path)
    p.add_argument("--model", default=None, help=f"model file (default ${MODEL_ENV_VAR})")
    p.add_argument("-o", "--out", type=Path, default=Path("bench.csv"))
    return parser


def _conversion(args) -> ConversionConfig:
    return ConversionConfig(true_diag_ratio=args.true_diag_ratio, max_padding_factor=args.max_padding_factor)


def _model_path(args) -> str:
    path = args.model or os.environ.get(MODEL_ENV_VAR)
    if not path:
        raise SystemExit(f"error: pass --model or set ${MODEL_ENV_VAR}")
    return path


def _finish(failures, args, default_path: Path) -> int:
    if not failures:
        return 0
    path = args.failures or default_path
    bench.write_failures(failures, path)
    print(f"{len(failures)} failure(s); manifest written to {path}", file=sys.stderr)
    return 1


def _sibling(path: Path, suffix: str) -> Path:
    return path.with_name(path.stem + suffix)


def run(args) -> int:
    cmd = args.command
    if cmd == "fetch":
        filters = CorpusFilter(args.min_rows, args.max_rows, args.min_nnz, args.max_nnz, args.square_only)
        report = fetch_corpus(args.manifest, args.dest, filters, workers=args.parallel_corpus,
                              retries=args.retries)
        print(f"downloaded {report.downloaded}, already present {report.skipped}, failed {len(report.failed)}")
        failures = [bench.Failure(e.matrix_id, "fetch", msg) for e, msg in report.failed]
        return _finish(failures, args, args.dest / "failures.csv")

    if cmd == "profile":
        records, failures = bench.cmd_profile(args.corpus, args.reps, args.threads, args.out,
                                              _conversion(args), args.gnuplot)
        print(f"{len(records)} profile records written to {args.out}")
        return _finish(failures, args, _sibling(args.out, "_failures.csv"))

    if cmd == "features":
        rows, failures = bench.cmd_features(args.corpus, args.true_diag_ratio, args.out, args.parallel_corpus)
        print(f"{len(rows)} feature rows written to {args.out}")
        return _finish(failures, args, _sibling(args.out, "_failures.csv"))

    if cmd == "label":
        n = build_training_csv(read_features_csv(args.features), read_profile_csv(args.profile), args.out)
        print(f"{n} training rows written to {args.out}")
        return 0

    if cmd == "train":
        bench.cmd_train(args.training, args.grid, args.seed, args.out, args.folds,
                        HyperParams(seed=args.seed), bench.backend_label(args.threads))
        print(f"model written to {args.out}")
        return 0

    if cmd == "predict":
        model = load_model(_model_path(args))
        m = from_coo(read_matrix_market(args.matrix))
        cfg = TunerConfig(nthreads=args.threads, true_diag_ratio=args.true_diag_ratio,
                          conversion=_conversion(args))
        outcome = tune_ml(m, cfg, model)
        note = f" (predicted {outcome.predicted.name}, infeasible)" if outcome.fallback else ""
        print(f"{outcome.chosen.name} {int(outcome.chosen)}{note}")
        return 0

    if cmd == "bench":
        report, failures = bench.cmd_bench(args.corpus, _model_path(args), args.reps, args.out, args.threads,
                                           args.true_diag_ratio, _conversion(args))
        stats = report.tuning_cost_stats
        print(f"{len(report.rows)} matrices: mean speedup {report.mean_speedup:.4g}, "
              f"mean optimal speedup {report.mean_optimal_speedup:.4g}, "
              f"selection accuracy {report.selection_accuracy:.4g}")
        print("tuning cost (CSR SpMVs): " + ", ".join(f"{k} {stats[k]:.4g}" for k in bench.STAT_NAMES))
        return _finish(failures, args, _sibling(args.out, "_failures.csv"))
    raise AssertionError(cmd)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.reps < 1 or args.threads < 1:
        print("error: --reps and --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        return run(args)
    except SparseOracleError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
