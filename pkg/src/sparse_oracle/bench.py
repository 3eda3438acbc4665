"""
Pipeline commands behind the CLI: profile, features, train, bench.

Each ``cmd_*`` function works on a corpus directory of Matrix Market files,
writes its CSV outputs and returns its results together with the list of
per-matrix failures (a failure never stops the run).

Benchmark arithmetic, with every ``T`` a total over ``reps`` multiplies
except the tuner's own ``T_FE`` (feature extraction) and ``T_PRED``
(prediction)::

    speedup            = T_CSR / (T_FE + T_PRED + T_OPT)
    tuning_cost        = (T_FE + T_PRED) / (T_CSR / reps)     # in CSR SpMVs
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import InvalidInput, PaddingOverflow, TooFewSamples
from .features import DEFAULT_TRUE_DIAG_RATIO, FeatureVector, extract_features
from .formats import ConversionConfig, CooMatrix, FormatId, convert_coo, from_coo
from .ingest import (ProfileRecord, group_profiles, optimal_format, read_matrix_market, scan_corpus,
                     write_features_csv, write_profile_csv)
from .model import Model, load_model, save_model
from .spmv import time_spmv
from .trainer import (EvalReport, GridSearchResult, HyperParams, evaluate, grid_search, load_grid,
                      read_training_csv, train_test_split, write_grid_scores)
from .tuners import TunerConfig, tune_ml

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Failure:
    matrix_id: str
    stage: str
    error: str


def write_failures(failures, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["matrix_id", "stage", "error"])
        for f in failures:
            w.writerow([f.matrix_id, f.stage, f.error])


def backend_label(nthreads: int) -> str:
    return "serial" if nthreads == 1 else f"parallel-{nthreads}"


def probe_vector(ncols: int, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).uniform(-1.0, 1.0, ncols)


def _load_corpus(corpus_dir):
    for mid, path in scan_corpus(corpus_dir).items():
        yield mid, path


def _sibling(path, suffix) -> Path:
    path = Path(path)
    return path.with_name(path.stem + suffix)


# profiling ----------------------------------------------------------------

def profile_matrix(matrix_id: str, coo: CooMatrix, reps: int, nthreads: int = 1,
                   config: ConversionConfig | None = None, x=None) -> list[ProfileRecord]:
    """Time ``reps`` SpMVs in every format; infeasible formats get a record with ``feasible=False``."""
    x = probe_vector(coo.ncols) if x is None else x
    label = backend_label(nthreads)
    out = []
    for fmt in FormatId:
        try:
            payload = convert_coo(coo, fmt, config)
        except PaddingOverflow:
            out.append(ProfileRecord(matrix_id, fmt, reps, float("nan"), False, label))
            continue
        sample = time_spmv(payload, x, reps, nthreads, record_distribution=False)
        out.append(ProfileRecord(matrix_id, fmt, reps, sample.total_seconds, True, label))
    return out


def format_distribution(records) -> dict[FormatId, int]:
    """Number of matrices each format wins."""
    counts = {fmt: 0 for fmt in FormatId}
    for recs in group_profiles(records).values():
        best = optimal_format(recs)
        if best is not None:
            counts[best] += 1
    return counts


def write_distribution(counts: Mapping[FormatId, int], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["format_id", "format", "count"])
        for fmt, n in counts.items():
            w.writerow([int(fmt), fmt.name, n])


def write_distribution_dat(counts: Mapping[FormatId, int], path) -> None:
    """Whitespace-separated copy of the distribution for gnuplot."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# format_id format count\n")
        for fmt, n in counts.items():
            fh.write(f"{int(fmt)} {fmt.name} {n}\n")


def cmd_profile(corpus_dir, reps: int = 1000, nthreads: int = 1, out_csv="profile.csv",
                config: ConversionConfig | None = None, gnuplot: bool = False):
    """Profile every matrix; writes ``out_csv`` and ``<out>_distribution.csv`` (and ``.dat``)."""
    records, failures = [], []
    for mid, path in _load_corpus(corpus_dir):
        try:
            records.extend(profile_matrix(mid, read_matrix_market(path), reps, nthreads, config))
        except Exception as exc:
            log.error("%s: profiling failed: %s", mid, exc)
            failures.append(Failure(mid, "profile", f"{type(exc).__name__}: {exc}"))
    write_profile_csv(records, out_csv)
    counts = format_distribution(records)
    write_distribution(counts, _sibling(out_csv, "_distribution.csv"))
    if gnuplot:
        write_distribution_dat(counts, _sibling(out_csv, "_distribution.dat"))
    return records, failures


# features -----------------------------------------------------------------

def cmd_features(corpus_dir, ratio: float = DEFAULT_TRUE_DIAG_RATIO, out_csv="features.csv",
                 workers: int = 1) -> tuple[dict[str, FeatureVector], list[Failure]]:
    """Extract features per matrix; with ``workers > 1`` matrices are processed concurrently."""

    def one(item):
        mid, path = item
        try:
            return mid, extract_features(from_coo(read_matrix_market(path)), ratio), None
        except Exception as exc:
            log.error("%s: feature extraction failed: %s", mid, exc)
            return mid, None, Failure(mid, "features", f"{type(exc).__name__}: {exc}")

    items = list(_load_corpus(corpus_dir))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, items))
    else:
        results = [one(item) for item in items]
    rows = {mid: f for mid, f, _ in results if f is not None}
    failures = [fail for _, _, fail in results if fail is not None]
    write_features_csv(rows, out_csv)
    return rows, failures


# training -----------------------------------------------------------------

def cmd_train(training_csv, grid, split_seed: int = 0, model_out="model.txt", k: int = 5,
              base: HyperParams | None = None, label: str = "serial", echo=print) -> tuple[EvalReport, GridSearchResult]:
    """Seeded 80/20 split, grid search with k-fold CV on the 80%, test on the 20%.

    ``grid`` is a grid file path or a mapping. Writes the tuned model and
    ``<model>_cv.csv`` with every lattice point's CV scores. Returns
    ``(test report, grid search result)``.
    """
    data = read_training_csv(training_csv)
    if isinstance(grid, (str, Path)):
        grid = load_grid(grid)
    base = base or HyperParams(seed=split_seed)
    train, test = train_test_split(data, 0.2, split_seed)
    k_eff = min(k, len(train))
    if k_eff < 2:
        raise TooFewSamples(f"only {len(train)} training rows; cannot cross-validate")
    if k_eff < k:
        log.warning("only %d training rows: using %d folds instead of %d", len(train), k_eff, k)
    meta = {"backend": label, "split_seed": str(split_seed), "source": Path(training_csv).name,
            "folds": str(k_eff)}
    result = grid_search(train, grid, k_eff, base, meta)
    report = evaluate(result.model, test)
    save_model(result.model, model_out)
    write_grid_scores(result.points, _sibling(model_out, "_cv.csv"))
    p = result.params
    echo(f"backend={label} estimators={p.n_estimators} bootstrap={'T' if p.bootstrap else 'F'} "
         f"max_depth={p.max_depth} min_samples_leaf={p.min_samples_leaf} "
         f"min_samples_split={p.min_samples_split} max_features={p.max_features} criterion={p.criterion}")
    echo(f"cv:   accuracy {100 * result.report.accuracy:.2f}%  "
         f"balanced accuracy {100 * result.report.balanced_accuracy:.2f}%")
    echo(f"test: {report.summary()}  (train {len(train)}, test {len(test)})")
    return report, result


# benchmark ----------------------------------------------------------------

@dataclass(frozen=True)
class BenchRow:
    matrix_id: str
    chosen: FormatId
    optimal: FormatId
    repetitions: int
    t_csr: float
    t_fe: float
    t_pred: float
    t_opt: float
    t_best: float

    @property
    def speedup(self) -> float:
        return self.t_csr / (self.t_fe + self.t_pred + self.t_opt)

    @property
    def tuning_cost_in_csr_spmv(self) -> float:
        return (self.t_fe + self.t_pred) / (self.t_csr / self.repetitions)

    @property
    def optimal_speedup(self) -> float:
        return self.t_csr / self.t_best


STAT_NAMES = ("mean", "std", "min", "q1", "q2", "q3", "max")


def describe(values) -> dict[str, float]:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return {k: float("nan") for k in STAT_NAMES}
    q1, q2, q3 = np.percentile(v, [25, 50, 75])
    return {"mean": float(v.mean()), "std": float(v.std()), "min": float(v.min()),
            "q1": float(q1), "q2": float(q2), "q3": float(q3), "max": float(v.max())}


@dataclass
class BenchReport:
    rows: list[BenchRow] = field(default_factory=list)

    @property
    def mean_speedup(self) -> float:
        return float(np.mean([r.speedup for r in self.rows])) if self.rows else float("nan")

    @property
    def mean_optimal_speedup(self) -> float:
        return float(np.mean([r.optimal_speedup for r in self.rows])) if self.rows else float("nan")

    @property
    def tuning_cost_stats(self) -> dict[str, float]:
        return describe([r.tuning_cost_in_csr_spmv for r in self.rows])

    @property
    def selection_accuracy(self) -> float:
        if not self.rows:
            return float("nan")
        return float(np.mean([r.chosen == r.optimal for r in self.rows]))


BENCH_HEADER = ("matrix_id", "chosen", "optimal", "repetitions", "t_csr", "t_fe", "t_pred", "t_opt",
                "t_best", "speedup", "tuning_cost_in_csr_spmv", "optimal_speedup")


def write_bench(report: BenchReport, out_csv) -> None:
    with open(out_csv, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BENCH_HEADER)
        for r in report.rows:
            w.writerow([r.matrix_id, int(r.chosen), int(r.optimal), r.repetitions,
                        *(repr(float(t)) for t in (r.t_csr, r.t_fe, r.t_pred, r.t_opt, r.t_best)),
                        repr(r.speedup), repr(r.tuning_cost_in_csr_spmv), repr(r.optimal_speedup)])
    stats = report.tuning_cost_stats
    with open(_sibling(out_csv, "_summary.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["matrices", "mean_speedup", "mean_optimal_speedup", "selection_accuracy",
                    *(f"tuning_cost_{k}" for k in STAT_NAMES)])
        w.writerow([len(report.rows), repr(report.mean_speedup), repr(report.mean_optimal_speedup),
                    repr(report.selection_accuracy), *(repr(stats[k]) for k in STAT_NAMES)])


def read_bench(out_csv) -> list[dict]:
    with open(out_csv, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def bench_matrix(matrix_id: str, coo: CooMatrix, model: Model, reps: int, cfg: TunerConfig) -> BenchRow:
    x = probe_vector(coo.ncols)
    conv = cfg.conversion_config
    timings = {}
    for fmt in FormatId:
        try:
            payload = convert_coo(coo, fmt, conv)
        except PaddingOverflow:
            continue
        timings[fmt] = time_spmv(payload, x, reps, cfg.nthreads, record_distribution=False).total_seconds
    best = min(timings, key=lambda f: (timings[f], int(f)))
    m = from_coo(coo, FormatId.CSR, conv)
    outcome = tune_ml(m, cfg, model)
    m.switch(outcome.chosen, conv)
    t_opt = time_spmv(m, x, reps, cfg.nthreads, record_distribution=False).total_seconds
    return BenchRow(matrix_id, outcome.chosen, best, reps, timings[FormatId.CSR],
                    outcome.feature_time_seconds, outcome.predict_time_seconds, t_opt, timings[best])


def cmd_bench(corpus_dir, model_path, reps: int = 1000, out_csv="bench.csv", nthreads: int = 1,
              true_diag_ratio: float = DEFAULT_TRUE_DIAG_RATIO, config: ConversionConfig | None = None):
    """Benchmark the ML tuner against plain CSR; writes ``out_csv`` and ``<out>_summary.csv``."""
    if reps < 1:
        raise InvalidInput("reps must be >= 1")
    model = load_model(model_path) if not hasattr(model_path, "predict_many") else model_path
    cfg = TunerConfig(repetitions=reps, nthreads=nthreads, true_diag_ratio=true_diag_ratio,
                      conversion=config)
    report, failures = BenchReport(), []
    for mid, path in _load_corpus(corpus_dir):
        try:
            report.rows.append(bench_matrix(mid, read_matrix_market(path), model, reps, cfg))
        except Exception as exc:
            log.error("%s: benchmark failed: %s", mid, exc)
            failures.append(Failure(mid, "bench", f"{type(exc).__name__}: {exc}"))
    write_bench(report, out_csv)
    return report, failures


__all__ = ["Failure", "write_failures", "profile_matrix", "format_distribution", "cmd_profile",
           "cmd_features", "cmd_train", "BenchRow", "BenchReport", "describe", "write_bench",
           "read_bench", "bench_matrix", "cmd_bench"]
