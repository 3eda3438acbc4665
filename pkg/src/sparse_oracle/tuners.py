"""
Online format selection: run-first, decision tree and random forest tuners.

The run-first tuner times SpMV in every feasible format and keeps the
fastest. The ML tuners extract features from the active format and ask a
model; they never run SpMV. :func:`tune_multiply` runs a tuner, switches
the matrix to the chosen format and multiplies once.
"""

from __future__ import annotations

import dataclasses
import enum
import os
import time
from dataclasses import dataclass

from .errors import AllFormatsInfeasible, InvalidInput, PaddingOverflow
from .features import DEFAULT_TRUE_DIAG_RATIO, extract_features
from .formats import ConversionConfig, DynamicMatrix, FormatId, convert_coo, padded_size
from .model import DecisionTreeModel, ForestModel, Model, load_model, predict
from .spmv import TimingSample, spmv, spmv_parallel, time_spmv

MODEL_ENV_VAR = "SPARSE_ORACLE_MODEL"


class TunerSource(str, enum.Enum):
    RUN_FIRST = "run_first"
    DECISION_TREE = "decision_tree"
    RANDOM_FOREST = "random_forest"


@dataclass(frozen=True)
class TunerConfig:
    """Settings shared by all tuners.

    ``statistic`` picks the run-first winner: ``"min_total"`` (lowest total
    time over the repetitions) or ``"median"`` (lowest per-repetition
    median).
    """

    repetitions: int = 10
    nthreads: int = 1
    true_diag_ratio: float = DEFAULT_TRUE_DIAG_RATIO
    model_path: str | None = None
    conversion: ConversionConfig | None = None
    statistic: str = "min_total"

    def __post_init__(self):
        if self.repetitions < 1:
            raise InvalidInput("repetitions must be >= 1")
        if self.nthreads < 1:
            raise InvalidInput("nthreads must be >= 1")
        if self.statistic not in ("min_total", "median"):
            raise InvalidInput(f"unknown statistic {self.statistic!r}")

    @property
    def conversion_config(self) -> ConversionConfig:
        return self.conversion or ConversionConfig(true_diag_ratio=self.true_diag_ratio)

    def resolved_model_path(self) -> str:
        path = self.model_path or os.environ.get(MODEL_ENV_VAR)
        if not path:
            raise InvalidInput(f"no model path given and ${MODEL_ENV_VAR} is unset")
        return path


@dataclass(frozen=True)
class FormatTiming:
    format: FormatId
    feasible: bool
    sample: TimingSample | None = None
    reason: str = ""


@dataclass(frozen=True)
class TuneOutcome:
    chosen: FormatId
    source: TunerSource
    feature_time_seconds: float = 0.0
    predict_time_seconds: float = 0.0
    per_format_timings: tuple[FormatTiming, ...] | None = None
    switched: bool = False
    predicted: FormatId | None = None
    fallback: bool = False
    # run-first only: wall time spent converting to and timing every candidate
    search_seconds: float = 0.0

    @property
    def tuning_seconds(self) -> float:
        return self.feature_time_seconds + self.predict_time_seconds + self.search_seconds


def _statistic(sample: TimingSample, statistic: str) -> float:
    return sample.total_seconds if statistic == "min_total" else sample.median_seconds


def select_fastest(timings, statistic: str = "min_total") -> FormatId:
    """Feasible format with the lowest statistic; ties go to the lowest ID."""
    feasible = [t for t in timings if t.feasible]
    if not feasible:
        raise AllFormatsInfeasible("no format could be built for this matrix")
    return min(feasible, key=lambda t: (_statistic(t.sample, statistic), int(t.format))).format


def tune_run_first(m: DynamicMatrix, x, cfg: TunerConfig | None = None) -> TuneOutcome:
    cfg = cfg or TunerConfig()
    conv = cfg.conversion_config
    original = m.active
    t0 = time.perf_counter()
    coo = m.to_coo()
    timings = []
    for fmt in FormatId:
        try:
            payload = m.payload if fmt == original else convert_coo(coo, fmt, conv)
        except PaddingOverflow as exc:
            timings.append(FormatTiming(fmt, False, None, str(exc)))
            continue
        timings.append(FormatTiming(fmt, True, time_spmv(payload, x, cfg.repetitions, cfg.nthreads)))
    chosen = select_fastest(timings, cfg.statistic)
    m.switch(chosen, conv)
    return TuneOutcome(chosen, TunerSource.RUN_FIRST, per_format_timings=tuple(timings),
                       switched=chosen != original, search_seconds=time.perf_counter() - t0)


def _source_of(model: Model) -> TunerSource:
    if isinstance(model, DecisionTreeModel) or (isinstance(model, ForestModel) and model.kind == "tree"):
        return TunerSource.DECISION_TREE
    return TunerSource.RANDOM_FOREST


def is_feasible(target: FormatId, features, conv: ConversionConfig) -> bool:
    """Whether converting to ``target`` fits the padding cap, judged from features alone."""
    need = padded_size(target, nrows=features.m, nnz=features.nnz, max_row_nnz=features.max_nnz_per_row,
                       ndiags=features.ndiags, ntrue_diags=features.ntrue_diags, config=conv)
    return need <= conv.padding_cap(features.nnz)


def tune_ml(m: DynamicMatrix, cfg: TunerConfig | None = None, model: Model | None = None) -> TuneOutcome:
    """Predict the best format without running SpMV.

    An infeasible prediction falls back to CSR with ``fallback`` set. The
    matrix itself is not switched here.
    """
    cfg = cfg or TunerConfig()
    if model is None:
        model = load_model(cfg.resolved_model_path())
    clock = time.perf_counter
    t0 = clock()
    features = extract_features(m, cfg.true_diag_ratio)
    t1 = clock()
    predicted = predict(model, features)
    t2 = clock()
    conv = cfg.conversion_config
    if conv.true_diag_ratio != cfg.true_diag_ratio and predicted == FormatId.HDC:
        # HDC splits on its own ratio, so N_TD from the features does not apply
        feasible = _hdc_fits(m, conv)
    else:
        feasible = is_feasible(predicted, features, conv)
    chosen = predicted if feasible else FormatId.CSR
    return TuneOutcome(chosen, _source_of(model), t1 - t0, t2 - t1, None, False, predicted, not feasible)


def _hdc_fits(m, conv):
    try:
        convert_coo(m.to_coo(), FormatId.HDC, conv)
    except PaddingOverflow:
        return False
    return True


class RunFirstTuner:
    def __init__(self, cfg: TunerConfig | None = None):
        self.cfg = cfg or TunerConfig()

    def tune(self, m: DynamicMatrix, x) -> TuneOutcome:
        return tune_run_first(m, x, self.cfg)


class DecisionTreeTuner:
    """Single-tree tuner. ``model`` may be a model or a path to a model file."""

    def __init__(self, model=None, cfg: TunerConfig | None = None):
        self.cfg = cfg or TunerConfig()
        if model is None or isinstance(model, (str, os.PathLike)):
            model = load_model(model or self.cfg.resolved_model_path())
        self.model = model

    def tune(self, m: DynamicMatrix, x=None) -> TuneOutcome:
        return tune_ml(m, self.cfg, self.model)


class RandomForestTuner(DecisionTreeTuner):
    pass


def make_tuner(tuner, cfg: TunerConfig | None = None):
    if isinstance(tuner, (RunFirstTuner, DecisionTreeTuner)):
        return tuner
    if isinstance(tuner, (DecisionTreeModel, ForestModel)):
        return RandomForestTuner(tuner, cfg) if _source_of(tuner) == TunerSource.RANDOM_FOREST \
            else DecisionTreeTuner(tuner, cfg)
    source = TunerSource(tuner)
    if source == TunerSource.RUN_FIRST:
        return RunFirstTuner(cfg)
    if source == TunerSource.DECISION_TREE:
        return DecisionTreeTuner(None, cfg)
    return RandomForestTuner(None, cfg)


def tune_multiply(m: DynamicMatrix, x, tuner="run_first", cfg: TunerConfig | None = None):
    """Tune ``m`` for SpMV, switch it to the chosen format and return ``(A @ x, outcome)``.

    ``tuner`` is a tuner object, a loaded model, or one of ``"run_first"``,
    ``"decision_tree"``, ``"random_forest"`` (the latter two load the model
    from ``cfg.model_path`` or ``$SPARSE_ORACLE_MODEL``).
    """
    tuner = make_tuner(tuner, cfg)
    cfg = tuner.cfg
    original = m.active
    outcome = tuner.tune(m, x)
    chosen, fallback = outcome.chosen, outcome.fallback
    try:
        m.switch(chosen, cfg.conversion_config)
    except PaddingOverflow:
        chosen, fallback = FormatId.CSR, True
        m.switch(chosen, cfg.conversion_config)
    outcome = dataclasses.replace(outcome, chosen=chosen, fallback=fallback, switched=chosen != original)
    y = spmv(m, x) if cfg.nthreads == 1 else spmv_parallel(m, x, cfg.nthreads)
    return y, outcome

