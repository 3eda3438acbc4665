"""Pick the fastest sparse storage format for SpMV from cheap matrix features."""

from .errors import (AllFormatsInfeasible, ChecksumMismatch, DimensionMismatch, EmptyDataset, EmptyMatrix,
                     IndexOutOfRange, InvalidInput, JoinError, MalformedModel, NetworkError, PaddingOverflow,
                     ParseError, SparseOracleError, TooFewSamples, UnsupportedFormat)
from .features import FEATURE_NAMES, FeatureVector, extract_features
from .formats import (ConversionConfig, CooMatrix, CsrMatrix, DiaMatrix, DynamicMatrix, EllMatrix, FormatId,
                      HdcMatrix, HybMatrix, from_coo, switch_format, to_coo)
from .ingest import (build_training_csv, fetch_corpus, read_matrix_market, read_profile_csv,
                     write_matrix_market, write_profile_csv)
from .model import DecisionTreeModel, ForestModel, TreeNode, load_model, predict, predict_many, save_model
from .spmv import TimingSample, spmv, spmv_parallel, time_spmv
from .trainer import (CVReport, Dataset, EvalReport, HyperParams, cross_validate, evaluate, grid_search,
                      train_forest, train_tree)
from .tuners import (DecisionTreeTuner, RandomForestTuner, RunFirstTuner, TuneOutcome, TunerConfig,
                     tune_ml, tune_multiply, tune_run_first)

__version__ = "0.1.0"

__all__ = [
    "AllFormatsInfeasible", "ChecksumMismatch", "DimensionMismatch", "EmptyDataset", "EmptyMatrix",
    "IndexOutOfRange", "InvalidInput", "JoinError", "MalformedModel", "NetworkError", "PaddingOverflow",
    "ParseError", "SparseOracleError", "TooFewSamples", "UnsupportedFormat", "FEATURE_NAMES", "FeatureVector",
    "extract_features", "ConversionConfig", "CooMatrix", "CsrMatrix", "DiaMatrix", "DynamicMatrix",
    "EllMatrix", "FormatId", "HdcMatrix", "HybMatrix", "from_coo", "switch_format", "to_coo",
    "build_training_csv", "fetch_corpus", "read_matrix_market", "read_profile_csv", "write_matrix_market",
    "write_profile_csv", "DecisionTreeModel", "ForestModel", "TreeNode", "load_model", "predict",
    "predict_many", "save_model", "TimingSample", "spmv", "spmv_parallel", "time_spmv", "CVReport", "Dataset",
    "EvalReport", "HyperParams", "cross_validate", "evaluate", "grid_search", "train_forest", "train_tree",
    "DecisionTreeTuner", "RandomForestTuner", "RunFirstTuner", "TuneOutcome", "TunerConfig", "tune_ml",
    "tune_multiply", "tune_run_first",
]
