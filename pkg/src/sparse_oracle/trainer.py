"""
Offline training: CART trees, bootstrap forests, metrics, k-fold CV and grid search.

All randomness comes from numpy's PCG64 generator seeded through
``SeedSequence`` with integer tuples, so the same ``(dataset, params)``
always produce the same model:

* per-split feature subsets of tree ``t``: ``SeedSequence([seed, t, 1])``
* bootstrap draw of tree ``t``: ``SeedSequence([seed, t, 0])``
* CV fold shuffle: ``SeedSequence([seed, 2])``; train/test split:
  ``SeedSequence([seed, 3])``
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import itertools
import logging
import math
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import EmptyDataset, InvalidInput, TooFewSamples
from .features import FEATURE_NAMES, N_FEATURES, FeatureVector, row_to_features
from .formats import N_FORMATS
from .model import DecisionTreeModel, ForestModel, Model, TreeNode, predict_many

log = logging.getLogger(__name__)

N_CLASSES = N_FORMATS
CRITERIA = ("gini", "entropy")
_TIE_TOL = 1e-12

_STREAM_BOOTSTRAP = 0
_STREAM_SPLITS = 1
_STREAM_CV = 2
_STREAM_HOLDOUT = 3


def _rng(*key) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(k) for k in key])))


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix ``X`` (n x 10), integer labels and per-row matrix ids."""

    X: np.ndarray
    labels: np.ndarray
    matrix_ids: tuple[str, ...] = ()

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] == 0:
            raise EmptyDataset("dataset has no rows")
        if X.shape[1] != N_FEATURES:
            raise InvalidInput(f"expected {N_FEATURES} feature columns, got {X.shape[1]}")
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.shape != (X.shape[0],):
            raise InvalidInput("labels must match the number of rows")
        if labels.min() < 0 or labels.max() >= N_CLASSES:
            raise InvalidInput(f"labels must lie in 0..{N_CLASSES - 1}")
        ids = tuple(self.matrix_ids) or tuple(str(i) for i in range(len(labels)))
        if len(ids) != len(labels):
            raise InvalidInput("matrix_ids must match the number of rows")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "matrix_ids", ids)

    @classmethod
    def from_features(cls, rows: Sequence[FeatureVector], labels, matrix_ids=()) -> Dataset:
        if not rows:
            raise EmptyDataset("dataset has no rows")
        return cls(np.array([f.to_row() for f in rows]), labels, matrix_ids)

    def __len__(self):
        return len(self.labels)

    @property
    def rows(self) -> list[FeatureVector]:
        return [row_to_features(r) for r in self.X]

    def subset(self, idx) -> Dataset:
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.X[idx], self.labels[idx], tuple(self.matrix_ids[i] for i in idx))

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.X.tobytes())
        h.update(self.labels.tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class HyperParams:
    n_estimators: int = 100
    bootstrap: bool = True
    max_depth: int | None = None
    min_samples_leaf: int = 1
    min_samples_split: int = 2
    max_features: int = N_FEATURES
    criterion: str = "gini"
    seed: int = 0

    def __post_init__(self):
        if self.n_estimators < 1:
            raise InvalidInput("n_estimators must be >= 1")
        if self.min_samples_split < 2:
            raise InvalidInput("min_samples_split must be >= 2")
        if self.min_samples_leaf < 1:
            raise InvalidInput("min_samples_leaf must be >= 1")
        if not 1 <= self.max_features <= N_FEATURES:
            raise InvalidInput(f"max_features must lie in 1..{N_FEATURES}")
        if self.max_depth is not None and self.max_depth < 0:
            raise InvalidInput("max_depth must be >= 0 or None")
        if self.criterion not in CRITERIA:
            raise InvalidInput(f"criterion must be one of {CRITERIA}")

    def sort_key(self) -> tuple:
        d = dataclasses.asdict(self)
        d["max_depth"] = math.inf if self.max_depth is None else self.max_depth
        return tuple(d[f.name] for f in dataclasses.fields(self))

    def describe(self) -> str:
        return ",".join(f"{k}={v}" for k, v in dataclasses.asdict(self).items())


# impurity -----------------------------------------------------------------

def gini(counts) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(1.0 - np.dot(p, p))


def entropy(counts) -> float:
    """Shannon entropy in bits."""
    counts = np.asarray(counts, dtype=np.float64)
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts[counts > 0] / n
    return float(-(p * np.log2(p)).sum())


def _impurity_rows(counts: np.ndarray, criterion: str) -> np.ndarray:
    """Row-wise impurity of a (k x classes) count matrix."""
    n = counts.sum(axis=1, keepdims=True)
    p = counts / np.where(n == 0, 1, n)
    if criterion == "gini":
        return 1.0 - (p * p).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.where(p > 0, np.log2(np.where(p > 0, p, 1)), 0.0)
    return -(p * logs).sum(axis=1)


def split_score(left_counts, right_counts, criterion: str) -> float:
    """Weighted impurity of a candidate split: ``(n_l*I_l + n_r*I_r) / n``."""
    imp = gini if criterion == "gini" else entropy
    nl, nr = float(np.sum(left_counts)), float(np.sum(right_counts))
    return (nl * imp(left_counts) + nr * imp(right_counts)) / (nl + nr)


def _midpoint(a: float, b: float) -> float:
    mid = (a + b) / 2.0
    # adjacent floats or overflow: keep the split strictly between a and b
    if not a <= mid < b:
        mid = a
    return mid


class _Split(NamedTuple):
    score: float
    feature: int
    threshold: float
    n_left: int


def _best_split_on_feature(x, onehot, total, feature, min_leaf, criterion):
    n = len(x)
    order = np.argsort(x, kind="stable")
    xs = x[order]
    left = np.cumsum(onehot[order], axis=0)[:-1]
    n_left = np.arange(1, n)
    valid = (xs[1:] != xs[:-1]) & (n_left >= min_leaf) & (n - n_left >= min_leaf)
    if not valid.any():
        return None
    pos = np.flatnonzero(valid)
    lc = left[pos]
    rc = total - lc
    nl = n_left[pos].astype(np.float64)
    scores = (nl * _impurity_rows(lc, criterion) + (n - nl) * _impurity_rows(rc, criterion)) / n
    j = np.flatnonzero(scores <= scores.min() + _TIE_TOL)[0]
    i = pos[j]
    return _Split(float(scores[j]), feature, _midpoint(float(xs[i]), float(xs[i + 1])), int(i + 1))


def find_best_split(X, y, features: Iterable[int], min_leaf: int, criterion: str) -> _Split | None:
    """Lowest weighted-impurity split over ``features``.

    Candidate thresholds are midpoints between consecutive distinct values.
    Scores within 1e-12 of the best count as ties, resolved by the lowest
    feature index and then the lowest threshold.
    """
    onehot = np.zeros((len(y), N_CLASSES))
    onehot[np.arange(len(y)), y] = 1.0
    total = onehot.sum(axis=0)
    found = []
    for f in features:
        s = _best_split_on_feature(X[:, f], onehot, total, int(f), min_leaf, criterion)
        if s is not None:
            found.append(s)
    if not found:
        return None
    best = min(s.score for s in found)
    return min((s for s in found if s.score <= best + _TIE_TOL), key=lambda s: (s.feature, s.threshold))


def _fit_tree(X, y, h: HyperParams, rng: np.random.Generator) -> DecisionTreeModel:
    """Grow a CART tree breadth first.

    Breadth-first order makes the feature draws of a depth-capped tree a
    prefix of those of the uncapped tree, so raising ``max_depth`` only
    ever refines leaves.
    """
    nodes: list[TreeNode | None] = [None]
    queue = deque([(0, np.arange(len(y)), 0)])
    while queue:
        node_id, idx, depth = queue.popleft()
        counts = np.bincount(y[idx], minlength=N_CLASSES)
        split = None
        stop = (
            (h.max_depth is not None and depth >= h.max_depth)
            or np.count_nonzero(counts) <= 1
            or len(idx) < h.min_samples_split
            or len(idx) < 2 * h.min_samples_leaf
        )
        if not stop:
            Xn, yn = X[idx], y[idx]
            if h.max_features >= N_FEATURES:
                split = find_best_split(Xn, yn, range(N_FEATURES), h.min_samples_leaf, h.criterion)
            else:
                perm = rng.permutation(N_FEATURES)
                split = find_best_split(Xn, yn, perm[:h.max_features], h.min_samples_leaf, h.criterion)
                # like CART implementations: keep drawing features if the subset cannot split
                for f in perm[h.max_features:]:
                    if split is not None:
                        break
                    split = find_best_split(Xn, yn, [f], h.min_samples_leaf, h.criterion)
        if split is None:
            nodes[node_id] = TreeNode.leaf(counts)
            continue
        go_left = X[idx, split.feature] <= split.threshold
        left_id, right_id = len(nodes), len(nodes) + 1
        nodes.extend([None, None])
        nodes[node_id] = TreeNode.split(split.feature, split.threshold, left_id, right_id, counts)
        queue.append((left_id, idx[go_left], depth + 1))
        queue.append((right_id, idx[~go_left], depth + 1))
    return DecisionTreeModel(tuple(nodes))


def train_tree(d: Dataset, h: HyperParams) -> DecisionTreeModel:
    if len(d) == 0:
        raise EmptyDataset("cannot train on an empty dataset")
    return _fit_tree(d.X, d.labels, h, _rng(h.seed, 0, _STREAM_SPLITS))


def bootstrap_indices(n: int, seed: int, tree_index: int) -> np.ndarray:
    return _rng(seed, tree_index, _STREAM_BOOTSTRAP).integers(0, n, size=n)


def train_forest(d: Dataset, h: HyperParams, metadata: Mapping[str, str] | None = None) -> ForestModel:
    if len(d) == 0:
        raise EmptyDataset("cannot train on an empty dataset")
    trees = []
    for t in range(h.n_estimators):
        if h.bootstrap:
            idx = bootstrap_indices(len(d), h.seed, t)
            X, y = d.X[idx], d.labels[idx]
        else:
            X, y = d.X, d.labels
        trees.append(_fit_tree(X, y, h, _rng(h.seed, t, _STREAM_SPLITS)))
    meta = {"hyperparameters": h.describe(), "dataset": d.fingerprint(), "n_samples": str(len(d))}
    meta.update(metadata or {})
    return ForestModel(tuple(trees), meta)


# evaluation ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EvalReport:
    accuracy: float
    balanced_accuracy: float
    confusion: np.ndarray
    per_class_recall: np.ndarray

    @property
    def support(self) -> np.ndarray:
        return self.confusion.sum(axis=1)

    def summary(self) -> str:
        return f"accuracy {100 * self.accuracy:.2f}%  balanced accuracy {100 * self.balanced_accuracy:.2f}%"


def score_predictions(truth, predicted) -> EvalReport:
    """Accuracy, balanced accuracy (mean recall over classes present in ``truth``) and confusion."""
    truth = np.asarray(truth, dtype=np.int64)
    predicted = np.asarray(predicted, dtype=np.int64)
    if truth.shape != predicted.shape or truth.size == 0:
        raise InvalidInput("truth and predictions must be non-empty and equally long")
    confusion = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(confusion, (truth, predicted), 1)
    support = confusion.sum(axis=1)
    present = support > 0
    recall = np.full(N_CLASSES, np.nan)
    recall[present] = np.diag(confusion)[present] / support[present]
    accuracy = float(np.trace(confusion) / confusion.sum())
    return EvalReport(accuracy, float(recall[present].mean()), confusion, recall)


def evaluate(model: Model, d: Dataset) -> EvalReport:
    return score_predictions(d.labels, predict_many(model, d.X))


@dataclass(frozen=True, eq=False)
class CVReport:
    """Mean of the per-fold reports of one cross-validation run."""

    accuracy: float
    balanced_accuracy: float
    folds: tuple[EvalReport, ...]
    stratified: bool = True
    warnings: tuple[str, ...] = ()


def stratified_folds(labels, k: int, seed: int) -> tuple[np.ndarray, bool]:
    """Fold number per sample, and whether stratification was possible.

    Samples are shuffled with the seed, then dealt round-robin class by
    class with one running counter, so every class spreads over all folds.
    When some present class has fewer than ``k`` members the deal ignores
    classes.
    """
    labels = np.asarray(labels)
    n = len(labels)
    if k < 2:
        raise InvalidInput("k must be >= 2")
    if n < k:
        raise TooFewSamples(f"{n} samples cannot fill {k} folds")
    perm = _rng(seed, _STREAM_CV).permutation(n)
    fold = np.empty(n, dtype=np.int64)
    counts = np.bincount(labels, minlength=N_CLASSES)
    if counts[counts > 0].min() < k:
        fold[perm] = np.arange(n) % k
        return fold, False
    shuffled = labels[perm]
    counter = 0
    for c in range(N_CLASSES):
        members = perm[shuffled == c]
        fold[members] = (counter + np.arange(len(members))) % k
        counter += len(members)
    return fold, True


def cross_validate(d: Dataset, h: HyperParams, k: int = 5) -> CVReport:
    fold, stratified = stratified_folds(d.labels, k, h.seed)
    warnings = () if stratified else (
        f"TooFewSamples: a class has fewer than {k} members; folds are not stratified",)
    if not stratified:
        log.warning(warnings[0])
    reports = []
    for j in range(k):
        test = fold == j
        model = train_forest(d.subset(np.flatnonzero(~test)), h)
        reports.append(evaluate(model, d.subset(np.flatnonzero(test))))
    return CVReport(
        accuracy=float(np.mean([r.accuracy for r in reports])),
        balanced_accuracy=float(np.mean([r.balanced_accuracy for r in reports])),
        folds=tuple(reports),
        stratified=stratified,
        warnings=warnings,
    )


# grid search --------------------------------------------------------------

DEFAULT_GRID: dict[str, list] = {
    "n_estimators": list(range(20, 101, 10)),
    "bootstrap": [True, False],
    "max_depth": list(range(10, 25)),
    "min_samples_leaf": [1, 2, 3],
    "min_samples_split": [2, 5, 10],
    "max_features": list(range(4, 11)),
    "criterion": ["gini", "entropy"],
}

_FIELDS = {f.name: f for f in dataclasses.fields(HyperParams)}


def expand_grid(grid: Mapping[str, Sequence] | Sequence[HyperParams], base: HyperParams | None = None) -> list[HyperParams]:
    """All lattice points, in HyperParams field order."""
    if not isinstance(grid, Mapping):
        points = list(grid)
        if not points:
            raise InvalidInput("grid is empty")
        return points
    base = base or HyperParams()
    unknown = set(grid) - set(_FIELDS)
    if unknown:
        raise InvalidInput(f"unknown hyperparameters: {sorted(unknown)}")
    keys = [name for name in _FIELDS if name in grid]
    if any(len(grid[k]) == 0 for k in keys):
        raise InvalidInput("every grid axis needs at least one value")
    return [dataclasses.replace(base, **dict(zip(keys, combo)))
            for combo in itertools.product(*(grid[k] for k in keys))]


class GridPoint(NamedTuple):
    params: HyperParams
    report: CVReport


class GridSearchResult(NamedTuple):
    params: HyperParams
    model: ForestModel
    report: CVReport
    points: tuple[GridPoint, ...]


def _rank(point: GridPoint):
    return (-point.report.balanced_accuracy, -point.report.accuracy, point.params.sort_key())


def grid_search(d: Dataset, grid, k: int = 5, base: HyperParams | None = None,
                metadata: Mapping[str, str] | None = None) -> GridSearchResult:
    """Cross-validate every lattice point and retrain the winner on all of ``d``.

    The winner maximises mean balanced accuracy, then mean accuracy; the
    lexicographically smallest point breaks any remaining tie.
    """
    points = []
    for params in expand_grid(grid, base):
        report = cross_validate(d, params, k)
        log.info("cv %s -> %s balanced %.4f", params.describe(), f"{report.accuracy:.4f}",
                 report.balanced_accuracy)
        points.append(GridPoint(params, report))
    best = min(points, key=_rank)
    model = train_forest(d, best.params, metadata)
    return GridSearchResult(best.params, model, best.report, tuple(points))


def write_grid_scores(points: Sequence[GridPoint], path) -> None:
    names = list(_FIELDS)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names + ["cv_accuracy", "cv_balanced_accuracy", "stratified"])
        for p in points:
            values = dataclasses.asdict(p.params)
            w.writerow([_format_value(values[n]) for n in names]
                       + [repr(p.report.accuracy), repr(p.report.balanced_accuracy), int(p.report.stratified)])


def _format_value(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "T" if v else "F"
    return v


def _parse_value(name, token):
    token = token.strip()
    if name == "criterion":
        return token.lower()
    if name == "bootstrap":
        low = token.lower()
        if low in ("t", "true", "1", "yes"):
            return True
        if low in ("f", "false", "0", "no"):
            return False
        raise InvalidInput(f"bad boolean {token!r} for bootstrap")
    if name == "max_depth" and token.lower() in ("none", "unlimited", ""):
        return None
    try:
        return int(token)
    except ValueError:
        raise InvalidInput(f"bad integer {token!r} for {name}") from None


def parse_grid(text: str) -> dict[str, list]:
    """Parse ``key = v1,v2,...`` lines; ``#`` starts a comment."""
    grid = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, values = line.partition("=")
        key = key.strip()
        if not sep or key not in _FIELDS:
            raise InvalidInput(f"grid line {lineno}: expected '<hyperparameter> = values', got {raw!r}")
        grid[key] = [_parse_value(key, v) for v in values.split(",")]
    return grid


def load_grid(path) -> dict[str, list]:
    with open(path, encoding="utf-8") as fh:
        return parse_grid(fh.read())


def train_test_split(d: Dataset, test_fraction: float = 0.2, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Seeded random split; the test part gets ``round(test_fraction * n)`` rows (at least one)."""
    n = len(d)
    if n < 2:
        raise TooFewSamples("need at least two rows to split")
    n_test = min(n - 1, max(1, int(round(test_fraction * n))))
    perm = _rng(seed, _STREAM_HOLDOUT).permutation(n)
    return d.subset(np.sort(perm[n_test:])), d.subset(np.sort(perm[:n_test]))


# training CSV -------------------------------------------------------------

TRAINING_HEADER = ("matrix_id",) + FEATURE_NAMES + ("label",)


def read_training_csv(path) -> Dataset:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != TRAINING_HEADER:
            raise InvalidInput(f"{path}: expected header {','.join(TRAINING_HEADER)}")
        ids, rows, labels = [], [], []
        for lineno, rec in enumerate(reader, 2):
            if not rec:
                continue
            if len(rec) != len(TRAINING_HEADER):
                raise InvalidInput(f"{path}:{lineno}: expected {len(TRAINING_HEADER)} fields")
            ids.append(rec[0])
            rows.append([float(v) for v in rec[1:-1]])
            labels.append(int(rec[-1]))
    if not rows:
        raise EmptyDataset(f"{path} has no data rows")
    return Dataset(np.array(rows), labels, ids)


def write_training_csv(d: Dataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAINING_HEADER)
        for mid, row, label in zip(d.matrix_ids, d.X, d.labels):
            f = row_to_features(row)
            w.writerow([mid, *feature_cells(f), int(label)])


def feature_cells(f: FeatureVector) -> list[str]:
    """CSV cells for a feature vector; integers as integers, reals round-trip exact."""
    return [repr(v) if isinstance(v, float) else str(v) for v in dataclasses.astuple(f)]
