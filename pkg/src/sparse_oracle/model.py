"""
Decision trees and random forests over feature vectors, plus their text file format.

A tree is a flat tuple of :class:`TreeNode`; node 0 is the root and children
are referenced by position. Internal nodes send ``x`` left when
``x[feature_index] <= threshold``. A forest returns the plurality vote,
ties going to the lowest format ID.

File layout::

    sparse-oracle-model v1
    kind: forest
    n_features: 10
    n_classes: 6
    n_trees: <T>
    # key=value              (metadata, sorted by key)
    tree <t> nodes <K>
    <id> <feature|-1> <threshold|0> <left|-1> <right|-1> <class|-1> <count_0> ... <count_5>
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

import numpy as np

from .errors import MalformedModel
from .features import N_FEATURES, FeatureVector
from .formats import N_FORMATS, FormatId

LEAF = -1
MAGIC = "sparse-oracle-model v1"
N_CLASSES = N_FORMATS


def majority_class(counts) -> FormatId:
    """Argmax of a class histogram; ties go to the lowest ID."""
    return FormatId(int(np.argmax(np.asarray(counts))))


@dataclass(frozen=True)
class TreeNode:
    feature_index: int
    threshold: float
    left: int
    right: int
    class_counts: tuple[int, ...]
    predicted_class: FormatId

    @property
    def is_leaf(self) -> bool:
        return self.feature_index == LEAF

    @classmethod
    def leaf(cls, class_counts) -> TreeNode:
        counts = tuple(int(c) for c in class_counts)
        return cls(LEAF, 0.0, LEAF, LEAF, counts, majority_class(counts))

    @classmethod
    def split(cls, feature_index, threshold, left, right, class_counts) -> TreeNode:
        counts = tuple(int(c) for c in class_counts)
        return cls(int(feature_index), float(threshold), int(left), int(right), counts,
                   majority_class(counts))


def _validate_nodes(nodes: Sequence[TreeNode], n_features: int, n_classes: int) -> int:
    """Check structure and return the depth. Raises MalformedModel."""
    if not nodes:
        raise MalformedModel("tree has no nodes")
    for i, node in enumerate(nodes):
        if len(node.class_counts) != n_classes:
            raise MalformedModel(f"node {i} has {len(node.class_counts)} class counts, expected {n_classes}")
        if sum(node.class_counts) <= 0 or min(node.class_counts) < 0:
            raise MalformedModel(f"node {i} has an empty class histogram")
        if node.is_leaf:
            if node.left != LEAF or node.right != LEAF:
                raise MalformedModel(f"leaf {i} has children")
        else:
            if not 0 <= node.feature_index < n_features:
                raise MalformedModel(f"node {i} splits on feature {node.feature_index}")
            if not np.isfinite(node.threshold):
                raise MalformedModel(f"node {i} has a non-finite threshold")
            for child in (node.left, node.right):
                if not 0 <= child < len(nodes):
                    raise MalformedModel(f"node {i} references missing node {child}")
        if not 0 <= int(node.predicted_class) < n_classes:
            raise MalformedModel(f"node {i} predicts class {node.predicted_class}")

    depth = 0
    seen = {0}
    stack = [(0, 0)]
    while stack:
        i, d = stack.pop()
        depth = max(depth, d)
        node = nodes[i]
        if node.is_leaf:
            continue
        for child in (node.left, node.right):
            if child in seen:
                raise MalformedModel(f"node {child} is reachable twice")
            seen.add(child)
            stack.append((child, d + 1))
    if len(seen) != len(nodes):
        raise MalformedModel(f"{len(nodes) - len(seen)} nodes are unreachable from the root")
    return depth


@dataclass(frozen=True, eq=False)
class DecisionTreeModel:
    nodes: tuple[TreeNode, ...]
    n_features: int = N_FEATURES
    n_classes: int = N_CLASSES

    def __post_init__(self):
        nodes = tuple(self.nodes)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "_depth", _validate_nodes(nodes, self.n_features, self.n_classes))
        object.__setattr__(self, "_feature", np.array([n.feature_index for n in nodes], dtype=np.int64))
        object.__setattr__(self, "_threshold", np.array([n.threshold for n in nodes]))
        object.__setattr__(self, "_left", np.array([n.left for n in nodes], dtype=np.int64))
        object.__setattr__(self, "_right", np.array([n.right for n in nodes], dtype=np.int64))
        object.__setattr__(self, "_klass", np.array([int(n.predicted_class) for n in nodes], dtype=np.int64))

    @property
    def root(self) -> TreeNode:
        return self.nodes[0]

    @property
    def depth(self) -> int:
        return self._depth

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def predict(self, x) -> FormatId:
        return predict_tree(self, x)

    def predict_many(self, X) -> np.ndarray:
        X = _as_matrix(X)
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        active = self._feature[node] != LEAF
        while active.any():
            idx = rows[active]
            cur = node[idx]
            go_left = X[idx, self._feature[cur]] <= self._threshold[cur]
            node[idx] = np.where(go_left, self._left[cur], self._right[cur])
            active = self._feature[node] != LEAF
        return self._klass[node]

    def structurally_equal(self, other: DecisionTreeModel) -> bool:
        return self.nodes == other.nodes


@dataclass(frozen=True, eq=False)
class ForestModel:
    trees: tuple[DecisionTreeModel, ...]
    metadata: Mapping[str, str] = field(default_factory=dict)
    kind: str = "forest"

    def __post_init__(self):
        trees = tuple(self.trees)
        if not trees:
            raise MalformedModel("forest has no trees")
        nf, nc = trees[0].n_features, trees[0].n_classes
        if any(t.n_features != nf or t.n_classes != nc for t in trees):
            raise MalformedModel("trees disagree on n_features / n_classes")
        if self.kind not in ("forest", "tree"):
            raise MalformedModel(f"unknown model kind {self.kind!r}")
        if self.kind == "tree" and len(trees) != 1:
            raise MalformedModel("a 'tree' model must hold exactly one tree")
        object.__setattr__(self, "trees", trees)
        object.__setattr__(self, "metadata", dict(self.metadata))

    @property
    def n_estimators(self) -> int:
        return len(self.trees)

    @property
    def n_features(self) -> int:
        return self.trees[0].n_features

    @property
    def n_classes(self) -> int:
        return self.trees[0].n_classes

    def predict(self, x) -> FormatId:
        return predict_forest(self, x)

    def predict_many(self, X) -> np.ndarray:
        X = _as_matrix(X)
        votes = np.zeros((len(X), self.n_classes), dtype=np.int64)
        rows = np.arange(len(X))
        for tree in self.trees:
            votes[rows, tree.predict_many(X)] += 1
        return np.argmax(votes, axis=1)


Model = Union[DecisionTreeModel, ForestModel]


def _as_vector(x) -> np.ndarray:
    if isinstance(x, FeatureVector):
        return x.to_row()
    return np.asarray(x, dtype=np.float64)


def _as_matrix(X) -> np.ndarray:
    if len(X) and isinstance(X[0], FeatureVector):
        return np.array([f.to_row() for f in X])
    X = np.asarray(X, dtype=np.float64)
    return X.reshape(-1, X.shape[-1]) if X.size else X.reshape(0, N_FEATURES)


def predict_tree(t: DecisionTreeModel, x) -> FormatId:
    x = _as_vector(x)
    nodes = t.nodes
    node = nodes[0]
    while not node.is_leaf:
        node = nodes[node.left] if x[node.feature_index] <= node.threshold else nodes[node.right]
    return node.predicted_class


def forest_votes(f: ForestModel, x) -> np.ndarray:
    x = _as_vector(x)
    votes = np.zeros(f.n_classes, dtype=np.int64)
    for tree in f.trees:
        votes[predict_tree(tree, x)] += 1
    return votes


def predict_forest(f: ForestModel, x) -> FormatId:
    return FormatId(int(np.argmax(forest_votes(f, x))))


def predict(model: Model, x) -> FormatId:
    if isinstance(model, DecisionTreeModel):
        return predict_tree(model, x)
    return predict_forest(model, x)


def predict_many(model: Model, X) -> np.ndarray:
    return model.predict_many(X)


def as_forest(model: Model, metadata=None) -> ForestModel:
    if isinstance(model, ForestModel):
        return model
    return ForestModel((model,), metadata or {}, kind="tree")


# serialization ------------------------------------------------------------

def _clean_meta(text) -> str:
    return str(text).replace("\n", " ").replace("\r", " ")


def dumps_model(model: Model) -> str:
    forest = as_forest(model)
    lines = [
        MAGIC,
        f"kind: {forest.kind}",
        f"n_features: {forest.n_features}",
        f"n_classes: {forest.n_classes}",
        f"n_trees: {forest.n_estimators}",
    ]
    for key in sorted(forest.metadata):
        k = _clean_meta(key).replace("=", "_")
        lines.append(f"# {k}={_clean_meta(forest.metadata[key])}")
    for t, tree in enumerate(forest.trees):
        lines.append(f"tree {t} nodes {tree.n_nodes}")
        for i, node in enumerate(tree.nodes):
            counts = " ".join(str(c) for c in node.class_counts)
            if node.is_leaf:
                lines.append(f"{i} -1 0 -1 -1 {int(node.predicted_class)} {counts}")
            else:
                lines.append(f"{i} {node.feature_index} {float(node.threshold)!r} "
                             f"{node.left} {node.right} -1 {counts}")
    return "\n".join(lines) + "\n"


def save_model(model: Model, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_model(model))


def _header_value(lines, idx, key, cast=int):
    lineno = idx + 1
    if idx >= len(lines):
        raise MalformedModel(f"missing '{key}' header", lineno)
    text = lines[idx]
    prefix = f"{key}:"
    if not text.startswith(prefix):
        raise MalformedModel(f"expected '{key}: ...', got {text!r}", lineno)
    raw = text[len(prefix):].strip()
    try:
        return cast(raw)
    except ValueError:
        raise MalformedModel(f"bad value for {key}: {raw!r}", lineno) from None


def loads_model(text: str) -> ForestModel:
    """Parse a model file. Always returns a :class:`ForestModel`; ``kind`` tells tree from forest."""
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0].rstrip("\r") != MAGIC:
        raise MalformedModel(f"bad magic/version, expected {MAGIC!r}", 1)
    lines = [ln.rstrip("\r") for ln in lines]
    kind = _header_value(lines, 1, "kind", str)
    if kind not in ("forest", "tree"):
        raise MalformedModel(f"unknown kind {kind!r}", 2)
    n_features = _header_value(lines, 2, "n_features")
    if n_features != N_FEATURES:
        raise MalformedModel(f"n_features must be {N_FEATURES}, got {n_features}", 3)
    n_classes = _header_value(lines, 3, "n_classes")
    if n_classes != N_CLASSES:
        raise MalformedModel(f"n_classes must be {N_CLASSES}, got {n_classes}", 4)
    n_trees = _header_value(lines, 4, "n_trees")
    if n_trees < 1:
        raise MalformedModel("n_trees must be >= 1", 5)

    metadata = {}
    idx = 5
    while idx < len(lines) and (lines[idx].startswith("#") or not lines[idx].strip()):
        body = lines[idx][1:].strip()
        if "=" in body:
            key, _, value = body.partition("=")
            metadata[key.strip()] = value.strip()
        idx += 1

    trees = []
    for t in range(n_trees):
        lineno = idx + 1
        if idx >= len(lines):
            raise MalformedModel(f"expected {n_trees} trees, found {t}", lineno)
        parts = lines[idx].split()
        if len(parts) != 4 or parts[0] != "tree" or parts[2] != "nodes":
            raise MalformedModel(f"expected 'tree {t} nodes <K>', got {lines[idx]!r}", lineno)
        try:
            tree_id, n_nodes = int(parts[1]), int(parts[3])
        except ValueError:
            raise MalformedModel(f"bad tree header {lines[idx]!r}", lineno) from None
        if tree_id != t:
            raise MalformedModel(f"tree {tree_id} out of order, expected {t}", lineno)
        if n_nodes < 1:
            raise MalformedModel("tree must have at least one node", lineno)
        idx += 1
        nodes = []
        for k in range(n_nodes):
            lineno = idx + 1
            if idx >= len(lines) or lines[idx].startswith("tree "):
                raise MalformedModel(f"tree {t} declares {n_nodes} nodes, found {k}", lineno)
            nodes.append(_parse_node(lines[idx], k, n_nodes, n_classes, lineno))
            idx += 1
        try:
            trees.append(DecisionTreeModel(tuple(nodes), n_features, n_classes))
        except MalformedModel as exc:
            raise MalformedModel(f"tree {t}: {exc}", idx - n_nodes) from None
    while idx < len(lines) and not lines[idx].strip():
        idx += 1
    if idx < len(lines):
        raise MalformedModel(f"unexpected content after {n_trees} trees: {lines[idx]!r}", idx + 1)
    try:
        return ForestModel(tuple(trees), metadata, kind=kind)
    except MalformedModel as exc:
        raise MalformedModel(str(exc), 2) from None


def _parse_node(text, expected_id, n_nodes, n_classes, lineno) -> TreeNode:
    parts = text.split()
    if len(parts) != 6 + n_classes:
        raise MalformedModel(f"node line needs {6 + n_classes} fields, got {len(parts)}", lineno)
    try:
        node_id, feature = int(parts[0]), int(parts[1])
        threshold = float(parts[2])
        left, right, klass = int(parts[3]), int(parts[4]), int(parts[5])
        counts = tuple(int(c) for c in parts[6:])
    except ValueError:
        raise MalformedModel(f"unparseable node line {text!r}", lineno) from None
    if node_id != expected_id:
        raise MalformedModel(f"node id {node_id} out of order, expected {expected_id}", lineno)
    if sum(counts) <= 0 or min(counts) < 0:
        raise MalformedModel("class counts must be non-negative with a positive sum", lineno)
    if feature == LEAF:
        if left != LEAF or right != LEAF:
            raise MalformedModel("leaf node has children", lineno)
        if not 0 <= klass < n_classes:
            raise MalformedModel(f"leaf class {klass} not in 0..{n_classes - 1}", lineno)
        node = TreeNode.leaf(counts)
        if int(node.predicted_class) != klass:
            raise MalformedModel(f"leaf class {klass} disagrees with its class counts", lineno)
        return node
    if not 0 <= feature < N_FEATURES:
        raise MalformedModel(f"feature_index {feature} not in 0..{N_FEATURES - 1}", lineno)
    if klass >= n_classes:
        raise MalformedModel(f"class {klass} not in 0..{n_classes - 1}", lineno)
    for child in (left, right):
        if not 0 <= child < n_nodes:
            raise MalformedModel(f"dangling child reference {child}", lineno)
    if not np.isfinite(threshold):
        raise MalformedModel("non-finite threshold", lineno)
    return TreeNode.split(feature, threshold, left, right, counts)


def load_model(path) -> ForestModel:
    with open(os.fspath(path), encoding="utf-8") as fh:
        return loads_model(fh.read())
