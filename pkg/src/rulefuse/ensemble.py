"""Decision trees, bagged ensembles, and leaf-to-rule conversion.

Trees are plain linked node structures. Every consumer indexes leaves by
their *canonical order*: depth-first, left-child-first traversal from the
root. Adjacent leaves under this order share the longest possible prefix
of antecedents, which is what the fusion penalty downstream exploits.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, ParseError


@dataclass
class Dataset:
    """Numeric regression dataset: an N x P feature matrix and a length-N target."""

    features: np.ndarray
    target: np.ndarray
    feature_names: list[str]

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.target = np.asarray(self.target, dtype=float)
        if self.features.ndim != 2:
            raise InvalidInputError("features must be a 2-d matrix")
        n, p = self.features.shape
        if n < 1 or p < 1:
            raise InvalidInputError("dataset must have at least one row and one feature")
        if self.target.shape != (n,):
            raise InvalidInputError(
                f"target length {self.target.shape} does not match {n} feature rows"
            )
        if len(self.feature_names) != p:
            raise InvalidInputError(f"expected {p} feature names, got {len(self.feature_names)}")
        if not np.isfinite(self.features).all() or not np.isfinite(self.target).all():
            raise InvalidInputError("dataset contains missing or non-finite values")

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


@dataclass
class LeafNode:
    """Terminal node: a prediction value and the number of training rows routed here.

    A count of 0 means "unknown" and only occurs on imported trees.
    """

    value: float
    training_count: int = 0


@dataclass
class SplitNode:
    """Internal node thresholding one feature; <= goes left, > goes right."""

    feature_index: int
    threshold: float
    left: SplitNode | LeafNode
    right: SplitNode | LeafNode


@dataclass(frozen=True)
class Antecedent:
    """One if-then clause on a root-to-leaf path."""

    feature_index: int
    direction: str  # "<=" (left branch) or ">" (right branch)
    threshold: float

    def holds(self, row: np.ndarray) -> bool:
        v = row[self.feature_index]
        return v <= self.threshold if self.direction == "<=" else v > self.threshold


@dataclass(frozen=True)
class Rule:
    """A decision rule: the conjunction of antecedents guarding one leaf."""

    antecedents: tuple[Antecedent, ...]
    value: float
    tree_index: int
    leaf_index: int

    def covers(self, row: np.ndarray) -> bool:
        return all(a.holds(row) for a in self.antecedents)


class DecisionTree:
    """A regression tree with precomputed canonical leaf order.

    ``ordered_leaves`` enumerates every leaf exactly once in depth-first,
    left-first order. ``leaf_antecedents[j]`` / ``leaf_node_paths[j]`` give
    the antecedent clauses and internal-node ids (preorder indices) on the
    path to leaf j.
    """

    def __init__(self, root: SplitNode | LeafNode):
        self.root = root
        self.ordered_leaves: list[LeafNode] = []
        self.leaf_antecedents: list[tuple[Antecedent, ...]] = []
        self.leaf_node_paths: list[tuple[int, ...]] = []
        self.depth = 0
        self.n_internal_nodes = 0
        self._leaf_index_by_id: dict[int, int] = {}

        # Iterative DFS, right child pushed first so the left child pops first.
        stack: list[tuple[object, tuple[Antecedent, ...], tuple[int, ...]]] = [(root, (), ())]
        next_internal_id = 0
        while stack:
            node, ants, path = stack.pop()
            if isinstance(node, LeafNode):
                self._leaf_index_by_id[id(node)] = len(self.ordered_leaves)
                self.ordered_leaves.append(node)
                self.leaf_antecedents.append(ants)
                self.leaf_node_paths.append(path)
                self.depth = max(self.depth, len(ants))
            else:
                nid = next_internal_id
                next_internal_id += 1
                path = path + (nid,)
                stack.append(
                    (node.right, ants + (Antecedent(node.feature_index, ">", node.threshold),), path)
                )
                stack.append(
                    (node.left, ants + (Antecedent(node.feature_index, "<=", node.threshold),), path)
                )
        self.n_internal_nodes = next_internal_id

    @property
    def n_leaves(self) -> int:
        return len(self.ordered_leaves)

    def max_feature_index(self) -> int:
        out = -1
        for ants in self.leaf_antecedents:
            for a in ants:
                out = max(out, a.feature_index)
        return out


@dataclass
class TreeEnsemble:
    trees: list[DecisionTree]
    n_features: int

    def __post_init__(self):
        for i, tree in enumerate(self.trees):
            if tree.max_feature_index() >= self.n_features:
                raise InvalidInputError(
                    f"tree {i} references feature {tree.max_feature_index()} "
                    f"but the ensemble has {self.n_features} features"
                )

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @property
    def n_rules(self) -> int:
        return sum(t.n_leaves for t in self.trees)

    def leaf_offsets(self) -> np.ndarray:
        """Column offsets partitioning [0, R) into per-tree blocks."""
        return np.concatenate(([0], np.cumsum([t.n_leaves for t in self.trees])))

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.zeros(X.shape[0])
        for tree in self.trees:
            leaves = route_many(tree, X)
            values = np.array([leaf.value for leaf in tree.ordered_leaves])
            out += values[leaves]
        return out / max(len(self.trees), 1)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def _best_split(X, y, rows, feature_indices, min_leaf):
    """Exhaustive (feature, midpoint) search maximizing variance reduction.

    Returns (gain, feature, threshold) or None when no candidate split leaves
    both children with >= min_leaf rows and strictly reduces the SSE.
    """
    ysub = y[rows]
    n = rows.size
    total = ysub.sum()
    parent_sse = float(np.sum(ysub * ysub) - total * total / n)
    min_gain = 1e-12 * max(parent_sse, 1.0)

    best = None
    best_gain = min_gain
    for f in feature_indices:
        vals = X[rows, f]
        order = np.argsort(vals, kind="stable")
        v = vals[order]
        ys = ysub[order]
        cuts = np.nonzero(v[1:] > v[:-1])[0]  # split between positions i and i+1
        if cuts.size == 0:
            continue
        csum = np.cumsum(ys)
        nl = cuts + 1
        nr = n - nl
        left_sum = csum[cuts]
        gains = left_sum * left_sum / nl + (total - left_sum) ** 2 / nr - total * total / n
        gains[(nl < min_leaf) | (nr < min_leaf)] = -np.inf
        i = int(np.argmax(gains))
        if gains[i] > best_gain:
            best_gain = float(gains[i])
            best = (best_gain, int(f), float((v[cuts[i]] + v[cuts[i] + 1]) / 2.0))
    return best


def _grow(X, y, rows, depth_left, min_leaf, rng, feature_fraction):
    if depth_left == 0 or rows.size < 2 * min_leaf:
        return LeafNode(float(y[rows].mean()), int(rows.size))

    p = X.shape[1]
    if rng is None or feature_fraction >= 1.0:
        feature_indices = np.arange(p)
    else:
        k = max(1, math.ceil(feature_fraction * p))
        feature_indices = np.sort(rng.choice(p, size=k, replace=False))

    best = _best_split(X, y, rows, feature_indices, min_leaf)
    if best is None:
        return LeafNode(float(y[rows].mean()), int(rows.size))

    _, f, threshold = best
    mask = X[rows, f] <= threshold
    left = _grow(X, y, rows[mask], depth_left - 1, min_leaf, rng, feature_fraction)
    right = _grow(X, y, rows[~mask], depth_left - 1, min_leaf, rng, feature_fraction)
    return SplitNode(f, threshold, left, right)


def train_tree(data: Dataset, max_depth: int, min_leaf: int = 1, rng_seed: int = 0) -> DecisionTree:
    """Greedy CART regression tree on the full sample.

    Splits maximize variance reduction over all (feature, midpoint) candidates;
    growth stops at max_depth, when a node has fewer than 2*min_leaf rows, or
    when no split reduces variance. Leaf values are means of routed targets.
    The seed is accepted for interface symmetry with the bagged trainer; the
    exhaustive search itself is deterministic.
    """
    if max_depth < 0:
        raise InvalidInputError("max_depth must be >= 0")
    if min_leaf < 1:
        raise InvalidInputError("min_leaf must be >= 1")
    rows = np.arange(data.n_rows)
    root = _grow(data.features, data.target, rows, max_depth, min_leaf, None, 1.0)
    return DecisionTree(root)


def train_bagged_ensemble(
    data: Dataset,
    n_trees: int,
    max_depth: int,
    min_leaf: int = 1,
    feature_subsample: float = 1.0,
    rng_seed: int = 0,
) -> TreeEnsemble:
    """Bagging: each tree fits an N-row bootstrap resample of the data.

    Each split considers a fresh random subset of ceil(feature_subsample * P)
    features. Tree t draws from an independent substream of rng_seed, so the
    result is deterministic for a fixed seed and identical whether trees are
    fit sequentially or concurrently.

    A negative rng_seed disables bootstrap resampling (every tree sees each
    row exactly once); with feature_subsample=1.0 and n_trees=1 this makes
    the ensemble identical to ``train_tree``.
    """
    if n_trees < 1:
        raise InvalidInputError("n_trees must be >= 1")
    bootstrap = rng_seed >= 0
    streams = np.random.SeedSequence(abs(rng_seed)).spawn(n_trees)
    n = data.n_rows
    trees = []
    for t in range(n_trees):
        rng = np.random.default_rng(streams[t])
        rows = rng.choice(n, size=n, replace=True) if bootstrap else np.arange(n)
        root = _grow(data.features, data.target, rows, max_depth, min_leaf, rng, feature_subsample)
        trees.append(DecisionTree(root))
    return TreeEnsemble(trees, data.n_features)


# ---------------------------------------------------------------------------
# Routing and rules
# ---------------------------------------------------------------------------


def route(tree: DecisionTree, x: np.ndarray) -> int:
    """Return the canonical index of the leaf that row x reaches.

    Ties x == threshold go left, matching the "<=" antecedent direction.
    """
    node = tree.root
    while isinstance(node, SplitNode):
        node = node.left if x[node.feature_index] <= node.threshold else node.right
    return tree._leaf_index_by_id[id(node)]


def route_many(tree: DecisionTree, X: np.ndarray) -> np.ndarray:
    """Vectorized routing: canonical leaf index for every row of X."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    out = np.empty(n, dtype=np.intp)
    leaf_counter = 0
    # Same DFS order as DecisionTree construction, partitioning row sets.
    stack: list[tuple[object, np.ndarray]] = [(tree.root, np.arange(n))]
    while stack:
        node, rows = stack.pop()
        if isinstance(node, LeafNode):
            out[rows] = leaf_counter
            leaf_counter += 1
        else:
            mask = X[rows, node.feature_index] <= node.threshold
            stack.append((node.right, rows[~mask]))
            stack.append((node.left, rows[mask]))
    return out


def rule_of_leaf(tree: DecisionTree, leaf_index: int, tree_index: int = 0) -> Rule:
    """Materialize the decision rule guarding a leaf (antecedents root-to-leaf)."""
    if not 0 <= leaf_index < tree.n_leaves:
        raise InvalidInputError(f"leaf index {leaf_index} out of range for {tree.n_leaves} leaves")
    return Rule(
        antecedents=tree.leaf_antecedents[leaf_index],
        value=tree.ordered_leaves[leaf_index].value,
        tree_index=tree_index,
        leaf_index=leaf_index,
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _tree_to_nodes(tree: DecisionTree) -> tuple[int, list[dict]]:
    nodes = []
    counter = [0]

    def visit(node):
        nid = counter[0]
        counter[0] += 1
        if isinstance(node, LeafNode):
            nodes.append({"id": nid, "value": node.value, "count": node.training_count})
        else:
            entry = {"id": nid, "feature": node.feature_index, "threshold": node.threshold}
            nodes.append(entry)
            entry["left"] = visit(node.left)
            entry["right"] = visit(node.right)
        return nid

    root_id = visit(tree.root)
    return root_id, nodes


def ensemble_to_doc(ensemble: TreeEnsemble) -> dict:
    trees = []
    for tree in ensemble.trees:
        root_id, nodes = _tree_to_nodes(tree)
        trees.append({"root": root_id, "nodes": nodes})
    return {"n_features": ensemble.n_features, "trees": trees}


def _node_from_doc(node_id, by_id, building, tree_pos):
    if node_id not in by_id:
        raise ParseError(f"tree {tree_pos}: node id {node_id} is referenced but not defined")
    if node_id in building:
        raise ParseError(f"tree {tree_pos}: node id {node_id} appears in a cycle or is shared")
    building.add(node_id)
    raw = by_id.pop(node_id)
    if "value" in raw:
        if not isinstance(raw.get("value"), (int, float)):
            raise ParseError(f"tree {tree_pos}: leaf node {node_id} has a non-numeric value")
        count = raw.get("count", 0)
        if not isinstance(count, int) or count < 0:
            raise ParseError(f"tree {tree_pos}: leaf node {node_id} has invalid count {count!r}")
        return LeafNode(float(raw["value"]), count)
    for key in ("feature", "threshold", "left", "right"):
        if key not in raw:
            raise ParseError(f"tree {tree_pos}: split node {node_id} is missing '{key}'")
    feature = raw["feature"]
    if not isinstance(feature, int) or feature < 0:
        raise ParseError(f"tree {tree_pos}: split node {node_id} has invalid feature {feature!r}")
    threshold = raw["threshold"]
    if not isinstance(threshold, (int, float)) or not math.isfinite(threshold):
        raise ParseError(f"tree {tree_pos}: split node {node_id} has non-finite threshold")
    if raw["left"] == raw["right"]:
        raise ParseError(f"tree {tree_pos}: split node {node_id} has identical children")
    left = _node_from_doc(raw["left"], by_id, building, tree_pos)
    right = _node_from_doc(raw["right"], by_id, building, tree_pos)
    return SplitNode(feature, float(threshold), left, right)


def ensemble_from_doc(doc: dict) -> TreeEnsemble:
    if not isinstance(doc, dict) or "n_features" not in doc or "trees" not in doc:
        raise ParseError("document must contain 'n_features' and 'trees'")
    n_features = doc["n_features"]
    if not isinstance(n_features, int) or n_features < 1:
        raise ParseError(f"invalid n_features {n_features!r}")
    trees = []
    for pos, tree_doc in enumerate(doc["trees"]):
        if "root" not in tree_doc or "nodes" not in tree_doc:
            raise ParseError(f"tree {pos}: must contain 'root' and 'nodes'")
        by_id = {}
        for raw in tree_doc["nodes"]:
            nid = raw.get("id")
            if not isinstance(nid, int):
                raise ParseError(f"tree {pos}: node with missing or non-integer id: {raw!r}")
            if nid in by_id:
                raise ParseError(f"tree {pos}: duplicate node id {nid}")
            by_id[nid] = raw
        root = _node_from_doc(tree_doc["root"], by_id, set(), pos)
        if by_id:
            orphan = sorted(by_id)[0]
            raise ParseError(f"tree {pos}: node id {orphan} is not reachable from the root")
        tree = DecisionTree(root)
        if tree.max_feature_index() >= n_features:
            raise ParseError(
                f"tree {pos}: split references feature {tree.max_feature_index()} "
                f"but n_features is {n_features}"
            )
        trees.append(tree)
    return TreeEnsemble(trees, n_features)


def save_ensemble(ensemble: TreeEnsemble, path) -> None:
    with open(path, "w", encoding="utf-8") as fp:
        json.dump(ensemble_to_doc(ensemble), fp)


def load_ensemble(path) -> TreeEnsemble:
    with open(path, "r", encoding="utf-8") as fp:
        try:
            doc = json.load(fp)
        except json.JSONDecodeError as exc:
            raise ParseError(f"not valid JSON: {exc}") from exc
    return ensemble_from_doc(doc)


def load_dataset_csv(path, target_column: str) -> Dataset:
    """Read a numeric CSV with a header row; one column is the target."""
    with open(path, "r", encoding="utf-8", newline="") as fp:
        reader = csv.reader(fp)
        try:
            header = next(reader)
        except StopIteration:
            raise InvalidInputError(f"{path}: empty file") from None
        rows = list(reader)
    if target_column not in header:
        raise InvalidInputError(f"{path}: no column named '{target_column}' in header")
    if not rows:
        raise InvalidInputError(f"{path}: no data rows")
    t = header.index(target_column)
    try:
        matrix = np.array(rows, dtype=float)
    except ValueError:
        for row in rows:
            for j, cell in enumerate(row):
                try:
                    float(cell)
                except ValueError:
                    raise InvalidInputError(
                        f"{path}: non-numeric cell {cell!r} in column '{header[j]}'"
                    ) from None
        raise
    feature_cols = [j for j in range(len(header)) if j != t]
    return Dataset(
        features=matrix[:, feature_cols],
        target=matrix[:, t],
        feature_names=[header[j] for j in feature_cols],
    )
