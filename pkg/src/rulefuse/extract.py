"""Turn solved weights into a rule ensemble: pruning, statistics, export.

A nonzero weight keeps the corresponding leaf's rule; everything else is
pruned. An internal node survives pruning iff at least one kept leaf lies
in its subtree, so grouped selections retain fewer antecedents.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .ensemble import Antecedent, Dataset, DecisionTree, Rule, TreeEnsemble, rule_of_leaf
from .errors import InvalidInputError, ParseError
from .penalties import PenaltyConfig

ZERO_TOLERANCE = 1e-10


@dataclass
class ExtractedRuleSet:
    """Weighted decision rules plus an intercept.

    Prediction = intercept + sum of weight_k * rule_k(x). The intercept is
    the training-target mean by the package's centering convention.
    """

    rules: list[tuple[Rule, float]]
    intercept: float
    ensemble: TreeEnsemble | None = None
    penalty: PenaltyConfig | None = None

    @property
    def n_rules(self) -> int:
        return len(self.rules)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.full(X.shape[0], self.intercept)
        for rule, weight in self.rules:
            active = np.ones(X.shape[0], dtype=bool)
            for a in rule.antecedents:
                col = X[:, a.feature_index]
                active &= col <= a.threshold if a.direction == "<=" else col > a.threshold
            out[active] += weight * rule.value
        return out


@dataclass
class PrunedTree:
    """What survives of one tree after dropping unselected leaves."""

    tree: DecisionTree
    selected_leaves: tuple[int, ...]
    retained_internal_nodes: frozenset[int]

    @property
    def n_internal_nodes(self) -> int:
        return len(self.retained_internal_nodes)

    @property
    def n_total_nodes(self) -> int:
        return len(self.selected_leaves) + self.n_internal_nodes


@dataclass
class ModelStats:
    n_rules: int
    n_trees_used: int
    n_internal_nodes: int
    n_total_nodes: int
    n_antecedents: int
    contiguous_runs: dict[int, int] = field(default_factory=dict)
    test_mse: float | None = None
    r_squared: float | None = None

    @property
    def total_runs(self) -> int:
        return sum(self.contiguous_runs.values())

    def to_dict(self) -> dict:
        return {
            "n_rules": self.n_rules,
            "n_trees_used": self.n_trees_used,
            "n_internal_nodes": self.n_internal_nodes,
            "n_total_nodes": self.n_total_nodes,
            "n_antecedents": self.n_antecedents,
            "contiguous_runs": {str(k): v for k, v in sorted(self.contiguous_runs.items())},
            "test_mse": self.test_mse,
            "r_squared": self.r_squared,
        }


def _selected_by_tree(ensemble: TreeEnsemble, weights: np.ndarray, zero_tolerance: float):
    offsets = ensemble.leaf_offsets()
    if weights.shape != (int(offsets[-1]),):
        raise InvalidInputError(
            f"weight vector has length {weights.shape} but the ensemble has "
            f"{int(offsets[-1])} leaves"
        )
    for t, tree in enumerate(ensemble.trees):
        block = weights[offsets[t] : offsets[t + 1]]
        selected = np.nonzero(np.abs(block) > zero_tolerance)[0]
        yield t, tree, block, selected


def extract_rules(
    ensemble: TreeEnsemble,
    weights: np.ndarray,
    intercept: float = 0.0,
    zero_tolerance: float = ZERO_TOLERANCE,
    penalty: PenaltyConfig | None = None,
) -> ExtractedRuleSet:
    """Materialize the rules whose weights exceed the zero tolerance.

    The proximal operators produce exact zeros, so the tolerance is a safety
    net rather than a tuning knob.
    """
    weights = np.asarray(weights, dtype=float)
    rules: list[tuple[Rule, float]] = []
    for t, tree, block, selected in _selected_by_tree(ensemble, weights, zero_tolerance):
        for j in selected:
            rules.append((rule_of_leaf(tree, int(j), t), float(block[j])))
    return ExtractedRuleSet(rules=rules, intercept=intercept, ensemble=ensemble, penalty=penalty)


def prune_tree(tree: DecisionTree, selected_leaves) -> PrunedTree:
    """Keep the internal nodes that are ancestors of at least one selected leaf."""
    selected = tuple(sorted(int(j) for j in selected_leaves))
    for j in selected:
        if not 0 <= j < tree.n_leaves:
            raise InvalidInputError(f"leaf index {j} out of range for {tree.n_leaves} leaves")
    retained: set[int] = set()
    for j in selected:
        retained.update(tree.leaf_node_paths[j])
    return PrunedTree(tree=tree, selected_leaves=selected, retained_internal_nodes=frozenset(retained))


def count_runs(selected: np.ndarray) -> int:
    """Number of maximal consecutive runs in a sorted index array."""
    if selected.size == 0:
        return 0
    return int(1 + np.count_nonzero(np.diff(selected) > 1))


def stats(
    ensemble: TreeEnsemble,
    weights: np.ndarray,
    test_data: Dataset | None = None,
    intercept: float = 0.0,
    zero_tolerance: float = ZERO_TOLERANCE,
) -> ModelStats:
    """Interpretability counters for a weight vector, plus optional test metrics.

    ``contiguous_runs`` maps tree index -> number of maximal runs of selected
    leaves in canonical order (only trees with selections appear).
    ``n_antecedents`` counts distinct retained internal nodes across all
    pruned trees, i.e. distinct if-then clauses a reader must examine.
    """
    weights = np.asarray(weights, dtype=float)
    n_rules = 0
    n_internal = 0
    runs: dict[int, int] = {}
    for t, tree, _, selected in _selected_by_tree(ensemble, weights, zero_tolerance):
        if selected.size == 0:
            continue
        n_rules += int(selected.size)
        pruned = prune_tree(tree, selected)
        n_internal += pruned.n_internal_nodes
        runs[t] = count_runs(selected)

    test_mse = r_squared = None
    if test_data is not None:
        rule_set = extract_rules(ensemble, weights, intercept, zero_tolerance)
        pred = rule_set.predict(test_data.features)
        err = test_data.target - pred
        test_mse = float(err @ err) / test_data.n_rows
        centered = test_data.target - test_data.target.mean()
        denom = float(centered @ centered)
        r_squared = 1.0 - float(err @ err) / denom if denom > 0 else None

    return ModelStats(
        n_rules=n_rules,
        n_trees_used=len(runs),
        n_internal_nodes=n_internal,
        n_total_nodes=n_rules + n_internal,
        n_antecedents=n_internal,
        contiguous_runs=runs,
        test_mse=test_mse,
        r_squared=r_squared,
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def rule_set_to_doc(rule_set: ExtractedRuleSet) -> dict:
    """Serialize with the rule's additive contribution folded into 'weight'.

    The stored weight is solver weight times leaf value, so the document
    predicts on its own without the source ensemble.
    """
    return {
        "intercept": rule_set.intercept,
        "rules": [
            {
                "tree": rule.tree_index,
                "leaf": rule.leaf_index,
                "weight": weight * rule.value,
                "antecedents": [
                    {"feature": a.feature_index, "op": a.direction, "threshold": a.threshold}
                    for a in rule.antecedents
                ],
            }
            for rule, weight in rule_set.rules
        ],
    }


def rule_set_from_doc(doc: dict) -> ExtractedRuleSet:
    if not isinstance(doc, dict) or "intercept" not in doc or "rules" not in doc:
        raise ParseError("rule set document must contain 'intercept' and 'rules'")
    rules = []
    for i, raw in enumerate(doc["rules"]):
        for key in ("tree", "leaf", "weight", "antecedents"):
            if key not in raw:
                raise ParseError(f"rule {i}: missing '{key}'")
        ants = []
        for a in raw["antecedents"]:
            if a.get("op") not in ("<=", ">"):
                raise ParseError(f"rule {i}: antecedent op must be '<=' or '>', got {a.get('op')!r}")
            ants.append(Antecedent(int(a["feature"]), a["op"], float(a["threshold"])))
        rule = Rule(
            antecedents=tuple(ants),
            value=1.0,
            tree_index=int(raw["tree"]),
            leaf_index=int(raw["leaf"]),
        )
        rules.append((rule, float(raw["weight"])))
    return ExtractedRuleSet(rules=rules, intercept=float(doc["intercept"]))


def render_text(rule_set: ExtractedRuleSet) -> str:
    """Human-readable listing: one rule per line, largest contribution first."""
    lines = []
    ordered = sorted(
        rule_set.rules,
        key=lambda rw: (-abs(rw[1] * rw[0].value), rw[0].tree_index, rw[0].leaf_index),
    )
    for rule, weight in ordered:
        if rule.antecedents:
            clause = " AND ".join(
                f"x[{a.feature_index}] {a.direction} {a.threshold:g}" for a in rule.antecedents
            )
        else:
            clause = "TRUE"
        lines.append(f"IF {clause} THEN {weight * rule.value:+.6g}")
    lines.append(f"INTERCEPT {rule_set.intercept:+.6g}")
    return "\n".join(lines) + "\n"


def export(rule_set: ExtractedRuleSet, fmt: str, path) -> None:
    """Write the rule set as 'json' (round-trippable) or 'text' (readable)."""
    if fmt == "json":
        with open(path, "w", encoding="utf-8") as fp:
            json.dump(rule_set_to_doc(rule_set), fp, indent=2)
    elif fmt == "text":
        with open(path, "w", encoding="utf-8") as fp:
            fp.write(render_text(rule_set))
    else:
        raise InvalidInputError(f"unknown export format {fmt!r}")


def load_rule_set(path) -> ExtractedRuleSet:
    with open(path, "r", encoding="utf-8") as fp:
        try:
            doc = json.load(fp)
        except json.JSONDecodeError as exc:
            raise ParseError(f"not valid JSON: {exc}") from exc
    return rule_set_from_doc(doc)
