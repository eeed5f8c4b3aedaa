"""rulefuse: sparse, fused rule ensembles from bagged decision trees.

Workflow: train (or import) a tree ensemble, build the sparse leaf-membership
matrix, run the block coordinate descent solver over a regularization path,
and extract the surviving rules with interpretability statistics.
"""

__version__ = "0.1.0"

from .ensemble import (
    Antecedent,
    Dataset,
    DecisionTree,
    LeafNode,
    Rule,
    SplitNode,
    TreeEnsemble,
    load_dataset_csv,
    load_ensemble,
    route,
    rule_of_leaf,
    save_ensemble,
    train_bagged_ensemble,
    train_tree,
)
from .errors import (
    BudgetInfeasibleError,
    InvalidConfigError,
    InvalidInputError,
    NumericError,
    ParseError,
)
from .extract import ExtractedRuleSet, ModelStats, PrunedTree, extract_rules, prune_tree, stats
from .mapping import MappingBlock, MappingMatrix, Residual, build_block, build_matrix, predict
from .penalties import (
    PenaltyConfig,
    ProxProblem,
    SubgradientInterval,
    flsa,
    mcp_threshold,
    penalty_value,
    prox,
    soft_threshold,
)
from .solver import (
    PathConfig,
    PathResult,
    SolveResult,
    SolverConfig,
    gbcd_solve,
    lambda_max,
    path_solve,
    select_model,
)

__all__ = [
    "__version__",
    "Antecedent",
    "BudgetInfeasibleError",
    "Dataset",
    "DecisionTree",
    "ExtractedRuleSet",
    "InvalidConfigError",
    "InvalidInputError",
    "LeafNode",
    "MappingBlock",
    "MappingMatrix",
    "ModelStats",
    "NumericError",
    "ParseError",
    "PathConfig",
    "PathResult",
    "PenaltyConfig",
    "ProxProblem",
    "PrunedTree",
    "Residual",
    "Rule",
    "SolveResult",
    "SolverConfig",
    "SplitNode",
    "SubgradientInterval",
    "TreeEnsemble",
    "build_block",
    "build_matrix",
    "extract_rules",
    "flsa",
    "gbcd_solve",
    "lambda_max",
    "load_dataset_csv",
    "load_ensemble",
    "mcp_threshold",
    "path_solve",
    "penalty_value",
    "predict",
    "prox",
    "prune_tree",
    "route",
    "rule_of_leaf",
    "save_ensemble",
    "select_model",
    "soft_threshold",
    "stats",
    "train_bagged_ensemble",
    "train_tree",
]
