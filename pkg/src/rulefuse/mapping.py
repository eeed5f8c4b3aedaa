"""Sparse leaf-membership matrices, residual maintenance, and block gradients.

For a tree with leaves v_1..v_R, the mapping block is the N x R matrix whose
(i, j) entry is v_j when row i reaches leaf j and 0 otherwise. Leaf supports
within one tree partition the rows, so the block Gram matrix is diagonal and
the exact gradient Lipschitz constant is max_j v_j^2 * n_j.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ensemble import Dataset, DecisionTree, TreeEnsemble, route_many
from .errors import InvalidInputError


@dataclass
class MappingBlock:
    """One tree's columns in column-major sparse form.

    ``leaf_of_row[i]`` is the canonical leaf index row i reaches; ``rows`` /
    ``indptr`` give the same membership as sorted per-column row lists
    (rows[indptr[j]:indptr[j+1]] belong to leaf j). All rows of one column
    share the single value ``values[j]``.
    """

    tree_index: int
    n_rows: int
    values: np.ndarray       # (R_t,) leaf prediction values
    leaf_of_row: np.ndarray  # (N,) canonical leaf index per row
    rows: np.ndarray         # (N,) row indices grouped by column, sorted within
    indptr: np.ndarray       # (R_t + 1,) column boundaries into rows
    leaf_counts: np.ndarray  # (R_t,) rows routed to each leaf
    curvatures: np.ndarray   # (R_t,) diagonal of the Gram matrix, v_j^2 * n_j
    lipschitz: float

    @property
    def n_leaves(self) -> int:
        return self.values.size

    @property
    def is_inert(self) -> bool:
        """True when every column is identically zero; such blocks are skipped."""
        return self.lipschitz == 0.0

    def column_rows(self, j: int) -> np.ndarray:
        return self.rows[self.indptr[j] : self.indptr[j + 1]]

    def dense(self) -> np.ndarray:
        out = np.zeros((self.n_rows, self.n_leaves))
        out[np.arange(self.n_rows), self.leaf_of_row] = self.values[self.leaf_of_row]
        return out


@dataclass
class MappingMatrix:
    """Horizontal concatenation of per-tree blocks; total_columns = sum of R_t."""

    blocks: list[MappingBlock]
    n_rows: int = field(init=False)
    offsets: np.ndarray = field(init=False)

    def __post_init__(self):
        if not self.blocks:
            raise InvalidInputError("mapping matrix needs at least one block")
        self.n_rows = self.blocks[0].n_rows
        if any(b.n_rows != self.n_rows for b in self.blocks):
            raise InvalidInputError("all blocks must share the same row count")
        self.offsets = np.concatenate(([0], np.cumsum([b.n_leaves for b in self.blocks])))

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def total_columns(self) -> int:
        return int(self.offsets[-1])

    def block_slice(self, t: int) -> slice:
        return slice(int(self.offsets[t]), int(self.offsets[t + 1]))


@dataclass
class Residual:
    """r = y - M w for the solve that owns it, maintained incrementally.

    ``updates_since_refresh`` counts incremental updates since the last full
    recompute; the solver refreshes periodically to bound accumulated drift.
    """

    values: np.ndarray
    updates_since_refresh: int = 0


def build_block(tree: DecisionTree, data: Dataset, tree_index: int = 0) -> MappingBlock:
    """Route every row of the dataset and assemble the tree's sparse block."""
    if tree.max_feature_index() >= data.n_features:
        raise InvalidInputError(
            f"tree references feature {tree.max_feature_index()} "
            f"but data has {data.n_features} features"
        )
    n = data.n_rows
    r_t = tree.n_leaves
    leaf_of_row = route_many(tree, data.features)
    counts = np.bincount(leaf_of_row, minlength=r_t)
    # Stable argsort keeps row indices ascending inside each column.
    rows = np.argsort(leaf_of_row, kind="stable")
    indptr = np.concatenate(([0], np.cumsum(counts)))
    values = np.array([leaf.value for leaf in tree.ordered_leaves], dtype=float)
    curvatures = values * values * counts
    return MappingBlock(
        tree_index=tree_index,
        n_rows=n,
        values=values,
        leaf_of_row=leaf_of_row,
        rows=rows,
        indptr=indptr,
        leaf_counts=counts,
        curvatures=curvatures,
        lipschitz=float(curvatures.max()),
    )


def build_matrix(ensemble: TreeEnsemble, data: Dataset) -> MappingMatrix:
    blocks = [build_block(tree, data, t) for t, tree in enumerate(ensemble.trees)]
    return MappingMatrix(blocks)


def lipschitz(block: MappingBlock) -> float:
    """Largest eigenvalue of the block Gram matrix.

    Leaf supports are disjoint, so the Gram matrix is diag(v_j^2 * n_j) and
    the maximum diagonal entry is exact. A value of 0 marks an inert block.
    """
    return float(np.max(block.curvatures))


def block_gradient(block: MappingBlock, residual: Residual) -> np.ndarray:
    """Gradient of the half squared error w.r.t. this block's weights: -M_t^T r."""
    sums = np.bincount(block.leaf_of_row, weights=residual.values, minlength=block.n_leaves)
    return -block.values * sums


def apply_block_delta(
    residual: Residual, block: MappingBlock, old_w: np.ndarray, new_w: np.ndarray
) -> Residual:
    """Propagate a block weight change into the residual: r += M_t (old - new)."""
    delta = block.values * (old_w - new_w)
    if np.any(delta != 0.0):
        residual.values += delta[block.leaf_of_row]
        residual.updates_since_refresh += 1
    return residual


def predict(M: MappingMatrix, w: np.ndarray) -> np.ndarray:
    """Rule-ensemble prediction M w."""
    w = np.asarray(w, dtype=float)
    if w.shape != (M.total_columns,):
        raise InvalidInputError(
            f"weight vector has length {w.shape} but the matrix has {M.total_columns} columns"
        )
    out = np.zeros(M.n_rows)
    for t, block in enumerate(M.blocks):
        contrib = block.values * w[M.block_slice(t)]
        if np.any(contrib != 0.0):
            out += contrib[block.leaf_of_row]
    return out


def refresh_residual(residual: Residual, M: MappingMatrix, y: np.ndarray, w: np.ndarray) -> None:
    """Recompute r = y - M w from scratch, resetting the drift counter."""
    residual.values = y - predict(M, w)
    residual.updates_since_refresh = 0


def dump_coordinates(M: MappingMatrix, fp) -> None:
    """Write M as 'row column value' triplets, one per line (debug cross-checks)."""
    for t, block in enumerate(M.blocks):
        base = int(M.offsets[t])
        for j in range(block.n_leaves):
            v = float(block.values[j])
            for i in block.column_rows(j):
                fp.write(f"{int(i)} {base + j} {v!r}\n")
