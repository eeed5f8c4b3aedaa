"""Penalty values, proximal operators, and subgradient machinery.

Two regularizers act on a blocked weight vector: a sparsity penalty (plain
L1 or the minimax concave penalty, MCP) applied per coordinate, and a chain
fusion penalty applied to differences of adjacent leaf weights within each
tree block. The proximal step for a block composes an exact fused-signal
approximation (FLSA) with an elementwise thresholding operator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfigError

KIND_L1 = "l1"
KIND_MCP = "mcp"


@dataclass(frozen=True)
class PenaltyConfig:
    """Sparsity kind plus the (lambda_s, gamma, lambda_f) hyperparameters."""

    kind: str
    lambda_s: float
    gamma: float = 2.0
    lambda_f: float = 0.0

    def __post_init__(self):
        if self.kind not in (KIND_L1, KIND_MCP):
            raise InvalidConfigError(f"unknown penalty kind {self.kind!r}")
        if not np.isfinite(self.lambda_s) or self.lambda_s < 0:
            raise InvalidConfigError(f"lambda_s must be finite and >= 0, got {self.lambda_s}")
        if not np.isfinite(self.lambda_f) or self.lambda_f < 0:
            raise InvalidConfigError(f"lambda_f must be finite and >= 0, got {self.lambda_f}")
        if self.kind == KIND_MCP and not self.gamma > 1.0:
            raise InvalidConfigError(f"gamma must be > 1, got {self.gamma}")


def soft_threshold(theta_hat, tau):
    """sign(x) * max(|x| - tau, 0), elementwise."""
    theta_hat = np.asarray(theta_hat, dtype=float)
    out = np.sign(theta_hat) * np.maximum(np.abs(theta_hat) - tau, 0.0)
    return float(out) if out.ndim == 0 else out


def mcp_threshold(theta_hat, lambda_over_L, gamma):
    """MCP thresholding operator with unit-step parameterization.

    For |x| <= tau * gamma (tau = lambda/L) returns gamma/(gamma-1) times the
    soft threshold at tau, otherwise x unchanged; the two branches agree at
    the boundary. Approaches soft thresholding as gamma grows and hard
    thresholding as gamma -> 1+.
    """
    if not gamma > 1.0:
        raise InvalidConfigError(f"gamma must be > 1, got {gamma}")
    theta_hat = np.asarray(theta_hat, dtype=float)
    inner = np.abs(theta_hat) <= lambda_over_L * gamma
    out = np.where(
        inner, (gamma / (gamma - 1.0)) * soft_threshold(theta_hat, lambda_over_L), theta_hat
    )
    return float(out) if out.ndim == 0 else out


def mcp_penalty(w, lambda_s, gamma):
    """Elementwise MCP value: lam|w| - w^2/(2 gamma), capped at gamma lam^2 / 2."""
    w = np.asarray(w, dtype=float)
    a = np.abs(w)
    out = np.where(
        a <= lambda_s * gamma,
        lambda_s * a - w * w / (2.0 * gamma),
        0.5 * gamma * lambda_s * lambda_s,
    )
    return float(out) if out.ndim == 0 else out


def _sparsity_value(w: np.ndarray, cfg: PenaltyConfig) -> float:
    if cfg.kind == KIND_L1:
        return float(cfg.lambda_s * np.abs(w).sum())
    return float(np.sum(mcp_penalty(w, cfg.lambda_s, cfg.gamma)))


def _fusion_value(w: np.ndarray, offsets, lambda_f: float) -> float:
    if lambda_f == 0.0 or w.size < 2:
        return 0.0
    diffs = np.abs(np.diff(w))
    # Differences straddling a block boundary do not count.
    boundary = np.asarray(offsets, dtype=int)[1:-1] - 1
    if boundary.size:
        diffs[boundary] = 0.0
    return lambda_f * float(diffs.sum())


def penalty_value(w: np.ndarray, offsets, cfg: PenaltyConfig) -> float:
    """Total regularizer h(w) + g(w) over a blocked weight vector.

    ``offsets`` holds the T+1 block boundaries; the fusion term sums absolute
    differences of adjacent weights inside each block (single-leaf blocks
    contribute nothing).
    """
    w = np.asarray(w, dtype=float)
    return _sparsity_value(w, cfg) + _fusion_value(w, offsets, cfg.lambda_f)


# ---------------------------------------------------------------------------
# Fused lasso signal approximation
# ---------------------------------------------------------------------------


def flsa(theta_hat, tau_f: float) -> np.ndarray:
    """Exact minimizer of (1/2)||t - theta_hat||^2 + tau_f * sum|t_{j+1} - t_j|.

    Forward-backward dynamic program over the piecewise-linear derivative of
    the partially minimized objective. The derivative is clamped to
    [-tau_f, tau_f] at each stage; the clamp points become back-pointers for
    the reverse pass. Worst-case linear time in the vector length.
    """
    y = np.asarray(theta_hat, dtype=float)
    n = y.size
    if n <= 1 or tau_f == 0.0 or np.all(y == y[0]):
        return y.copy()
    if tau_f < 0:
        raise InvalidConfigError(f"fusion weight must be >= 0, got {tau_f}")
    lam = float(tau_f)

    # Knot positions with (slope, intercept) deltas accumulated when scanning
    # inward; (afirst, bfirst) is the leftmost linear piece of the current
    # derivative and (alast, blast) its negated rightmost piece.
    x = np.empty(2 * n)
    a = np.empty(2 * n)
    b = np.empty(2 * n)
    tm = np.empty(n - 1)
    tp = np.empty(n - 1)

    tm[0] = y[0] - lam
    tp[0] = y[0] + lam
    lo_idx = n - 1
    hi_idx = n
    x[lo_idx] = tm[0]
    x[hi_idx] = tp[0]
    a[lo_idx] = 1.0
    b[lo_idx] = -y[0] + lam
    a[hi_idx] = -1.0
    b[hi_idx] = y[0] + lam
    afirst, bfirst = 1.0, -lam - y[1]
    alast, blast = -1.0, -lam + y[1]

    for k in range(1, n - 1):
        # Walk right from the leftmost piece until the derivative exceeds -lam.
        alo, blo = afirst, bfirst
        i = lo_idx
        while i <= hi_idx and alo * x[i] + blo <= -lam:
            alo += a[i]
            blo += b[i]
            i += 1
        tm[k] = (-lam - blo) / alo
        lo_idx = i - 1
        x[lo_idx] = tm[k]

        # Walk left from the rightmost piece until the derivative drops below lam.
        ahi, bhi = alast, blast
        i = hi_idx
        while i >= lo_idx and -(ahi * x[i] + bhi) >= lam:
            ahi += a[i]
            bhi += b[i]
            i -= 1
        tp[k] = (lam + bhi) / (-ahi)
        hi_idx = i + 1
        x[hi_idx] = tp[k]

        a[lo_idx] = alo
        b[lo_idx] = blo + lam
        a[hi_idx] = ahi
        b[hi_idx] = bhi + lam
        afirst, bfirst = 1.0, -lam - y[k + 1]
        alast, blast = -1.0, -lam + y[k + 1]

    # Minimize the final message: find the root of its derivative.
    alo, blo = afirst, bfirst
    i = lo_idx
    while i <= hi_idx and alo * x[i] + blo <= 0.0:
        alo += a[i]
        blo += b[i]
        i += 1
    out = np.empty(n)
    out[n - 1] = -blo / alo
    for k in range(n - 2, -1, -1):
        out[k] = min(max(out[k + 1], tm[k]), tp[k])
    return out


# ---------------------------------------------------------------------------
# Block proximal operator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProxProblem:
    """One block's proximal subproblem at gradient-step point theta_hat.

    Minimize (L/2)||t - theta_hat||^2 + h(t) + g(t) where L is the block's
    gradient Lipschitz constant (step_scale).
    """

    theta_hat: np.ndarray
    step_scale: float
    config: PenaltyConfig

    def __post_init__(self):
        if not self.step_scale > 0:
            raise InvalidConfigError(f"step_scale must be > 0, got {self.step_scale}")


def prox_objective(theta: np.ndarray, problem: ProxProblem) -> float:
    """Subproblem objective value at a candidate point."""
    theta = np.asarray(theta, dtype=float)
    diff = theta - problem.theta_hat
    quad = 0.5 * problem.step_scale * float(diff @ diff)
    offsets = (0, theta.size)
    return quad + penalty_value(theta, offsets, problem.config)


def exact_mcp_prox(theta_hat, lambda_s: float, gamma: float, L) -> np.ndarray:
    """Exact elementwise minimizer of (L/2)(t - x)^2 + MCP(t; lambda_s, gamma).

    ``L`` may be a scalar or a per-coordinate array. Evaluates the stationary
    point of each quadratic piece plus the region boundaries and keeps the
    best, which also covers the nonconvex case gamma * L <= 1 where the
    inner piece has no interior minimum.
    """
    x = np.asarray(theta_hat, dtype=float)
    L = np.broadcast_to(np.asarray(L, dtype=float), x.shape)
    s = np.sign(x)
    ax = np.abs(x)
    bound = lambda_s * gamma

    inner_curv = L - 1.0 / gamma
    safe = np.where(inner_curv > 0, inner_curv, 1.0)
    t_inner = np.where(inner_curv > 0, np.clip((L * ax - lambda_s) / safe, 0.0, bound), 0.0)
    candidates = np.stack(
        [np.zeros_like(ax), t_inner, np.full_like(ax, bound), np.maximum(ax, bound)]
    )

    def value(t):
        return 0.5 * L * (t - ax) ** 2 + mcp_penalty(t, lambda_s, gamma)

    vals = value(candidates)
    low = vals.min(axis=0)
    best = candidates[np.argmin(vals, axis=0), np.arange(ax.size)]
    # Prefer an exact zero on ties so sparsity is reproducible.
    best = np.where(vals[0] <= low, 0.0, best)
    return s * best


def _threshold(theta: np.ndarray, cfg: PenaltyConfig, L: float) -> np.ndarray:
    if cfg.kind == KIND_L1:
        return soft_threshold(theta, cfg.lambda_s / L)
    return mcp_threshold(theta, cfg.lambda_s / L, cfg.gamma)


def prox(problem: ProxProblem) -> np.ndarray:
    """Solve the block proximal subproblem.

    The fused part is handled first by FLSA at weight lambda_f / L, then the
    sparsity thresholding is applied elementwise at lambda_s / L. With the L1
    penalty this composition is the exact minimizer. With MCP the subproblem
    is nonconvex, so several candidates are compared on the subproblem
    objective and the best kept: the composed operator, the thresholding of
    theta_hat directly, exact scalar MCP proximal solutions of both, and
    theta_hat itself. The returned point therefore never has a larger
    subproblem objective than theta_hat.
    """
    cfg = problem.config
    L = problem.step_scale
    theta_hat = np.asarray(problem.theta_hat, dtype=float)
    fused = flsa(theta_hat, cfg.lambda_f / L) if cfg.lambda_f > 0 else theta_hat

    if cfg.kind == KIND_L1:
        return soft_threshold(fused, cfg.lambda_s / L)

    candidates = [_threshold(fused, cfg, L), exact_mcp_prox(fused, cfg.lambda_s, cfg.gamma, L)]
    if cfg.lambda_f > 0:
        candidates.append(_threshold(theta_hat, cfg, L))
        candidates.append(exact_mcp_prox(theta_hat, cfg.lambda_s, cfg.gamma, L))
        candidates.append(theta_hat.copy())
    best = candidates[0]
    best_value = prox_objective(best, problem)
    for cand in candidates[1:]:
        v = prox_objective(cand, problem)
        if v < best_value:
            best, best_value = cand, v
    return np.asarray(best, dtype=float)


# ---------------------------------------------------------------------------
# Subgradients and steepest directions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SubgradientInterval:
    lo: float
    hi: float

    def __post_init__(self):
        if self.lo > self.hi:
            raise InvalidConfigError(f"interval [{self.lo}, {self.hi}] is empty")


@dataclass(frozen=True)
class NeighborContext:
    """Adjacent-difference context of one coordinate inside its block.

    ``left_diff`` is w_j - w_{j-1} and ``right_diff`` is w_{j+1} - w_j; each
    is None when the coordinate sits on that boundary of the block. A block
    with a single leaf has neither neighbor.
    """

    left_diff: float | None = None
    right_diff: float | None = None


def neighbor_context(w_block: np.ndarray, j: int) -> NeighborContext:
    left = float(w_block[j] - w_block[j - 1]) if j > 0 else None
    right = float(w_block[j + 1] - w_block[j]) if j < len(w_block) - 1 else None
    return NeighborContext(left_diff=left, right_diff=right)


def subgradient_interval(
    w_j: float, context: NeighborContext, cfg: PenaltyConfig
) -> SubgradientInterval:
    """Decoupled per-coordinate subdifferential of the total penalty.

    Minkowski sum of the sparsity subdifferential at w_j and, per adjacent
    difference, either the signed fusion slope (difference nonzero) or the
    full interval [-lambda_f, lambda_f] (difference zero). The coupling of
    the shared fusion multiplier between adjacent zero differences is
    deliberately dropped; the result over-approximates the true
    subdifferential, which only ever shrinks the steepest direction used to
    prioritize blocks.
    """
    lam_s, lam_f = cfg.lambda_s, cfg.lambda_f
    if w_j == 0.0:
        lo, hi = -lam_s, lam_s
    elif cfg.kind == KIND_L1:
        lo = hi = lam_s * np.sign(w_j)
    elif abs(w_j) > lam_s * cfg.gamma:
        lo = hi = 0.0
    else:
        lo = hi = lam_s * np.sign(w_j) - w_j / cfg.gamma

    for diff, orientation in ((context.left_diff, 1.0), (context.right_diff, -1.0)):
        if diff is None:
            continue
        if diff != 0.0:
            point = lam_f * orientation * np.sign(diff)
            lo += point
            hi += point
        else:
            lo -= lam_f
            hi += lam_f
    return SubgradientInterval(float(lo), float(hi))


def steepest_coordinate(grad_j: float, interval: SubgradientInterval) -> float:
    """Minimal-magnitude composite direction: distance from -grad_j to the interval."""
    target = -grad_j
    if target < interval.lo:
        return grad_j + interval.lo
    if target > interval.hi:
        return grad_j + interval.hi
    return 0.0


def steepest_direction(w_block: np.ndarray, grad_block: np.ndarray, cfg: PenaltyConfig) -> np.ndarray:
    """Vectorized steepest direction for a whole block (see subgradient_interval)."""
    w = np.asarray(w_block, dtype=float)
    g = np.asarray(grad_block, dtype=float)
    lam_s, lam_f = cfg.lambda_s, cfg.lambda_f

    if cfg.kind == KIND_L1:
        point = lam_s * np.sign(w)
    else:
        point = np.where(np.abs(w) > lam_s * cfg.gamma, 0.0, lam_s * np.sign(w) - w / cfg.gamma)
    at_zero = w == 0.0
    lo = np.where(at_zero, -lam_s, point)
    hi = np.where(at_zero, lam_s, point)

    if lam_f > 0 and w.size > 1:
        d = np.diff(w)
        nonzero = d != 0.0
        signed = lam_f * np.sign(d)
        lo[1:] += np.where(nonzero, signed, -lam_f)
        hi[1:] += np.where(nonzero, signed, lam_f)
        lo[:-1] += np.where(nonzero, -signed, -lam_f)
        hi[:-1] += np.where(nonzero, -signed, lam_f)

    target = -g
    return np.where(target < lo, g + lo, np.where(target > hi, g + hi, 0.0))
