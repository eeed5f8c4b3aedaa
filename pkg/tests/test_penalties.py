import numpy as np
import pytest

from rulefuse import InvalidConfigError, PenaltyConfig, ProxProblem
from rulefuse.penalties import (
    NeighborContext,
    SubgradientInterval,
    exact_mcp_prox,
    flsa,
    mcp_penalty,
    mcp_threshold,
    neighbor_context,
    penalty_value,
    prox,
    prox_objective,
    soft_threshold,
    steepest_coordinate,
    steepest_direction,
    subgradient_interval,
)


def grid_minimum(problem: ProxProblem, step=0.02):
    """Brute-force subproblem minimum over a per-coordinate grid.

    For lengths 1-3 the chain structure lets the minimization run as a
    sequence of pairwise table reductions, which equals the full grid search
    exactly but stays cheap.
    """
    th = problem.theta_hat
    axis = np.arange(th.min() - 1.0, th.max() + 1.0 + step / 2, step)
    L, cfg = problem.step_scale, problem.config

    def q(j):
        vals = 0.5 * L * (axis - th[j]) ** 2
        if cfg.kind == "l1":
            return vals + cfg.lambda_s * np.abs(axis)
        return vals + mcp_penalty(axis, cfg.lambda_s, cfg.gamma)

    if th.size == 1:
        return float(q(0).min())
    fuse = cfg.lambda_f * np.abs(axis[None, :] - axis[:, None])
    acc = q(0)
    for j in range(1, th.size):
        acc = (acc[:, None] + fuse).min(axis=0) + q(j)
    return float(acc.min())


class TestPenaltyValue:
    def test_zero_weights(self):
        cfg = PenaltyConfig("mcp", lambda_s=1.0, gamma=2.0, lambda_f=1.0)
        assert penalty_value(np.zeros(6), (0, 3, 6), cfg) == 0.0

    def test_mcp_saturates(self):
        cfg = PenaltyConfig("mcp", lambda_s=0.7, gamma=3.0)
        w = np.array([0.7 * 3.0 + 1.0])  # beyond lambda_s * gamma
        assert penalty_value(w, (0, 1), cfg) == pytest.approx(0.5 * 3.0 * 0.7**2)

    def test_fusion_hand_example(self):
        cfg = PenaltyConfig("l1", lambda_s=0.0, lambda_f=2.0)
        assert penalty_value(np.array([1.0, -1.0]), (0, 2), cfg) == pytest.approx(4.0)

    def test_single_leaf_trees_contribute_no_fusion(self):
        cfg = PenaltyConfig("l1", lambda_s=0.0, lambda_f=5.0)
        w = np.array([3.0, -2.0, 1.0])
        assert penalty_value(w, (0, 1, 2, 3), cfg) == 0.0

    def test_tree_order_invariance(self, rng):
        cfg = PenaltyConfig("mcp", lambda_s=0.4, gamma=1.5, lambda_f=0.8)
        w1, w2 = rng.normal(size=4), rng.normal(size=5)
        a = penalty_value(np.concatenate([w1, w2]), (0, 4, 9), cfg)
        b = penalty_value(np.concatenate([w2, w1]), (0, 5, 9), cfg)
        assert a == pytest.approx(b)

    def test_leaf_order_affects_only_fusion(self, rng):
        w = rng.normal(size=6)
        perm = rng.permutation(6)
        plain = PenaltyConfig("l1", lambda_s=0.9, lambda_f=0.0)
        assert penalty_value(w, (0, 6), plain) == pytest.approx(penalty_value(w[perm], (0, 6), plain))


class TestThresholds:
    def test_soft_examples(self):
        assert soft_threshold(2.0, 0.5) == pytest.approx(1.5)
        assert soft_threshold(-0.3, 0.5) == 0.0
        assert soft_threshold(1.234, 0.0) == 1.234

    def test_mcp_examples(self):
        assert mcp_threshold(3.0, 1.0, 2.0) == pytest.approx(3.0)
        assert mcp_threshold(1.5, 1.0, 2.0) == pytest.approx(1.0)
        assert mcp_threshold(0.5, 1.0, 2.0) == 0.0

    def test_mcp_examples_match_scalar_grid(self):
        # 1-d minimization of (L/2)(t - x)^2 + MCP(t) at step 1e-4, L = 1.
        grid = np.arange(-6, 6, 1e-4)
        for x in (3.0, 1.5, 0.5):
            vals = 0.5 * (grid - x) ** 2 + mcp_penalty(grid, 1.0, 2.0)
            best = grid[np.argmin(vals)]
            assert mcp_threshold(x, 1.0, 2.0) == pytest.approx(best, abs=2e-4)

    def test_mcp_continuous_at_branch(self):
        lam, gamma = 0.8, 1.7
        edge = lam * gamma
        lo = mcp_threshold(edge - 1e-12, lam, gamma)
        hi = mcp_threshold(edge + 1e-12, lam, gamma)
        assert lo == pytest.approx(hi, abs=1e-9)

    def test_gamma_must_exceed_one(self):
        with pytest.raises(InvalidConfigError):
            mcp_threshold(1.0, 1.0, 1.0)

    def test_large_gamma_matches_soft(self, rng):
        x = rng.uniform(-3, 3, 1000)
        lam = 0.9
        np.testing.assert_allclose(
            mcp_threshold(x, lam, 1e6), soft_threshold(x, lam), atol=1e-5
        )

    def test_gamma_near_one_is_hard_threshold(self, rng):
        lam, gamma = 1.0, 1.0001
        x = rng.uniform(-3, 3, 2000)
        band = np.abs(np.abs(x) - lam * (1 + (gamma - 1) / 2)) > 5e-4 * lam
        x = x[band]
        hard = np.where(np.abs(x) > lam * gamma, x, 0.0)
        got = mcp_threshold(x, lam, gamma)
        np.testing.assert_allclose(got, hard, atol=2e-4)

    def test_exact_mcp_prox_beats_grid(self, rng):
        grid = np.arange(-5, 5, 1e-3)
        for _ in range(60):
            x = rng.uniform(-2.5, 2.5)
            lam = rng.uniform(0, 2)
            gamma = rng.choice([1.1, 2.0, 10.0])
            L = rng.uniform(0.3, 4.0)
            got = float(exact_mcp_prox(np.array([x]), lam, gamma, L)[0])
            obj = lambda t: 0.5 * L * (t - x) ** 2 + mcp_penalty(t, lam, gamma)
            assert obj(got) <= obj(grid).min() + 1e-6


class TestFlsa:
    def test_constant_vector_unchanged(self):
        v = np.full(7, 2.3)
        np.testing.assert_array_equal(flsa(v, 5.0), v)

    def test_two_point_fuse_to_mean(self):
        np.testing.assert_allclose(flsa(np.array([1.0, -1.0]), 1.0), [0.0, 0.0], atol=1e-15)

    def test_two_point_shift(self):
        np.testing.assert_allclose(flsa(np.array([3.0, 1.0]), 0.5), [2.5, 1.5], atol=1e-15)

    def test_two_point_closed_form_random(self, rng):
        for _ in range(1000):
            a, b = rng.uniform(-5, 5, 2)
            tau = rng.uniform(0, 3)
            got = flsa(np.array([a, b]), tau)
            if abs(b - a) <= 2 * tau:
                want = np.array([(a + b) / 2] * 2)
            else:
                shift = tau * np.sign(b - a)
                want = np.array([a + shift, b - shift])
            np.testing.assert_allclose(got, want, atol=1e-12)

    def test_length_six_grid_oracle(self, rng):
        step = 0.01
        for _ in range(40):
            y = rng.uniform(-2, 2, 6)
            tau = rng.uniform(0, 1.5)
            out = flsa(y, tau)

            def objective(t):
                return 0.5 * np.sum((t - y) ** 2) + tau * np.sum(np.abs(np.diff(t)))

            # chain-structured exact grid minimization
            axis = np.arange(y.min() - 1, y.max() + 1 + step / 2, step)
            fuse = tau * np.abs(axis[None, :] - axis[:, None])
            acc = 0.5 * (axis - y[0]) ** 2
            for j in range(1, 6):
                acc = (acc[:, None] + fuse).min(axis=0) + 0.5 * (axis - y[j]) ** 2
            assert objective(out) <= acc.min() + 1e-3

    def test_nonexpansive(self, rng):
        for _ in range(1000):
            n = int(rng.integers(2, 25))
            a = rng.normal(0, 2, n)
            b = a + rng.normal(0, 0.5, n)
            tau = rng.uniform(0, 2)
            lhs = np.linalg.norm(flsa(a, tau) - flsa(b, tau))
            assert lhs <= np.linalg.norm(a - b) + 1e-10

    def test_kkt_certificate(self, rng):
        # theta - theta_hat + tau * D^T s = 0 with s in the sign subdifferential
        for _ in range(300):
            n = int(rng.integers(2, 60))
            y = rng.normal(0, 2, n)
            tau = rng.uniform(1e-3, 2)
            t = flsa(y, tau)
            s = np.cumsum(t - y) / tau
            assert np.all(np.abs(s[:-1]) <= 1 + 1e-8)
            assert abs(s[-1]) < 1e-8
            d = np.diff(t)
            live = d != 0
            np.testing.assert_allclose(s[:-1][live], np.sign(d[live]), atol=1e-8)


class TestProx:
    def test_no_penalty_is_identity(self, rng):
        th = rng.normal(size=5)
        p = ProxProblem(th, 2.0, PenaltyConfig("l1", lambda_s=0.0, lambda_f=0.0))
        np.testing.assert_array_equal(prox(p), th)

    def test_l1_fusion_composition_example(self):
        p = ProxProblem(
            np.array([3.0, 1.0]), 1.0, PenaltyConfig("l1", lambda_s=1.0, lambda_f=0.5)
        )
        np.testing.assert_allclose(prox(p), [1.5, 0.5], atol=1e-12)

    @pytest.mark.parametrize("kind", ["l1", "mcp"])
    def test_small_blocks_beat_grid(self, kind, rng):
        for _ in range(120):
            n = int(rng.integers(1, 4))
            th = rng.uniform(-1.5, 1.5, n)
            cfg = PenaltyConfig(
                kind,
                lambda_s=float(rng.uniform(0, 2)),
                gamma=float(rng.choice([1.1, 2.0, 10.0])),
                lambda_f=float(rng.uniform(0, 2)),
            )
            problem = ProxProblem(th, float(rng.uniform(0.5, 4.0)), cfg)
            out = prox(problem)
            assert prox_objective(out, problem) <= grid_minimum(problem) + 1e-3

    def test_never_worse_than_input(self, rng):
        for _ in range(400):
            n = int(rng.integers(1, 6))
            th = rng.normal(0, 2, n)
            cfg = PenaltyConfig(
                "mcp",
                lambda_s=float(rng.uniform(0, 2)),
                gamma=float(rng.uniform(1.05, 5)),
                lambda_f=float(rng.uniform(0, 2)),
            )
            problem = ProxProblem(th, float(rng.uniform(0.2, 5)), cfg)
            out = prox(problem)
            base = penalty_value(th, (0, n), cfg)
            assert prox_objective(out, problem) <= base + 1e-12


class TestSubgradients:
    def test_l1_zero_coordinate(self):
        cfg = PenaltyConfig("l1", lambda_s=1.3, lambda_f=0.0)
        got = subgradient_interval(0.0, NeighborContext(), cfg)
        assert (got.lo, got.hi) == (-1.3, 1.3)

    def test_mcp_beyond_cap_is_flat(self):
        cfg = PenaltyConfig("mcp", lambda_s=1.0, gamma=2.0, lambda_f=0.0)
        got = subgradient_interval(2.5, NeighborContext(), cfg)
        assert (got.lo, got.hi) == (0.0, 0.0)

    def test_mcp_inner_slope(self):
        cfg = PenaltyConfig("mcp", lambda_s=1.0, gamma=2.0, lambda_f=0.0)
        got = subgradient_interval(1.0, NeighborContext(), cfg)
        assert got.lo == got.hi == pytest.approx(1.0 - 0.5)

    def test_interior_zero_with_fused_neighbors(self):
        cfg = PenaltyConfig("mcp", lambda_s=0.7, gamma=2.0, lambda_f=0.4)
        got = subgradient_interval(0.0, NeighborContext(left_diff=0.0, right_diff=0.0), cfg)
        assert (got.lo, got.hi) == pytest.approx((-0.7 - 0.8, 0.7 + 0.8))

    def test_signed_fusion_contribution(self):
        cfg = PenaltyConfig("l1", lambda_s=0.0, lambda_f=1.0)
        # rising left difference adds +1, rising right difference adds -1
        got = subgradient_interval(2.0, NeighborContext(left_diff=1.0, right_diff=1.0), cfg)
        assert (got.lo, got.hi) == (0.0, 0.0)
        got = subgradient_interval(2.0, NeighborContext(left_diff=1.0, right_diff=None), cfg)
        assert (got.lo, got.hi) == (1.0, 1.0)

    def test_steepest_examples(self):
        assert steepest_coordinate(2.5, SubgradientInterval(-1, 1)) == pytest.approx(1.5)
        assert steepest_coordinate(0.5, SubgradientInterval(-1, 1)) == 0.0
        assert steepest_coordinate(0.77, SubgradientInterval(0, 0)) == pytest.approx(0.77)

    def test_vectorized_matches_scalar(self, rng):
        for kind in ("l1", "mcp"):
            for _ in range(50):
                n = int(rng.integers(1, 9))
                w = np.where(rng.uniform(size=n) < 0.4, 0.0, rng.normal(0, 1, n))
                # force some exact fusings
                if n > 2:
                    w[1] = w[2]
                g = rng.normal(0, 2, n)
                cfg = PenaltyConfig(
                    kind,
                    lambda_s=float(rng.uniform(0, 2)),
                    gamma=float(rng.uniform(1.05, 4)),
                    lambda_f=float(rng.uniform(0, 2)),
                )
                vec = steepest_direction(w, g, cfg)
                scalar = np.array(
                    [
                        steepest_coordinate(
                            g[j], subgradient_interval(w[j], neighbor_context(w, j), cfg)
                        )
                        for j in range(n)
                    ]
                )
                np.testing.assert_allclose(vec, scalar, atol=1e-12)

    def test_zero_direction_iff_stationary(self, rng):
        cfg = PenaltyConfig("l1", lambda_s=1.0, lambda_f=0.0)
        # gradient inside the subdifferential at zero -> no direction
        assert steepest_coordinate(0.9, SubgradientInterval(-1, 1)) == 0.0
        # outside -> nonzero signed distance
        assert steepest_coordinate(-1.2, SubgradientInterval(-1, 1)) == pytest.approx(-0.2)
