"""Limit-uniform and invasion splits, KL divergence and the theorem predicate."""

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gwinvasion.measures import (P_BOUNDARY_P1_ZERO, InconclusiveEstimate, ac_diagnostic, kl_X,
                                 main_theorem_condition, p1_boundary, qtilde, qtilde_quadrature, sandwich_check,
                                 split_p, split_q_mc)
from gwinvasion.offspring import OffspringDistribution
from gwinvasion.survival import SurvivalSolver
from gwinvasion.tree import TreeArena

Z2 = OffspringDistribution.deterministic(2)
Z3 = OffspringDistribution.deterministic(3)
Z12 = OffspringDistribution.two_point(0.4)
S2, S3, S12 = SurvivalSolver(Z2), SurvivalSolver(Z3), SurvivalSolver(Z12)


def _binary_root(seed0):
    """First Z in {1, 2} tree seed whose root has two children."""
    s = seed0
    while TreeArena(Z12, s).deg[0] != 2:
        s += 1
    return TreeArena(Z12, s)


class TestLimitUniform:
    """W-ratio splits."""

    def test_regular(self):
        assert list(split_p(TreeArena(Z2, 0), 0)) == [0.5, 0.5]

    def test_sums_to_one(self):
        a = TreeArena(Z12, 3)
        a.expand_to_depth(0, 4)
        for v in range(len(a)):
            p = split_p(a, v, proxy_depth=12)
            assert abs(p.sum() - 1.0) < 1e-12 and np.all(p > 0)

    def test_depth_stability(self):
        a = TreeArena(Z12, 5)
        nodes = a.expand_to_depth(0, 9)[:500]
        gaps = [np.max(np.abs(split_p(a, v, 20) - split_p(a, v, 25))) for v in nodes if a.deg[v] > 1]
        assert np.quantile(gaps, 0.95) < 0.01


class TestInvasionSplit:
    """Monte Carlo q and conditional q~."""

    def test_regular_q(self):
        est = split_q_mc(TreeArena(Z3, 1), 0, 90, S3, seed=2)
        assert est.q_hat.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(np.abs(est.q_hat - 1 / 3) <= 3 * est.q_se)
        assert est.certification_rate >= 0.8
        assert abs(est.X_hat) <= 3 * kl_X(est).se + (3 - 1) / (2 * est.passing)

    def test_regular_qtilde(self):
        cs = qtilde(TreeArena(Z3, 4), 0, 0.5, 90, S3, seed=5)
        assert cs.q.sum() == pytest.approx(1.0)
        assert np.all(np.abs(cs.q - 1 / 3) <= 3 * cs.se)
        assert cs.accepted + cs.rejected + cs.ambiguous == cs.replicates

    def test_vacuous_conditioning(self):
        a = _binary_root(10)
        q = split_q_mc(a, 0, 150, S12, seed=7)
        qt = qtilde(a, 0, 1.0, 150, S12, seed=8)
        assert np.all(np.abs(q.q_hat - qt.q) <= 3 * np.hypot(q.q_se, qt.se))

    def test_quadrature_agrees(self):
        a = _binary_root(20)
        p = 0.85
        quad = qtilde_quadrature(a, 0, p, S12, depth=14)
        mc = qtilde(a, 0, p, 150, S12, seed=3)
        assert quad.sum() == pytest.approx(1.0)
        assert np.all(np.abs(mc.q - quad) <= 3 * mc.se + 0.02)

    def test_domain(self):
        with pytest.raises(ValueError):
            qtilde(TreeArena(Z2, 0), 0, 0.5, 10, S2)
        with pytest.raises(ValueError):
            split_q_mc(TreeArena(Z2, 0), 0, 0, S2)

    def test_inconclusive(self):
        a = TreeArena(Z2, 0)
        with pytest.raises(InconclusiveEstimate) as err:
            split_q_mc(a, a.find((0,) * 12), 4, S2, max_steps=256)
        assert 0.0 <= err.value.rate < 0.8


class TestSandwich:
    """Survival-ratio bracket around q~."""

    def test_binary(self):
        rep = sandwich_check(TreeArena(Z2, 2), 0, 0.7, S2, replicates=150, seed=1)
        assert np.allclose(rep.ratio, 0.5) and rep.tolerance == 0.0
        assert not rep.violated
        assert np.all(rep.slack > -3 * rep.se)
        assert np.all(rep.A_lower_tight >= rep.A_lower - 1e-12)

    def test_random_trees(self):
        for s in range(4):
            rep = sandwich_check(_binary_root(100 * s), 0, 0.75, S12, replicates=80, seed=s)
            assert not rep.violated
            assert rep.g_node == pytest.approx(1 - np.prod(1 - 0.75 * rep.g_children))


class TestKL:
    """X and its quadratic bound."""

    def test_examples(self):
        r = kl_X(None, q=[0.6, 0.4], p=[0.5, 0.5])
        assert r.X == pytest.approx(0.6 * math.log(1.2) + 0.4 * math.log(0.8), abs=1e-15)
        assert r.bound == pytest.approx(0.04, abs=1e-15)
        assert r.within_bound
        assert kl_X(None, q=[0.3, 0.7], p=[0.3, 0.7]).X == 0.0

    def test_support_mismatch(self):
        r = kl_X(None, q=[0.5, 0.5], p=[1.0, 0.0])
        assert r.infinite and math.isinf(r.X)
        assert kl_X(None, q=[1.0, 0.0], p=[0.5, 0.5]).X == pytest.approx(math.log(2))

    @settings(max_examples=200, deadline=None)
    @given(st.integers(2, 6).flatmap(lambda k: st.tuples(
        st.lists(st.floats(0.0, 1.0), min_size=k, max_size=k),
        st.lists(st.floats(0.01, 1.0), min_size=k, max_size=k))))
    def test_nonnegative_and_bounded(self, qp):
        q, p = (np.array(v) for v in qp)
        if q.sum() == 0:
            return
        q, p = q / q.sum(), p / p.sum()
        r = kl_X(None, q=q, p=p, n=100)
        assert r.X >= 0.0
        assert r.X <= r.bound + 1e-12
        assert r.se >= 0.0


class TestDiagnostic:
    """Partial sums of E X along the backbone."""

    def test_regular_tree(self):
        trees, reps = 12, 40
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            ser = ac_diagnostic(Z3, 1, trees, reps, S3, seed=1, min_count=5)
        assert ser.truncated_at == 2 and ser.coverage[0] == 1.0
        # X of a multinomial split has spread sqrt(2 (k - 1)) / (2 c); the
        # empirical SE over a few trees understates it because X is skewed
        sd = math.sqrt(2 * 2) / (2 * reps)
        assert abs(ser.EX[0]) <= 3 * sd / math.sqrt(trees)
        assert np.allclose(ser.partial_sum, np.cumsum(ser.EX))
        assert ser.flattening()

    def test_errors(self):
        with pytest.raises(ValueError):
            ac_diagnostic(Z3, 2, 0, 10, S3)


class TestTheoremCondition:
    """Sufficient condition for absolute continuity."""

    @pytest.mark.parametrize("mu", [1.2, 1.5, 2.0, 3.0, 10.0])
    def test_infinite_moments_boundary(self, mu):
        assert abs(main_theorem_condition(math.inf, p1_boundary(mu), mu).margin) < 1e-9

    def test_no_ones_boundary(self):
        assert abs(main_theorem_condition(P_BOUNDARY_P1_ZERO, 0.0, 2.0).margin) < 1e-9
        assert P_BOUNDARY_P1_ZERO == pytest.approx(10.6235, abs=1e-4)

    def test_example(self):
        r = main_theorem_condition(12, 0.0, 3.0)
        assert r.holds and r.margin == -16.0 and r.q == 0.0

    @settings(max_examples=200)
    @given(st.floats(1.01, 50.0), st.floats(1e-6, 0.999))
    def test_infinite_moments_equivalence(self, mu, p1):
        b = p1_boundary(mu)
        if abs(p1 - b) < 1e-9 * max(b, 1e-12):
            return
        assert main_theorem_condition(math.inf, p1, mu).holds == (p1 < b)

    @settings(max_examples=200)
    @given(st.floats(2.0, 50.0), st.floats(1.01, 50.0))
    def test_no_ones_equivalence(self, p, mu):
        # second moments are always finite, so p >= 2 and only the larger root matters
        if abs(p - P_BOUNDARY_P1_ZERO) < 1e-9:
            return
        assert main_theorem_condition(p, 0.0, mu).holds == (p > P_BOUNDARY_P1_ZERO)

    def test_domain(self):
        with pytest.raises(ValueError):
            main_theorem_condition(4.0, 1.0, 2.0)
        with pytest.raises(ValueError):
            main_theorem_condition(4.0, 0.5, 1.0)
