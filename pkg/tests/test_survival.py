"""Annealed survival g, its derivative, quenched g_n and the resistance bound."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gwinvasion.offspring import OffspringDistribution
from gwinvasion.rng import generator
from gwinvasion.survival import (E_functional, SurvivalSolver, g_n, g_n_realized, resistance_upper_bound,
                                 stabilized_depth)
from gwinvasion.tree import TreeArena, level_structure

Z2 = OffspringDistribution.deterministic(2)
Z3 = OffspringDistribution.deterministic(3)
Z12 = OffspringDistribution.two_point(0.4)
S2, S3, S12 = SurvivalSolver(Z2), SurvivalSolver(Z3), SurvivalSolver(Z12)


class TestAnnealed:
    """g and g' against closed forms."""

    def test_binary_closed_form(self):
        assert S2.g(0.75) == pytest.approx(8 / 9, abs=1e-12)
        assert S2.g_prime(0.75) == pytest.approx((2 - 1.5) / 0.75**3, abs=1e-10)
        for p in np.linspace(0.51, 0.999, 50):
            assert abs(S2.g(p) - (2 * p - 1) / p**2) < 1e-10

    @pytest.mark.parametrize("s", [S2, S3, S12])
    def test_endpoints(self, s):
        assert s.g(s.p_c) == 0.0
        assert s.g(0.0) == 0.0
        assert s.g(1.0) == 1.0

    @pytest.mark.parametrize("s", [S2, S3, S12])
    def test_monotone_grid(self, s):
        g = [s.g(p) for p in np.linspace(0, 1, 100)]
        assert all(b >= a for a, b in zip(g, g[1:]))
        assert all(v == 0.0 for v, p in zip(g, np.linspace(0, 1, 100)) if p <= s.p_c)

    @settings(max_examples=50, deadline=None)
    @given(st.sampled_from([S2, S3, S12]), st.floats(0.0, 1.0))
    def test_fixed_point(self, s, t):
        p = s.p_c + t * (1.0 - s.p_c)
        v = s.g(p)
        assert 0.0 <= v <= 1.0
        assert s.residual(p, v) <= 1e-12

    @pytest.mark.parametrize("s", [S2, S3, S12])
    def test_finite_differences(self, s):
        h = 1e-4
        for p in (s.p_c + 0.05, 0.6, 0.8):
            if p <= s.p_c + 2 * h:
                continue
            fd = (s.g(p + h) - s.g(p - h)) / (2 * h)
            assert abs(s.g_prime(p) - fd) < 10 * h * h * max(1.0, s.consts.K) * 100

    @pytest.mark.parametrize("s,K,tol", [(S2, 8.0, 1e-3), (S3, 9.0, 2e-3)])
    def test_K_limit(self, s, K, tol):
        assert s.consts.K == pytest.approx(K)
        assert abs(s.g_prime(s.p_c + 1e-5) - K) < tol
        gaps = [abs(s.g_prime(s.p_c + 10.0**-k) - K) for k in range(2, 7)]
        assert all(b < a for a, b in zip(gaps, gaps[1:]))

    def test_domain(self):
        with pytest.raises(ValueError):
            S2.g(1.2)
        with pytest.raises(ValueError):
            S2.g_prime(0.5)

    @pytest.mark.parametrize("s", [S2, S3, S12])
    def test_tables(self, s):
        p = np.linspace(s.p_c + 1e-4, 0.999, 97)
        exact = np.array([s.g(x) for x in p])
        assert np.max(np.abs(s.g_table(p) / exact - 1)) < 1e-5
        y = np.linspace(0.01, 0.99, 50)
        assert np.max(np.abs([s.g(x) for x in s.g_inverse(y)] - y)) < 1e-5
        assert s.g(s.g_inverse_exact(0.3)) == pytest.approx(0.3, abs=1e-12)


class TestQuenched:
    """g_n recursion on realized prefixes."""

    def test_depth_zero(self):
        a = TreeArena(Z12, 1)
        assert g_n(a, 0.7, S12, 0) == S12.g(0.7)

    def test_binary_depth_one(self):
        assert g_n(TreeArena(Z2, 0), 0.75, S2, 1) == pytest.approx(8 / 9, abs=1e-12)
        assert g_n(TreeArena(Z2, 0), 0.75, S2, 6) == pytest.approx(8 / 9, abs=1e-12)

    def test_realized_matches_vectorized(self):
        a = TreeArena(Z12, 4)
        a.expand_to_depth(0, 8)
        assert g_n_realized(a, 0, 0.7, S12.g(0.7), 8) == pytest.approx(g_n(a, 0.7, S12, 8), abs=1e-14)
        b = TreeArena(Z12, 4)
        with pytest.raises(ValueError):
            g_n_realized(b, 0, 0.7, S12.g(0.7), 3)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10**6), st.floats(0.65, 0.99), st.integers(1, 10))
    def test_unit_interval(self, seed, p, n):
        v = g_n(TreeArena(Z12, seed), p, S12, n)
        assert 0.0 <= v <= 1.0

    def test_percolation_oracle(self):
        # open clusters through the first n generations, fresh survival below them
        a = TreeArena(Z12, 7)
        n, p, draws = 12, 0.75, 10_000
        lv = level_structure(a, n)
        gen = generator(3)
        alive = np.ones((draws, 1), dtype=bool)
        for k in range(1, n + 1):
            par = np.repeat(alive, lv.deg[k - 1], axis=1)
            alive = par & (gen.random(par.shape) <= p)
        survive = (alive & (gen.random(alive.shape) < S12.g(p))).any(axis=1)
        assert abs(survive.mean() - g_n(a, p, S12, n)) < 0.02

    def test_exponential_closeness(self):
        seeds = range(200)
        for p in (0.7, 0.8):
            q95 = []
            for n in (4, 8, 12):
                gaps = [abs(g_n(TreeArena(Z12, s), p, S12, n) - g_n(TreeArena(Z12, s), p, S12, n + 4)) for s in seeds]
                q95.append(np.quantile(gaps, 0.95))
            assert q95[0] > q95[1] > q95[2]


class TestBounds:
    """Resistance bound and the E functional."""

    def test_binary_bound(self):
        assert resistance_upper_bound(TreeArena(Z2, 0), 0.1, 10) == pytest.approx(1.0, abs=1e-12)
        assert resistance_upper_bound(TreeArena(Z2, 0), 1e-8, 10) < 1e-6
        with pytest.raises(ValueError):
            resistance_upper_bound(TreeArena(Z2, 0), 0.6, 10)

    def test_bound_dominates(self):
        for seed in range(20):
            a = TreeArena(Z12, seed)
            for eps in (0.01, 0.05, 0.1, 0.2):
                assert resistance_upper_bound(a, eps, 14) >= g_n(a, S12.p_c + eps, S12, 14)

    def test_E_binary(self):
        assert abs(E_functional(TreeArena(Z2, 0), 0.05, S2, depth=20)) < 0.05
        with pytest.raises(ValueError):
            E_functional(TreeArena(Z2, 0), 0.0, S2)

    def test_E_trend(self):
        def med(eps):
            return np.median([abs(E_functional(TreeArena(Z12, s), eps, S12, depth=18)) for s in range(300)])

        assert med(0.02) < med(0.1)

    def test_stabilized_depth(self):
        n = stabilized_depth(0.6, 2.0)
        assert 2.0**n * 0.6 ** (2 * n) < 1e-6
        assert stabilized_depth(0.9, 2.0) == 60
