"""Invasion runs, certified backbones, pivots and dual pivots."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gwinvasion.invasion import (CertificationPolicy, InvasionRun, backbone, certified_backbone, completed_backbone,
                                 dual_pivots, invade, pivot_beta, sample_pivot)
from gwinvasion.offspring import OffspringDistribution
from gwinvasion.survival import SurvivalSolver
from gwinvasion.tree import TreeArena

Z2 = OffspringDistribution.deterministic(2)
Z12 = OffspringDistribution.two_point(0.4)
S2, S12 = SurvivalSolver(Z2), SurvivalSolver(Z12)


class TestInvade:
    """The greedy growth rule."""

    def test_first_step(self):
        a = TreeArena(Z2, 11)
        run = invade(a, 1)
        kids = list(a.expand(0))
        assert run.invaded[1] == min(kids, key=a.u.__getitem__)
        assert run.weights[1] == min(a.u[c] for c in kids)

    def test_steps(self):
        with pytest.raises(ValueError):
            invade(TreeArena(Z2, 0), 0)
        assert invade(TreeArena(Z2, 0), 37).step_count == 37

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 2**40), st.sampled_from([Z2, Z12]))
    def test_heap_exhaustive(self, seed, dist):
        a = TreeArena(dist, seed)
        run = invade(a, 1000)
        inside = {0}
        for t in range(1, 1001):
            frontier = [c for v in inside for c in a.expand(v) if c not in inside]
            best = min(frontier, key=lambda c: (a.u[c], c))
            assert run.invaded[t] == best
            inside.add(best)
        assert len(set(run.invaded)) == 1001
        assert all(a.parent[v] in inside for v in run.invaded[1:])
        assert not inside & {v for _, v in run.boundary}

    def test_resume_equals_single_run(self):
        a, b = TreeArena(Z12, 4), TreeArena(Z12, 4)
        r1 = invade(a, 3000)
        r2 = InvasionRun(b).extend(1000).extend(2000)
        assert r1.invaded == r2.invaded

    def test_heavy_weights_stop(self):
        stopped = sum(invade(TreeArena(Z2, s), 10_000).exceedances(0.6, start=5001) == 0 for s in range(40))
        assert stopped >= 39

    def test_self_organized_criticality(self):
        hits = 0
        for s in range(10):
            w = invade(TreeArena(Z2, s), 100_000).weights[50_000:]
            hits += abs(max(w) - 0.5) <= 0.01
        assert hits >= 9


class TestBackbone:
    """Certified prefixes."""

    def test_path_valid(self):
        run = invade(TreeArena(Z2, 3), 20_000)
        tr = backbone(run, S2)
        a = run.arena
        assert tr.certified_len > 0
        assert all(a.parent[y] == x for x, y in zip(tr.path, tr.path[1:]))
        assert np.all(tr.beta_lower <= tr.beta_upper)
        assert np.all(tr.risk[1:] <= CertificationPolicy().risk)

    def test_too_short(self):
        tr = backbone(invade(TreeArena(Z2, 3), 1), S2)
        assert tr.certified_len == 0 and tr.diagnostic

    def test_stable_under_longer_runs(self):
        for s in range(15):
            a = TreeArena(Z12, s)
            run = invade(a, 5000)
            short = backbone(run, S12).path
            run.extend(45_000)
            long = backbone(run, S12).path
            assert long[: len(short)] == short

    def test_pivots_bound_invaded_weights(self):
        run = invade(TreeArena(Z2, 8), 30_000)
        tr = backbone(run, S2)
        a = run.arena
        on_path = {v: i for i, v in enumerate(tr.path)}
        top = {}

        def deepest(v):
            # index of the deepest path vertex strictly above v
            x, seen = a.parent[v], []
            while x not in on_path and x not in top:
                seen.append(x)
                x = a.parent[x]
            k = on_path[x] if x in on_path else top[x]
            for y in seen:
                top[y] = k
            return k

        inside = np.full(len(tr.path), -np.inf)
        for v, w in zip(run.invaded[1:], run.weights[1:]):
            k = deepest(v)
            inside[: k + 1] = np.maximum(inside[: k + 1], w)
        assert np.all(inside <= tr.beta_upper)
        assert np.allclose(inside, tr.beta_lower)

    def test_certified_length_reached(self):
        run, tr = certified_backbone(TreeArena(Z2, 1), S2, 30)
        assert tr.certified_len >= 30

    def test_completed_extends_certified(self):
        for s in range(10):
            run = invade(TreeArena(Z12, s), 20_000)
            tr = backbone(run, S12)
            cb = completed_backbone(run, S12)
            assert cb.path[: len(tr.path)] == tr.path
            assert np.all(cb.beta[: len(tr.path)] >= tr.beta_lower - 1e-15)
            assert np.all(cb.beta[: len(tr.path)] <= tr.beta_upper + 1e-15)
            assert np.all(cb.h <= cb.h_star + 1e-15)
            assert np.all(np.diff(cb.dual) <= 0)

    def test_completed_greedy_rule(self):
        run = invade(TreeArena(Z2, 2), 10_000)
        cb = completed_backbone(run, S2)
        a = run.arena
        for n in range(len(cb.path) - 2):
            nxt = cb.path[n + 1]
            assert a.parent[nxt] == cb.path[n]
            assert cb.beta[n] == max(a.u[nxt], cb.beta[n + 1])


class TestPivots:
    """Minimax bounds on beta."""

    def test_depth_one(self):
        a = TreeArena(Z2, 6)
        b = pivot_beta(a, 0, depth_cap=1)
        assert b.lower == min(a.u[c] for c in a.expand(0))

    def test_monotone_in_cap(self):
        for s in range(10):
            a = TreeArena(Z2, s)
            for v in [0, *a.expand(0)]:
                lo = pivot_beta(a, v, depth_cap=10, solver=S2)
                lo5 = pivot_beta(a, v, depth_cap=15, solver=S2)
                assert lo.lower <= lo5.lower <= lo.upper
                assert lo.lower <= lo5.upper

    def test_heuristic_probe(self):
        a = TreeArena(Z2, 0)
        b = pivot_beta(a, 0, depth_cap=12, tol=0.3)
        assert b.lower <= b.upper <= 1.0

    def test_sample_is_keyed(self):
        a = TreeArena(Z2, 3)
        x = sample_pivot(a, 0, S2, depth_cap=8)
        assert x == sample_pivot(a, 0, S2, depth_cap=8)
        assert pivot_beta(a, 0, depth_cap=8).lower <= x

    def test_dual_pivots(self):
        for s in range(5):
            run, tr = certified_backbone(TreeArena(Z2, s), S2, 12, start=5000)
            lo = dual_pivots(tr, run.arena, S2, depth_cap=12)
            assert lo[0] == 1.0 and tr.dual_upper[0] == 1.0
            assert np.all(np.diff(tr.dual_lower) <= 0) and np.all(np.diff(tr.dual_upper) <= 0)
            assert np.all(tr.dual_lower <= tr.dual_upper)
            # h_n <= h*_n wherever both are bracketed apart
            sep = tr.beta_lower > tr.dual_upper
            assert not np.any(sep)

    def test_branch_choice_consistent(self):
        run, tr = certified_backbone(TreeArena(Z2, 9), S2, 8, start=5000)
        a = run.arena
        for n in range(5):
            kids = list(a.expand(tr.path[n]))
            iv = {}
            for c in kids:
                b = pivot_beta(a, c, depth_cap=12, solver=S2)
                iv[c] = (max(a.u[c], b.lower), max(a.u[c], b.upper))
            nxt = tr.path[n + 1]
            for c in kids:
                if c != nxt:
                    assert not iv[c][1] < iv[nxt][0]
