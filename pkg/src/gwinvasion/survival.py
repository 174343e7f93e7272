"""Annealed and quenched survival probabilities of Bernoulli percolation.

``g(p)`` is the probability that the root of a fresh Galton-Watson tree is
joined to infinity by vertices of weight at most ``p`` (the root's own
weight excluded).  It is the nontrivial root ``s`` of
``1 - phi(1 - p s) = s`` and vanishes on ``[0, p_c]``.
"""

import math

import numpy as np
from scipy.interpolate import PchipInterpolator

from .tree import level_structure, martingale, resolve

BISECT_WIDTH = 1e-6
STABLE_TAIL = 1e-6


class SolverError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class SurvivalSolver:
    """Fixed-point evaluator of ``g``, ``g'`` and related functions for one law."""

    def __init__(self, dist, tol=1e-12, max_iter=200):
        if tol <= 0:
            raise ValueError("tol must be positive")
        self.dist = dist
        self.consts = dist.constants()
        self.tol = tol
        self.max_iter = max_iter
        self.p_c = self.consts.p_c
        self._inverse_table = None
        self._forward_table = None

    def _G(self, p, s):
        # G(s) = 1 - phi(1 - p s) - s; positive just above 0, <= 0 at s = 1
        return self.dist.one_minus_phi_one_minus(p * s) - s

    def residual(self, p, s):
        return abs(self.dist.phi(1.0 - p * s) - (1.0 - s))

    def g(self, p):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"p={p} outside [0, 1]")
        p_c = self.p_c
        if p <= p_c:
            return 0.0
        if p - p_c < 1e-12:
            return self.consts.K * (p - p_c)
        if p == 1.0:
            return 1.0
        lo, hi = self.tol, 1.0
        if self._G(p, lo) <= 0.0:
            # root merged with 0 numerically
            return self.consts.K * (p - p_c)
        if self._G(p, hi) >= 0.0:
            return 1.0
        it = 0
        while hi - lo > BISECT_WIDTH:
            mid = 0.5 * (lo + hi)
            if self._G(p, mid) > 0.0:
                lo = mid
            else:
                hi = mid
            it += 1
        s = 0.5 * (lo + hi)
        dist = self.dist
        for _ in range(self.max_iter - it):
            x = 1.0 - p * s
            G = self._G(p, s)
            dG = p * dist.phi_prime(x) - 1.0
            if dG == 0.0:
                break
            step = G / dG
            s_new = min(max(s - step, lo), hi)
            if abs(s_new - s) <= 1e-15 * max(s, 1e-300):
                s = s_new
                break
            s = s_new
        res = self.residual(p, s)
        if res > self.tol:
            raise SolverError(f"no convergence for g({p})", res)
        return s

    def g_prime(self, p):
        if not self.p_c < p < 1.0:
            raise ValueError(f"g' requires p in (p_c, 1), got {p}")
        s = self.g(p)
        fp = self.dist.phi_prime(1.0 - p * s)
        denom = 1.0 - p * fp
        if denom <= 0.0:
            raise ArithmeticError(f"nonpositive denominator {denom} in g'({p})")
        return s * fp / denom

    def f(self, x):
        """phi'(1 - (p_c + x) g(p_c + x)); decreases from mu at 0 to p_1 at 1 - p_c."""
        p = min(self.p_c + x, 1.0)
        return self.dist.phi_prime(max(0.0, 1.0 - p * self.g(p)))

    # inverse of g -------------------------------------------------------

    def _table(self):
        if self._inverse_table is None:
            x = np.geomspace(1e-9, 1.0 - self.p_c, 2000)
            x[-1] = 1.0 - self.p_c
            gv = np.array([self.g(self.p_c + xi) for xi in x])
            keep = np.concatenate(([True], np.diff(gv) > 0))
            x, gv = x[keep], gv[keep]
            self._table_logs = (np.log(x), np.log(gv))
            self._inverse_table = (
                PchipInterpolator(np.log(gv), np.log(x)),
                float(gv[0]),
                float(gv[-1]),
                float(x[0]),
            )
        return self._inverse_table

    def g_table(self, p):
        """Vectorized ``g`` interpolated from the inverse table (relative error ~1e-8)."""
        _, _, _, xmin = self._table()
        if self._forward_table is None:
            lx, lg = self._table_logs
            self._forward_table = PchipInterpolator(lx, lg)
        p = np.asarray(p, dtype=float)
        x = p - self.p_c
        out = np.zeros_like(x)
        small = (x > 0) & (x < xmin)
        out[small] = self.consts.K * x[small]
        big = x >= xmin
        out[big] = np.exp(self._forward_table(np.log(np.minimum(x[big], 1.0 - self.p_c))))
        out[p >= 1.0] = 1.0
        return out if out.ndim else float(out)

    def g_inverse(self, y):
        """Vectorized ``p`` with ``g(p) = y`` for ``y`` in ``[0, 1]``."""
        interp, gmin, gmax, xmin = self._table()
        y = np.asarray(y, dtype=float)
        out = np.empty_like(y)
        small = y < gmin
        out[small] = self.p_c + y[small] / self.consts.K
        big = ~small
        yy = np.clip(y[big], gmin, gmax)
        out[big] = self.p_c + np.exp(interp(np.log(yy)))
        return out if out.ndim else float(out)

    def g_inverse_exact(self, y):
        """Scalar inverse by bisection on g, for oracles."""
        if y <= 0.0:
            return self.p_c
        if y >= 1.0:
            return 1.0
        lo, hi = self.p_c, 1.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if self.g(mid) < y:
                lo = mid
            else:
                hi = mid
            if hi - lo < 1e-15:
                break
        return 0.5 * (lo + hi)


# quenched survival ---------------------------------------------------------


def g_n_from_levels(levels, p, g_p):
    """E[g(T, p) | T_n] from a :class:`Levels` structure of depth n."""
    deg = levels.deg
    n = len(deg) - 1
    u = np.full(len(deg[n]), 1.0 - g_p)
    for k in range(n - 1, -1, -1):
        d = deg[k]
        offsets = np.cumsum(d) - d
        u = np.multiply.reduceat(1.0 - p * (1.0 - u), offsets)
    return float(1.0 - u[0])


def g_n(tree_prefix, p, solver, n):
    """Survival probability at level ``p`` conditioned on the first ``n`` generations.

    Computed by the exact recursion ``u(v) = prod_w (1 - p (1 - u(w)))`` over
    children, with ``u = 1 - g(p)`` at generation ``n``; returns ``1 - u(root)``.
    """
    if not solver.p_c < p < 1.0 and n > 0:
        raise ValueError(f"p={p} must lie in (p_c, 1)")
    g_p = solver.g(p)
    if n == 0:
        return g_p
    arena, _ = resolve(tree_prefix)
    if arena.dist is not solver.dist and arena.dist.support != solver.dist.support:
        raise ValueError("tree and solver use different offspring laws")
    return g_n_from_levels(level_structure(tree_prefix, n), p, g_p)


def g_n_realized(arena, root, p, g_p, n):
    """g_n over an already realized prefix; raises if any vertex above depth n is unexpanded."""
    base = arena.depth[root]
    u = {}
    order = []
    stack = [root]
    while stack:
        v = stack.pop()
        order.append(v)
        if arena.depth[v] - base < n:
            if arena.first_child[v] < 0:
                raise ValueError(f"vertex {v} at depth {arena.depth[v] - base} < {n} is unrealized")
            stack.extend(arena.expand(v))
    for v in reversed(order):
        if arena.depth[v] - base == n:
            u[v] = 1.0 - g_p
        else:
            prod = 1.0
            for w in arena.expand(v):
                prod *= 1.0 - p * (1.0 - u[w])
            u[v] = prod
    return 1.0 - u[root]


def resistance_upper_bound(tree_prefix, eps, depth):
    """2 eps Wbar / ((1 - p_c - eps) p_c) with Wbar = max of W_n over n <= depth."""
    arena, _ = resolve(tree_prefix)
    p_c = 1.0 / arena.dist.mean
    if not 0.0 < eps < 1.0 - p_c:
        raise ValueError(f"eps={eps} outside (0, 1 - p_c)")
    w_bar = martingale(tree_prefix, depth).W_bar
    return 2.0 * eps * w_bar / ((1.0 - p_c - eps) * p_c)


def stabilized_depth(p, mu, tail=STABLE_TAIL, cap=60):
    """Smallest n with mu**n p**(2n) < tail: the Azuma variance of g_n - g is negligible."""
    r = mu * p * p
    if r >= 1.0:
        return cap
    return min(cap, max(1, math.ceil(math.log(tail) / math.log(r))))


def E_functional(tree_prefix, eps, solver, depth=None):
    """Finite-depth proxy g_n(T, p_c + eps) / g(p_c + eps) - W_n of the E(v, eps) functional."""
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    p = solver.p_c + eps
    g_p = solver.g(p)
    if g_p == 0.0:
        raise ValueError("g(p_c + eps) vanished")
    if depth is None:
        depth = stabilized_depth(p, solver.consts.mu)
    lv = level_structure(tree_prefix, depth)
    gn = g_n_from_levels(lv, p, g_p)
    w = len(lv.deg[depth]) / solver.consts.mu**depth
    return gn / g_p - w
