"""Pivot Markov kernels and the reference processes of their scaling limits.

With ``h = beta - p_c`` and ``f(x) = phi'(1 - (p_c + x) g(p_c + x))`` the
pivot chain moves from ``a`` by the kernel

    nu_a(dx) = f(a) g'(p_c + x) / g'(p_c + a) 1{x < a} dx + C_a delta_a,
    C_a = f(a) (p_c + a),

and the pivot/dual-pivot pair ``(h, h*)`` moves from ``(a, b)`` by
``nu_a x nut_{a,b}`` with

    nut_{a,b}(dx) = -f'(x) / f(a) 1{a < x < b} dx + f(b) / f(a) delta_b.

Both are sampled by inverse CDF from tables on a log-spaced grid.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator

from . import rng as rngmod
from .survival import SurvivalSolver

SAMPLE_FROM_L = None
GRID_MIN = 1e-8
GRID_SIZE = 2000
ATOM_TOL = 1e-6


class KernelInconsistency(ArithmeticError):
    """The two expressions for the atom C_a disagree."""


class PivotKernel:
    """Tabulated kernels for one offspring law (immutable after construction)."""

    def __init__(self, solver, grid_size=GRID_SIZE, x_min=GRID_MIN):
        if not isinstance(solver, SurvivalSolver):
            solver = SurvivalSolver(solver)
        self.solver = solver
        dist = solver.dist
        p_c = self.p_c = solver.p_c
        self.x_max = 1.0 - p_c
        x = np.geomspace(x_min, self.x_max - 1e-6, grid_size - 1)
        x = np.append(x, self.x_max)
        g = np.empty_like(x)
        gp = np.empty_like(x)
        f = np.empty_like(x)
        for i, xi in enumerate(x):
            p = p_c + xi
            s = solver.g(min(p, 1.0))
            z = max(0.0, 1.0 - p * s)
            d1 = dist.phi_prime(z)
            g[i] = s
            f[i] = d1
            gp[i] = s * d1 / (1.0 - p * d1)
        self.x, self.g_tab, self.gp_tab, self.f_tab = x, g, gp, f
        lx = np.log(x)
        self._lx = lx
        self._f = PchipInterpolator(lx, f)
        self._lg = PchipInterpolator(lx, np.log(g))
        self._gp = PchipInterpolator(lx, gp)
        # x as a function of g and of f (both monotone)
        self._ginv = PchipInterpolator(np.log(g), lx)
        if np.any(np.diff(f) >= 0):
            raise KernelInconsistency("f is not strictly decreasing on the grid")
        self._finv = PchipInterpolator(-f, lx)
        fp = np.gradient(f, x)
        self.fprime_tab = fp
        self._fp = PchipInterpolator(lx, fp)
        c1 = f * (p_c + x)
        ok = gp > 0
        c2 = 1.0 - f[ok] * g[ok] / gp[ok]
        gap = np.max(np.abs(c1[ok] - c2))
        self.atom_gap = float(gap)
        if gap > ATOM_TOL:
            raise KernelInconsistency(f"atom expressions differ by {gap:.3e}")
        self._slope0 = (f[1] - f[0]) / (x[1] - x[0])

    # tabulated functions -------------------------------------------------

    def _check(self, a):
        a = np.asarray(a, dtype=float)
        if np.any(a <= 0.0) or np.any(a > self.x_max * (1 + 1e-12)):
            raise ValueError(f"state outside (0, {self.x_max}]")
        return a

    def f(self, x):
        x = np.asarray(x, dtype=float)
        lo = x < self.x[0]
        out = np.where(lo, self.f_tab[0] + self._slope0 * (x - self.x[0]), 0.0)
        hi = ~lo
        out[hi] = self._f(np.log(np.minimum(x[hi], self.x_max)))
        return out if out.ndim else float(out)

    def G(self, x):
        """g(p_c + x)."""
        x = np.asarray(x, dtype=float)
        lo = x < self.x[0]
        out = np.empty_like(x)
        out[lo] = self.g_tab[0] * x[lo] / self.x[0]
        out[~lo] = np.exp(self._lg(np.log(np.minimum(x[~lo], self.x_max))))
        return out if out.ndim else float(out)

    def G_prime(self, x):
        x = np.asarray(x, dtype=float)
        lo = x < self.x[0]
        out = np.empty_like(x)
        out[lo] = self.gp_tab[0]
        out[~lo] = self._gp(np.log(np.minimum(x[~lo], self.x_max)))
        return out if out.ndim else float(out)

    def G_inverse(self, y):
        y = np.asarray(y, dtype=float)
        lo = y < self.g_tab[0]
        out = np.empty_like(y)
        out[lo] = self.x[0] * y[lo] / self.g_tab[0]
        out[~lo] = np.exp(self._ginv(np.log(np.minimum(y[~lo], 1.0))))
        return out if out.ndim else float(out)

    def f_inverse(self, v):
        v = np.asarray(v, dtype=float)
        lo = v > self.f_tab[0]
        out = np.empty_like(v)
        out[lo] = self.x[0] + (v[lo] - self.f_tab[0]) / self._slope0
        vv = np.clip(v[~lo], self.f_tab[-1], self.f_tab[0])
        out[~lo] = np.exp(self._finv(-vv))
        return out if out.ndim else float(out)

    def f_prime(self, x):
        x = np.asarray(x, dtype=float)
        out = np.where(x < self.x[0], self._slope0, 0.0)
        hi = x >= self.x[0]
        out[hi] = self._fp(np.log(np.minimum(x[hi], self.x_max)))
        return out if out.ndim else float(out)

    def atom(self, a):
        """C_a = f(a) (p_c + a)."""
        return self.f(a) * (self.p_c + np.asarray(a))

    def atom_alt(self, a):
        """C_a = 1 - f(a) g(p_c + a) / g'(p_c + a), evaluated through the solver."""
        s = self.solver
        return 1.0 - s.f(a) * s.g(self.p_c + a) / s.g_prime(self.p_c + a)

    def density(self, a, x):
        """Continuous part of nu_a at x in (0, a)."""
        return np.where(np.asarray(x) < a, self.f(a) * self.G_prime(x) / self.G_prime(a), 0.0)

    def joint_atom(self, a, b):
        return self.f(b) / self.f(a)

    def fa(self, a, u):
        """f_a(u) = f(a) g'(p_c + u) / g'(p_c + a) on (0, a), else 0."""
        return self.density(a, u)

    # samplers ------------------------------------------------------------

    def step_h(self, a, v):
        """Vectorized nu_a draw driven by uniforms ``v`` (continuous part first, then the atom)."""
        a, v = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(v, dtype=float))
        out = a.copy()
        cont = 1.0 - self.atom(a)
        jump = v < cont
        if np.any(jump):
            aj = a[jump]
            x = self.G_inverse(v[jump] / cont[jump] * self.G(aj))
            out[jump] = np.minimum(x, aj)
        return out

    def step_dual(self, a, b, v):
        """Vectorized nut_{a,b} draw driven by uniforms ``v``."""
        a, b, v = np.broadcast_arrays(*(np.asarray(z, dtype=float) for z in (a, b, v)))
        out = b.copy()
        fa = self.f(a)
        cont = 1.0 - self.f(b) / fa
        jump = v < cont
        if np.any(jump):
            x = self.f_inverse(fa[jump] * (1.0 - v[jump]))
            out[jump] = np.clip(x, np.nextafter(a[jump], np.inf), b[jump])
        return out


def kernel_step_h(kernel, a, rng):
    """One draw from nu_a."""
    if not 0.0 < a <= kernel.x_max:
        raise ValueError(f"a={a} outside (0, {kernel.x_max}]")
    return float(kernel.step_h(np.array([a]), rng.random(1))[0])


def kernel_step_joint(kernel, a, b, rng):
    """Independent draws from nu_a and nut_{a,b}."""
    if not 0.0 < a < b <= kernel.x_max:
        raise ValueError(f"need 0 < a < b <= {kernel.x_max}, got a={a}, b={b}")
    v = rng.random(2)
    h = float(kernel.step_h(np.array([a]), v[:1])[0])
    hs = float(kernel.step_dual(np.array([a]), np.array([b]), v[1:])[0])
    return h, hs


def sample_initial(kernel, rng, size=None):
    """h_0 from the law P[h_0 <= x] = g(p_c + x)."""
    v = rng.random(size)
    return kernel.G_inverse(v)


# chains ------------------------------------------------------------------


@dataclass
class ChainPath:
    """Pivot path h_0..h_N (rows are replicates when 2-D)."""

    values: np.ndarray
    dual: np.ndarray = None
    seed: int = 0
    provenance: str = "analytic"

    def __len__(self):
        return self.values.shape[-1]


def run_chain(kernel, h0, n, seed, joint=False, replicates=None, record=None):
    """Simulate the analytic pivot chain (``joint`` adds the dual pivot, started at 1 - p_c).

    ``h0 = SAMPLE_FROM_L`` draws the start from its stationary-free law.
    ``replicates`` runs a vectorized batch; ``record`` restricts storage to
    the listed times.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    gen = rngmod.generator(seed)
    size = 1 if replicates is None else int(replicates)
    if size < 1:
        raise ValueError("replicates must be positive")
    if h0 is SAMPLE_FROM_L:
        h = np.atleast_1d(sample_initial(kernel, gen, size))
    else:
        kernel._check(h0)
        h = np.full(size, float(h0))
    hs = np.full(size, kernel.x_max) if joint else None
    times = range(n + 1) if record is None else sorted(set(record))
    want = set(times)
    out = np.empty((size, len(times)))
    dual = np.empty((size, len(times))) if joint else None
    col = 0
    for k in range(n + 1):
        if k in want:
            out[:, col] = h
            if joint:
                dual[:, col] = hs
            col += 1
        if k == n:
            break
        v = gen.random((2, size)) if joint else gen.random(size)
        if joint:
            h_next = kernel.step_h(h, v[0])
            hs = kernel.step_dual(h, hs, v[1])
            h = h_next
        else:
            h = kernel.step_h(h, v)
    if replicates is None:
        out = out[0]
        dual = dual[0] if joint else None
    return ChainPath(values=out, dual=dual, seed=seed)


# reference processes -------------------------------------------------------


def min_uniform(n, seed, replicates=None):
    """Running minimum M_k = min(U_0..U_k), k = 0..n."""
    gen = rngmod.generator(seed)
    shape = (n + 1,) if replicates is None else (replicates, n + 1)
    return np.minimum.accumulate(gen.random(shape), axis=-1)


@dataclass
class LpePath:
    """Piecewise-constant path: value ``heights[i]`` on ``[times[i], times[i+1])``."""

    times: np.ndarray
    heights: np.ndarray
    t_max: float

    def __call__(self, t):
        i = np.searchsorted(self.times, t, side="right") - 1
        return self.heights[i]


def lpe_sample(t_max, seed, start=1.0):
    """Lower envelope capped at ``start``: from height z jump to z U at rate z."""
    if t_max <= 0:
        raise ValueError("t_max must be positive")
    gen = rngmod.generator(seed)
    times, heights = [0.0], [start]
    t, z = 0.0, start
    while True:
        t += gen.exponential(1.0 / z)
        if t > t_max:
            break
        z *= gen.random()
        times.append(t)
        heights.append(z)
    return LpePath(np.array(times), np.array(heights), t_max)


def lpe_values(t, size, seed, start=1.0):
    """Vectorized draws of the capped envelope at time ``t`` for ``size`` paths."""
    gen = rngmod.generator(seed)
    z = np.full(size, float(start))
    clock = np.zeros(size)
    live = np.ones(size, dtype=bool)
    while live.any():
        idx = np.flatnonzero(live)
        clock[idx] += gen.exponential(1.0 / z[idx])
        done = clock[idx] > t
        live[idx[done]] = False
        go = idx[~done]
        z[go] *= gen.random(go.size)
    return z


# coupling corridor ---------------------------------------------------------


def corridor_delta(kernel, c1, c2, n_u=200):
    """Largest grid a such that 1/c2 < f_r(u) < 1/c1 for all r <= a and u in (0, r)."""
    best = 0.0
    for a in kernel.x[kernel.x <= 0.5 * kernel.x_max]:
        u = np.concatenate((np.geomspace(kernel.x[0] * 1e-2, a, n_u, endpoint=False), [a * (1 - 1e-9)]))
        fa = kernel.fa(a, u)
        if fa.min() <= 1.0 / c2 or fa.max() >= 1.0 / c1:
            break
        best = float(a)
    return best


def q_function(kernel, r, x, c1, c2, terms=400):
    """Q_r(x) = sum_j q^(j+1) (c2 f_r(q^j x) - 1) with q = c1 / c2."""
    q = c1 / c2
    x = np.atleast_1d(np.asarray(x, dtype=float))
    j = np.arange(terms)
    pts = x[:, None] * q ** j[None, :]
    vals = kernel.fa(r, pts.ravel()).reshape(pts.shape)
    return (q ** (j + 1) * (c2 * vals - 1.0)).sum(axis=1)


def couple_min_uniform(kernel, h, seed, c1=None, c2=None, method="quantile"):
    """Uniforms U_0..U_N coupled to a pivot path h_0..h_N; returns (U, M).

    ``quantile``: U_k is the randomized probability integral transform of
    h_k under nu_{h_{k-1}} (and of h_0 under its initial law), so the U_k
    are IID uniform whenever h follows the kernel.  ``reverse``: the coupling
    through the functions Q_r, run in reverse: U before the first time the
    path enters ``(0, delta)`` are independent, afterwards U_k is drawn from
    its conditional law given the observed step.
    """
    h = np.asarray(h, dtype=float)
    gen = rngmod.generator(seed)
    n = len(h)
    U = np.empty(n)
    if method == "quantile":
        U[0] = kernel.G(h[0])
        for k in range(1, n):
            a, b = h[k - 1], h[k]
            cont = 1.0 - kernel.atom(a)
            if b < a:
                U[k] = cont * kernel.G(b) / kernel.G(a)
            else:
                U[k] = cont + (1.0 - cont) * gen.random()
        return U, np.minimum.accumulate(U)
    if method != "reverse":
        raise ValueError(f"unknown coupling {method!r}")
    delta = corridor_delta(kernel, c1, c2)
    q = c1 / c2
    below = np.flatnonzero(h < delta)
    nd = int(below[0]) if below.size else n - 1
    U[: nd + 1] = gen.random(nd + 1)
    for k in range(nd + 1, n):
        L, x = h[k - 1], h[k]
        if x < L:
            w1 = q_function(kernel, L, x, c1, c2)[0] / c1
            w2 = (1.0 - q_function(kernel, L, q * x, c1, c2)[0]) / c2
            U[k] = x / c1 if gen.random() < w1 / (w1 + w2) else x / c2
        else:
            while True:
                u = L / c2 + (1.0 - L / c2) * gen.random()
                if u >= L / c1 or gen.random() < 1.0 - q_function(kernel, L, c1 * u, c1, c2)[0]:
                    break
            U[k] = u
    return U, np.minimum.accumulate(U)


def corridor_start(h, M, c1, c2):
    """Smallest n0 with c1 M_n <= h_n <= c2 M_n for every n >= n0, or None."""
    h, M = np.asarray(h), np.asarray(M)
    ok = (c1 * M <= h) & (h <= c2 * M)
    bad = np.flatnonzero(~ok)
    if not bad.size:
        return 0
    n0 = int(bad[-1]) + 1
    return n0 if n0 < len(h) else None


# dual pivot decay ------------------------------------------------------------


@dataclass
class DecayTable:
    n: np.ndarray
    count: np.ndarray
    replicates: int
    t: float
    lo: np.ndarray
    hi: np.ndarray
    decreasing: bool

    @property
    def prob(self):
        return self.count / self.replicates


def dual_decay_experiment(kernel, t, n_grid, replicates, seed, z=2.576):
    """Empirical P[h*_n > n^-t] on ``n_grid`` from the joint chain, with Wilson CIs."""
    from .stats import trend_decreasing, wilson_ci

    if not 0.5 < t < 1.0:
        raise ValueError("t must lie in (1/2, 1)")
    n_grid = np.asarray(sorted(n_grid))
    path = run_chain(kernel, SAMPLE_FROM_L, int(n_grid[-1]), seed, joint=True, replicates=replicates,
                     record=n_grid)
    count = (path.dual > n_grid[None, :] ** (-t)).sum(axis=0)
    cis = [wilson_ci(int(c), replicates, z) for c in count]
    lo = np.array([c[0] for c in cis])
    hi = np.array([c[1] for c in cis])
    return DecayTable(n=n_grid, count=count, replicates=replicates, t=t, lo=lo, hi=hi,
                      decreasing=trend_decreasing(list(zip(lo, hi))))
