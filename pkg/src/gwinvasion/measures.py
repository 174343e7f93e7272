"""Quenched comparison of the limit-uniform and invasion measures.

On a fixed tree ``T`` the limit-uniform measure splits the mass at ``u``
among its children in proportion to their martingale limits, while the
invasion measure (the quenched law of the backbone ray) splits it according
to how often the backbone passes through each child when the weights are
redrawn.  Replicates keep every degree fixed and redraw every weight, so
they sample the quenched law on the whole infinite tree.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .invasion import CertificationPolicy, InvasionRun, backbone
from .stats import mean_se, wilson_ci
from .survival import g_n_from_levels, stabilized_depth
from .tree import DEFAULT_PROXY_DEPTH, ResourceError, TreeArena, level_structure, martingale, resolve

SPLIT_BUDGET = 4_000_000
SURVIVAL_BUDGET = 2_000_000
MIN_CERTIFIED = 0.8
MIN_ACCEPTANCE = 0.01
REPLICATE_START = 256
REPLICATE_MAX_STEPS = 50_000


class InconclusiveEstimate(RuntimeError):
    """Too few replicates certified (or accepted) to report an estimate."""

    def __init__(self, message, rate):
        super().__init__(f"{message} (rate {rate:.3f})")
        self.rate = rate


def _budget_depth(mu, depth, budget):
    return max(1, min(depth, int(math.log(budget) / math.log(mu))))


# limit-uniform split --------------------------------------------------------


def split_p(arena, u, proxy_depth=DEFAULT_PROXY_DEPTH):
    """Limit-uniform split at ``u``: ``W_D`` of each child subtree over their sum."""
    arena, _ = resolve(arena)
    if arena._fixed_deg is not None:
        return np.full(arena._fixed_deg, 1.0 / arena._fixed_deg)
    D = _budget_depth(arena.dist.mean, proxy_depth, SPLIT_BUDGET)
    mt = martingale(arena.view(u), D)
    w = mt.child_W(D).astype(float)
    total = w.sum()
    assert total > 0, "all-zero martingale without death"
    return w / total


# invasion split -----------------------------------------------------------


@dataclass
class SplitEstimate:
    """Per-child splits at ``node`` with Monte Carlo errors on the invasion side."""

    node: int
    p_hat: np.ndarray
    q_hat: np.ndarray
    q_se: np.ndarray
    replicates: int
    certified: int
    proxy_depth: int
    passing: int = 0
    ambiguous: int = 0

    @property
    def eps_hat(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.q_hat / self.p_hat - 1.0

    @property
    def certification_rate(self):
        return self.certified / self.replicates if self.replicates else 0.0

    @property
    def X_hat(self):
        return kl_X(self).X


def _wilson_se(counts, n):
    """Half-width of the one-sigma Wilson interval per count."""
    if n == 0:
        return np.full(len(counts), np.inf)
    out = []
    for c in counts:
        lo, hi = wilson_ci(int(c), n, z=1.0)
        out.append(0.5 * (hi - lo))
    return np.array(out)


def _replica(arena, weight_seed):
    return TreeArena(arena.dist, arena.seed, weight_seed=weight_seed, max_nodes=arena.max_nodes)


def _certify(run, solver, policy, need, p=None, max_steps=REPLICATE_MAX_STEPS):
    """Extend ``run`` until ``need`` backbone steps are certified (and ``beta_0`` is decided against ``p``).

    Returns ``(trace, decision)``; ``decision`` is True/False for ``beta_0 <= p``
    (None if ``p`` is None or undecided at ``max_steps``).
    """
    target = REPLICATE_START
    while True:
        run.extend(target - run.step_count)
        if p is not None and max(run.weights[1:]) > p:
            # invaded weights never exceed the root's pivot
            return None, False
        tr = backbone(run, solver, policy)
        if tr.certified_len >= need:
            if p is None:
                return tr, None
            if tr.beta_upper[0] <= p:
                return tr, True
            if tr.beta_lower[0] > p:
                return tr, False
        if run.step_count >= max_steps:
            return tr, None
        target = min(2 * target, max_steps)


def split_q_mc(arena, u, replicates, solver, seed=0, policy=CertificationPolicy(), proxy_depth=DEFAULT_PROXY_DEPTH,
               max_steps=REPLICATE_MAX_STEPS):
    """Invasion split at ``u``: fraction of certified root invasions through ``u`` that next enter each child.

    Replicate ``r`` redraws every weight with ``weight_seed = derive_seed(seed, r)``.
    """
    if replicates < 1:
        raise ValueError("replicates must be positive")
    arena, _ = resolve(arena)
    addr = arena.address(u)
    d = len(addr)
    k = arena.deg[u]
    counts = np.zeros(k, dtype=np.int64)
    certified = 0
    for r in range(replicates):
        rep = _replica(arena, rng.derive_seed(seed, r))
        tr, _ = _certify(InvasionRun(rep), solver, policy, d + 1, max_steps=max_steps)
        if tr.certified_len < d + 1:
            continue
        certified += 1
        if rep.address(tr.path[d]) == addr:
            counts[rep.slot[tr.path[d + 1]]] += 1
    rate = certified / replicates
    if rate < MIN_CERTIFIED:
        raise InconclusiveEstimate(f"only {certified} of {replicates} runs certified through generation {d + 1}", rate)
    passing = int(counts.sum())
    if passing == 0:
        raise InconclusiveEstimate(f"no certified run passed through node {u}", 0.0)
    q = counts / passing
    return SplitEstimate(
        node=u,
        p_hat=split_p(arena, u, proxy_depth),
        q_hat=q,
        q_se=_wilson_se(counts, passing),
        replicates=replicates,
        certified=certified,
        proxy_depth=proxy_depth,
        passing=passing,
    )


# conditional split ------------------------------------------------------------


@dataclass
class ConditionalSplit:
    """Estimate of q~(w, p) for every child ``w`` of ``node``."""

    node: int
    p: float
    q: np.ndarray
    se: np.ndarray
    replicates: int
    accepted: int
    rejected: int
    ambiguous: int

    @property
    def acceptance(self):
        return self.accepted / self.replicates


def qtilde(arena, u, p, replicates, solver, seed=0, policy=CertificationPolicy(), max_steps=REPLICATE_MAX_STEPS):
    """Conditional split at ``u`` given ``beta(u) <= p``, by rejection on invasions of ``T(u)``.

    Runs whose pivot bound neither certifies ``beta(u) <= p`` nor excludes it
    by ``max_steps`` are dropped and counted as ambiguous.
    """
    if not solver.p_c < p <= 1.0:
        raise ValueError(f"p={p} must lie in (p_c, 1]")
    if replicates < 1:
        raise ValueError("replicates must be positive")
    arena, _ = resolve(arena)
    addr = arena.address(u)
    k = arena.deg[u]
    counts = np.zeros(k, dtype=np.int64)
    rejected = ambiguous = 0
    for r in range(replicates):
        rep = _replica(arena, rng.derive_seed(seed, r))
        ru = rep.find(addr)
        tr, ok = _certify(InvasionRun(rep.view(ru)), solver, policy, 1, p=None if p >= 1.0 else p,
                          max_steps=max_steps)
        if p >= 1.0:
            ok = tr.certified_len >= 1 or None
        if ok is None:
            ambiguous += 1
        elif ok:
            counts[rep.slot[tr.path[1]]] += 1
        else:
            rejected += 1
    accepted = int(counts.sum())
    rate = accepted / replicates
    if rate < MIN_ACCEPTANCE:
        raise InconclusiveEstimate(f"acceptance too low for p={p}", rate)
    return ConditionalSplit(
        node=u,
        p=p,
        q=counts / accepted,
        se=_wilson_se(counts, accepted),
        replicates=replicates,
        accepted=accepted,
        rejected=rejected,
        ambiguous=ambiguous,
    )


# quenched survival ------------------------------------------------------------


def quenched_depth(solver, p, budget=SURVIVAL_BUDGET):
    """Depth for g_n: stabilized when affordable, else as deep as the node budget allows."""
    mu = solver.consts.mu
    n = stabilized_depth(p, mu)
    if len(solver.dist.support) == 1:
        # on a regular tree g_n is exact at every depth
        return min(n, 4)
    return _budget_depth(mu, n, budget)


def quenched_g(arena, node, ps, solver, depth, chunk_cells=20_000_000):
    """g_depth(T(node), p) for each level in ``ps`` (vectorized over ``ps``)."""
    ps = np.atleast_1d(np.asarray(ps, dtype=float))
    lv = level_structure(arena.view(node), depth, max_nodes=8 * SURVIVAL_BUDGET)
    width = max(1, chunk_cells // max(len(lv.deg[depth]), 1))
    out = np.empty(len(ps))
    offsets = [np.cumsum(d) - d for d in lv.deg]
    for s in range(0, len(ps), width):
        pc = ps[s : s + width]
        g_pc = np.array([solver.g(p) for p in pc])
        u = np.broadcast_to(1.0 - g_pc, (len(lv.deg[depth]), len(pc))).copy()
        for k in range(depth - 1, -1, -1):
            u = np.multiply.reduceat(1.0 - pc * (1.0 - u), offsets[k], axis=0)
        out[s : s + width] = 1.0 - u[0]
    return out


def children_survival(arena, u, p, solver, depth=None):
    """(g(T(w_k), p) for each child w_k, g(T(u), p), depth used)."""
    if depth is None:
        depth = quenched_depth(solver, p)
    kids = list(arena.expand(u))
    gk = np.array([quenched_g(arena, w, [p], solver, depth)[0] for w in kids])
    g_u = 1.0 - float(np.prod(1.0 - p * gk))
    return gk, g_u, depth


def qtilde_quadrature(arena, u, p, solver, depth=None, points=400):
    """q~(w, p) for each child by integrating ``P[U_w v beta(w) in dx]`` against the siblings' tails.

    ``P[U_w v beta(w) <= x] = x g(T(w), x)``; the quenched survivals come from
    the g_n recursion, so this is a deterministic cross-check of :func:`qtilde`.
    """
    if depth is None:
        depth = quenched_depth(solver, p)
    p_c = solver.p_c
    x = p_c + (p - p_c) * np.linspace(0.0, 1.0, points + 1) ** 2
    kids = list(arena.expand(u))
    F = np.array([x * quenched_g(arena, w, x, solver, depth) for w in kids])
    dF = np.diff(F, axis=1)
    S = 1.0 - F
    S_mid = 0.5 * (S[:, 1:] + S[:, :-1])
    out = np.empty(len(kids))
    for j in range(len(kids)):
        others = np.prod(np.delete(S_mid, j, axis=0), axis=0) if len(kids) > 1 else 1.0
        out[j] = np.sum(dF[j] * others)
    return out / out.sum()


# sandwich bound ------------------------------------------------------------------


@dataclass
class SandwichReport:
    """Survival-ratio bracket for the conditional split at ``node`` and its empirical check."""

    node: int
    p: float
    ratio: np.ndarray
    g_children: np.ndarray
    g_node: float
    A_lower: np.ndarray
    A_upper: np.ndarray
    A_lower_tight: np.ndarray
    A_upper_tight: np.ndarray
    qtilde: np.ndarray
    se: np.ndarray
    tolerance: float
    depth: int

    @property
    def A(self):
        return self.qtilde - self.ratio

    @property
    def slack(self):
        """Distance of A to the nearer end of the simple bracket (negative means outside)."""
        return np.minimum(self.A_upper - self.A, self.A - self.A_lower)

    @property
    def violations(self):
        allow = 3.0 * self.se + self.tolerance
        return np.flatnonzero((self.A > self.A_upper + allow) | (self.A < self.A_lower - allow))

    @property
    def violated(self):
        return len(self.violations) > 0


def sandwich_check(arena, u, p, solver, depth=None, replicates=200, seed=0, estimate=None,
                   policy=CertificationPolicy()):
    """Compare a Monte Carlo q~ at ``u`` with its survival-ratio bracket.

    The tolerance on the survival side is the one-sigma Azuma scale
    ``(mu p^2)^(depth/2)`` of g_depth around the quenched g (zero on regular trees).
    """
    arena, _ = resolve(arena)
    gk, g_u, depth = children_survival(arena, u, p, solver, depth)
    total = gk.sum()
    ratio = gk / total
    B = np.array([1.0 - np.prod(np.delete(1.0 - p * gk, j)) for j in range(len(gk))])
    wB = gk * (1.0 - B)
    A_lo_t = -B * ratio
    A_hi_t = gk * np.sum(gk * B) / (total * wB.sum()) if wB.sum() > 0 else np.full(len(gk), np.inf)
    A_lo = -g_u * ratio
    A_hi = g_u / (1.0 - g_u) * ratio if g_u < 1.0 else np.full(len(gk), np.inf)
    if estimate is None:
        estimate = qtilde(arena, u, p, replicates, solver, seed=seed, policy=policy)
    if len(solver.dist.support) == 1:
        tol = 0.0
    else:
        tol = (solver.consts.mu * p * p) ** (depth / 2.0)
    return SandwichReport(
        node=u,
        p=p,
        ratio=ratio,
        g_children=gk,
        g_node=g_u,
        A_lower=A_lo,
        A_upper=A_hi,
        A_lower_tight=A_lo_t,
        A_upper_tight=A_hi_t,
        qtilde=estimate.q,
        se=estimate.se,
        tolerance=tol,
        depth=depth,
    )


# KL divergence -----------------------------------------------------------------


@dataclass(frozen=True)
class KLResult:
    X: float
    bound: float
    se: float
    infinite: bool = False

    @property
    def within_bound(self):
        return self.infinite or self.X <= self.bound + 1e-12


def kl_X(split, q=None, p=None, n=None):
    """``X = sum q log(q/p)`` with ``0 log 0 = 0``, its quadratic bound ``sum p eps^2`` and a delta-method SE.

    Accepts a :class:`SplitEstimate` or explicit ``q``, ``p`` (and replicate count ``n``).
    """
    if split is not None:
        q, p, n = split.q_hat, split.p_hat, split.passing
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    if q.shape != p.shape:
        raise ValueError("splits have different lengths")
    if np.any(p < 0) or np.any(q < 0):
        raise ValueError("negative split")
    if np.any((p == 0) & (q > 0)):
        return KLResult(math.inf, math.inf, math.inf, infinite=True)
    pos = q > 0
    logr = np.zeros_like(q)
    logr[pos] = np.log(q[pos] / p[pos])
    X = float(np.sum(q[pos] * logr[pos]))
    live = p > 0
    bound = float(np.sum(p[live] * (q[live] / p[live] - 1.0) ** 2))
    se = math.nan
    if n:
        k = int(np.count_nonzero(live))
        var = (np.sum(q * logr**2) - np.sum(q * logr) ** 2) / n + (k - 1) / (2.0 * n * n)
        se = math.sqrt(max(var, 0.0))
    return KLResult(max(X, 0.0) if X > -1e-12 else X, bound, se)


# absolute-continuity diagnostic ------------------------------------------------


@dataclass
class KLSeries:
    """Estimates of E X(gamma_n) and their partial sums; ``n`` runs from 0."""

    EX: np.ndarray
    se: np.ndarray
    coverage: np.ndarray
    trees: int
    replicates: int
    truncated_at: int
    warnings: list = field(default_factory=list)

    @property
    def partial_sum(self):
        return np.cumsum(self.EX)

    @property
    def partial_se(self):
        return np.sqrt(np.cumsum(self.se**2))

    def flattening(self, last=5, z=3.0):
        """No significant upward trend of the terms over the last ``last`` generations."""
        m = len(self.EX)
        if m < 2:
            return True
        lo = max(0, m - last)
        x = np.arange(lo, m, dtype=float)
        y = self.EX[lo:]
        se = self.se[lo:]
        if not np.all(np.isfinite(se)):
            # a single tree gives no standard error and hence no evidence of growth
            return True
        w = 1.0 / np.maximum(se, 1e-12) ** 2
        xb = np.sum(w * x) / w.sum()
        sxx = np.sum(w * (x - xb) ** 2)
        if sxx == 0:
            return True
        slope = np.sum(w * (x - xb) * y) / sxx
        return bool(slope <= z / math.sqrt(sxx))


def _tree_series(arena, n_max, replicates, solver, seed, policy, proxy_depth, min_count, max_steps):
    """Per-tree bias-corrected E X_n and coverage from replicate backbones."""
    paths = []
    for r in range(replicates):
        rep = _replica(arena, rng.derive_seed(seed, r))
        tr, _ = _certify(InvasionRun(rep), solver, policy, n_max + 1, max_steps=max_steps)
        if tr.certified_len < 1:
            continue
        paths.append([rep.address(v) for v in tr.path[: n_max + 2]])
    R = len(paths)
    EX = np.zeros(n_max + 1)
    cover = np.zeros(n_max + 1)
    if R == 0:
        return EX, cover, 0
    for n in range(n_max + 1):
        through = {}
        reach = 0
        for pth in paths:
            if len(pth) > n + 1:
                reach += 1
                through.setdefault(pth[n], []).append(pth[n + 1][-1])
        for addr, slots in through.items():
            c = len(slots)
            if c < min_count:
                continue
            node = arena.find(addr)
            k = arena.deg[node]
            if k == 1:
                cover[n] += c / R
                continue
            q = np.bincount(slots, minlength=k) / c
            res = kl_X(None, q=q, p=split_p(arena, node, proxy_depth))
            floor = (k - 1) / (2.0 * c)
            EX[n] += (c / R) * (res.X - floor)
            cover[n] += c / R
        if reach < R:
            cover[n] *= reach / R
    return EX, cover, R


def ac_diagnostic(dist, n_max, trees, replicates, solver, seed=0, policy=CertificationPolicy(),
                  proxy_depth=DEFAULT_PROXY_DEPTH, min_count=10, min_coverage=0.5, max_steps=REPLICATE_MAX_STEPS):
    """Estimate E X(gamma_n) for n <= n_max over ``trees`` quenched trees.

    Within a tree, X at each backbone vertex ``v`` reached by at least
    ``min_count`` of the replicate backbones is computed from the empirical
    split of those replicates, minus the multinomial floor ``(k - 1) / (2 c)``,
    and weighted by the share of replicates through ``v``.  The series stops
    at the first generation where the mean share covered falls below
    ``min_coverage``.
    """
    if trees < 1 or replicates < 1:
        raise ValueError("trees and replicates must be positive")
    per_tree = []
    covers = []
    for t in range(trees):
        arena = TreeArena(dist, rng.derive_seed(seed, t))
        ex, cov, _ = _tree_series(arena, n_max, replicates, solver, rng.derive_seed(seed ^ 0x5BD1E995, t),
                                  policy, proxy_depth, min_count, max_steps)
        per_tree.append(ex)
        covers.append(cov)
    per_tree = np.array(per_tree)
    covers = np.array(covers)
    mean_cover = covers.mean(axis=0)
    bad = np.flatnonzero(mean_cover < min_coverage)
    stop = int(bad[0]) if bad.size else n_max + 1
    notes = []
    if stop <= n_max:
        msg = f"series truncated at n={stop}: coverage {mean_cover[stop]:.2f} below {min_coverage}"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
    EX = np.zeros(stop)
    se = np.zeros(stop)
    for n in range(stop):
        EX[n], se[n] = mean_se(per_tree[:, n])
    return KLSeries(EX=EX, se=se, coverage=mean_cover[:stop], trees=trees, replicates=replicates,
                    truncated_at=stop, warnings=notes)


# main condition ------------------------------------------------------------------

Q_STAR = (math.sqrt(17.0) - 3.0) / 4.0


@dataclass(frozen=True)
class ConditionResult:
    holds: bool
    margin: float
    q: float


def main_theorem_condition(p_moments, p1, mu):
    """Sufficient condition for absolute continuity: negative margin.

    ``margin = 2p^2q^2 + (3p^2+5p)q + (-p^2+11p-4)`` with ``q = log mu / log(1/p1)``
    (``q = 0`` when ``p1 = 0``).  For ``p_moments = inf`` the margin is divided
    by ``p^2`` first, leaving ``2q^2 + 3q - 1``.
    """
    if not 0.0 <= p1 < 1.0:
        raise ValueError(f"p1={p1} must lie in [0, 1)")
    if not mu > 1.0:
        raise ValueError(f"mu={mu} must exceed 1")
    if not p_moments > 0:
        raise ValueError("p_moments must be positive")
    q = 0.0 if p1 == 0.0 else math.log(mu) / math.log(1.0 / p1)
    if math.isinf(p_moments):
        margin = 2.0 * q * q + 3.0 * q - 1.0
    else:
        p = float(p_moments)
        margin = 2 * p * p * q * q + (3 * p * p + 5 * p) * q + (-p * p + 11 * p - 4)
    return ConditionResult(holds=margin < 0.0, margin=margin, q=q)


def p1_boundary(mu):
    """Largest p1 satisfying the infinite-moment condition: mu^(-(3 + sqrt 17) / 2)."""
    return mu ** (-(3.0 + math.sqrt(17.0)) / 2.0)


P_BOUNDARY_P1_ZERO = (11.0 + math.sqrt(105.0)) / 2.0
