"""Invasion percolation on lazily realized trees, backbones and pivots.

The invasion repeatedly adds the minimum-weight vertex adjacent to the
invaded cluster.  On a tree the backbone pivots have an exact description
in terms of the run: every vertex invaded inside ``T(gamma_n)`` has weight at
most ``beta(gamma_n)``, and ``beta(gamma_n)`` equals the largest weight on the
backbone below ``gamma_n``.  Certification uses the exact conditional
probability that the invasion ever leaves ``T(gamma_n)``: the unexplored
subtrees hanging off the boundary are fresh Galton-Watson trees, so the
escape probability is ``(1 - g(b))**N`` where ``b`` is the lightest boundary
weight outside ``T(gamma_n)`` and ``N`` counts the boundary vertices inside
lighter than ``b``.
"""

import heapq
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .tree import resolve

DEFAULT_DEPTH_CAP = 25
DEFAULT_TOL = 0.02
_SALT_PIVOT = 0x3C6EF372FE94F82B
G_SHADE = 1e-4


class InconclusiveProbe(UserWarning):
    pass


@dataclass(frozen=True)
class CertificationPolicy:
    risk: float = 1e-9
    tail_fraction: float = 0.25
    depth_cap: int = DEFAULT_DEPTH_CAP
    tol: float = DEFAULT_TOL


class InvasionRun:
    """Invasion cluster grown from the root of a tree or subtree view.

    ``invaded[t]`` is the vertex added at step ``t`` (the root is step 0) and
    ``weights[t]`` its weight.  ``boundary`` is a heap of ``(weight, node)``;
    ties are broken by node id.
    """

    def __init__(self, tree):
        arena, root = resolve(tree)
        self.arena = arena
        self.root = root
        self.invaded = [root]
        self.weights = [math.nan]
        u = arena.u
        self.boundary = [(u[c], c) for c in arena.expand(root)]
        heapq.heapify(self.boundary)

    @property
    def step_count(self):
        return len(self.invaded) - 1

    def extend(self, steps):
        arena = self.arena
        u = arena.u
        first = arena.first_child
        deg = arena.deg
        expand = arena.expand
        heap = self.boundary
        pop, push = heapq.heappop, heapq.heappush
        inv_append = self.invaded.append
        w_append = self.weights.append
        for _ in range(steps):
            w, v = pop(heap)
            inv_append(v)
            w_append(w)
            f = first[v]
            if f < 0:
                expand(v)
                f = first[v]
            for c in range(f, f + deg[v]):
                push(heap, (u[c], c))
        return self

    def exceedances(self, p, start=0):
        """Number of invaded weights above ``p`` among steps ``>= max(start, 1)``."""
        w = np.asarray(self.weights[max(start, 1):])
        return int(np.count_nonzero(w > p))


def invade(tree, steps):
    if steps < 1:
        raise ValueError("steps must be >= 1")
    return InvasionRun(tree).extend(steps)


# backbone -----------------------------------------------------------------


@dataclass
class BackboneTrace:
    """Certified backbone prefix and pivot/dual-pivot bounds along it.

    ``path[n]`` is gamma_n (``path[0]`` the run's root).  ``beta_lower[n]`` and
    ``beta_upper[n]`` bracket beta(gamma_n); they coincide where the pivot is
    resolved exactly.  Dual pivot bounds are filled by :func:`dual_pivots`.
    """

    path: list
    certified_len: int
    beta_lower: np.ndarray
    beta_upper: np.ndarray
    risk: np.ndarray
    b_out: np.ndarray
    p_c: float
    steps: int
    candidate_len: int = 0
    diagnostic: str = ""
    dual_lower: np.ndarray = None
    dual_upper: np.ndarray = None
    inconclusive: list = field(default_factory=list)

    @property
    def h_lower(self):
        return self.beta_lower - self.p_c

    @property
    def h_upper(self):
        return self.beta_upper - self.p_c

    @property
    def resolved(self):
        """Boolean mask of n whose pivot is known exactly."""
        return self.beta_lower >= self.beta_upper

    @property
    def resolved_len(self):
        """Length of the leading run of exactly resolved pivots."""
        r = self.resolved
        bad = np.flatnonzero(~r)
        return int(bad[0]) if bad.size else len(r)

    @property
    def h(self):
        """Exactly resolved h_n = beta_n - p_c for the leading resolved prefix."""
        return self.h_lower[: self.resolved_len].copy()

    @property
    def h_star_lower(self):
        return None if self.dual_lower is None else self.dual_lower - self.p_c

    @property
    def h_star_upper(self):
        return None if self.dual_upper is None else self.dual_upper - self.p_c


def _lca(arena, nodes):
    """Deepest common ancestor; every vertex is climbed at most once."""
    parent, depth = arena.parent, arena.depth
    it = iter(nodes)
    first = next(it)
    spine = set(arena.ancestors(first))
    reach = {}
    best = first
    for b in it:
        stack = []
        x = b
        while x not in spine and x not in reach:
            stack.append(x)
            x = parent[x]
        a = x if x in spine else reach[x]
        for y in stack:
            reach[y] = a
        if depth[a] < depth[best]:
            best = a
    return best


def backbone(run, solver, policy=CertificationPolicy()):
    """Certify a backbone prefix from a finished invasion run.

    The candidate path runs from the root to the common ancestor of every
    vertex invaded during the final ``tail_fraction`` of the run; ``gamma_n``
    is certified when the conditional probability that the invasion ever
    leaves ``T(gamma_n)`` is at most ``policy.risk``.
    """
    arena, root = run.arena, run.root
    parent, depth, u = arena.parent, arena.depth, arena.u
    base = depth[root]
    p_c = solver.p_c
    steps = run.step_count
    tail_start = max(1, int(math.floor((1.0 - policy.tail_fraction) * steps)) + 1)
    tail = run.invaded[tail_start:]
    if steps < 2 or not tail:
        return _empty_trace(root, p_c, steps, "run too short")
    top = _lca(arena, tail)
    path = arena.ancestors(top)
    path = path[path.index(root):] if root != 0 else path
    cand = len(path) - 1
    on_path = {v: i for i, v in enumerate(path)}

    # k[v]: index of the deepest path vertex that is an ancestor of v
    kmap = {root: 0}
    inv_k = np.empty(len(run.invaded), dtype=np.int64)
    inv_k[0] = -1
    for t in range(1, len(run.invaded)):
        v = run.invaded[t]
        i = on_path.get(v)
        if i is not None:
            kmap[v] = i
            inv_k[t] = i - 1  # strictly inside T(gamma_n) for n < i
        else:
            kv = kmap[parent[v]]
            kmap[v] = kv
            inv_k[t] = kv
    bw = np.fromiter((w for w, _ in run.boundary), dtype=float, count=len(run.boundary))
    bk = np.fromiter((kmap[parent[v]] for _, v in run.boundary), dtype=np.int64, count=len(run.boundary))

    # b_out[n] = min boundary weight outside T(gamma_n), n = 0..cand
    min_by_k = np.full(cand + 1, np.inf)
    np.minimum.at(min_by_k, bk, bw)
    b_out = np.full(cand + 1, np.inf)
    b_out[1:] = np.minimum.accumulate(min_by_k[:-1])
    # tabulated g, shaded down so the risk is never understated
    g_out = np.ones(cand + 1)
    fin = np.isfinite(b_out) & (b_out < 1.0)
    g_out[fin] = solver.g_table(b_out[fin]) * (1.0 - G_SHADE)
    risk = np.zeros(cand + 1)
    L = cand
    for n in range(1, cand + 1):
        b = b_out[n]
        if not np.isfinite(b):
            continue
        N = int(np.count_nonzero((bk >= n) & (bw < b)))
        g_b = g_out[n]
        risk[n] = 1.0 if g_b <= 0.0 else (1.0 - g_b) ** N
        if risk[n] > policy.risk:
            L = n - 1
            risk[n + 1:] = 1.0
            break
    if L <= 0:
        tr = _empty_trace(root, p_c, steps, "certification failed beyond L=0: run too short")
        tr.candidate_len = cand
        return tr

    # M_in[n] = largest weight invaded strictly inside T(gamma_n)
    wts = np.asarray(run.weights)
    m_by_k = np.full(cand + 1, -np.inf)
    sel = inv_k >= 0
    np.maximum.at(m_by_k, inv_k[sel], wts[sel])
    M_in = np.maximum.accumulate(m_by_k[::-1])[::-1]
    path_w = np.array([u[v] for v in path])
    # F[n] = max_{n < j <= L} U(gamma_j)
    F = np.full(L + 1, -np.inf)
    for n in range(L - 1, -1, -1):
        F[n] = max(F[n + 1], path_w[n + 1])
    up_L = max(M_in[L], b_out[L])
    lower = M_in[: L + 1].copy()
    upper = np.maximum(F, up_L)
    upper = np.minimum(upper, np.maximum(M_in[: L + 1], b_out[: L + 1]))
    upper = np.maximum(upper, lower)
    return BackboneTrace(
        path=path[: L + 1],
        certified_len=L,
        beta_lower=lower,
        beta_upper=upper,
        risk=risk[: L + 1],
        b_out=b_out[: L + 1],
        p_c=p_c,
        steps=steps,
        candidate_len=cand,
    )


def _empty_trace(root, p_c, steps, diagnostic):
    return BackboneTrace(
        path=[root],
        certified_len=0,
        beta_lower=np.zeros(0),
        beta_upper=np.zeros(0),
        risk=np.zeros(1),
        b_out=np.full(1, np.inf),
        p_c=p_c,
        steps=steps,
        diagnostic=diagnostic,
    )


def certified_backbone(tree, solver, min_len, policy=CertificationPolicy(), start=2000, max_steps=400_000,
                       resolved=False):
    """Invade in doubling chunks until the certified (optionally resolved) length reaches ``min_len``."""
    run = InvasionRun(tree)
    target = start
    while True:
        run.extend(target - run.step_count)
        tr = backbone(run, solver, policy)
        have = tr.resolved_len if resolved else tr.certified_len
        if have >= min_len or run.step_count >= max_steps:
            return run, tr
        target = min(2 * target, max_steps)


# pivots -------------------------------------------------------------------


@dataclass(frozen=True)
class PivotBounds:
    lower: float
    upper: float
    witness: int = -1
    inconclusive: bool = False


def _bottleneck(arena, node, depth_cap, cutoff=1.0):
    """beta_D(node) by best-first search; returns (value, witness) or (value > cutoff, -1)."""
    u, first, deg, dep = arena.u, arena.first_child, arena.deg, arena.depth
    target = dep[node] + depth_cap
    heap = [(u[c], c) for c in arena.expand(node)]
    heapq.heapify(heap)
    level = 0.0
    pop, push = heapq.heappop, heapq.heappush
    while True:
        w, v = pop(heap)
        if w > level:
            level = w
            if level > cutoff:
                return level, -1
        if dep[v] >= target:
            return level, v
        f = first[v]
        if f < 0:
            arena.expand(v)
            f = first[v]
        for c in range(f, f + deg[v]):
            push(heap, (u[c], c))


def _survives(arena, start, level, extra_depth, budget=200_000):
    """Depth-first probe: is there a path of ``extra_depth`` levels below ``start`` with weights <= level?"""
    u, dep = arena.u, arena.depth
    target = dep[start] + extra_depth
    stack = [start]
    seen = 0
    while stack:
        v = stack.pop()
        if dep[v] >= target:
            return True
        seen += 1
        if seen > budget:
            return False
        kids = [c for c in arena.expand(v) if u[c] <= level]
        kids.sort(key=u.__getitem__, reverse=True)
        stack.extend(kids)
    return False


def _conditional_quantile(arena, node, solver, depth_cap, v, cutoff=1.0, budget=2_000_000):
    """Best-first exploration of ``T(node)`` to relative depth ``depth_cap``.

    Returns ``(beta_D, x)`` where ``x`` is the ``v``-quantile of the law of
    ``beta(node)`` given the explored region: ``P[beta <= x] = 1 - (1 - g(x))**N(x)``
    with ``N(x)`` the number of depth-``depth_cap`` vertices reached at level
    ``x``.  ``x`` is ``inf`` when the level passes ``cutoff`` or the node
    budget runs out first; ``beta_D`` is then still a valid lower bound.
    """
    u, first, deg, dep = arena.u, arena.first_child, arena.deg, arena.depth
    target = dep[node] + depth_cap
    heap = [(u[c], c) for c in arena.expand(node)]
    heapq.heapify(heap)
    pop, push = heapq.heappop, heapq.heappush
    g = solver.g
    level = 0.0
    beta_d = None
    n_deep = 0
    y = 1.0
    seen = 0
    while True:
        w_next = heap[0][0]
        if n_deep:
            if g(level) >= y:
                return beta_d, level
            if g(w_next) >= y:
                return beta_d, max(level, float(solver.g_inverse(y)))
        w, x = pop(heap)
        if w > level:
            level = w
            if level > cutoff:
                return (level if beta_d is None else beta_d), math.inf
        if dep[x] >= target:
            if beta_d is None:
                beta_d = level
            n_deep += 1
            y = -math.expm1(math.log1p(-v) / n_deep) if v < 1.0 else 1.0
            continue
        seen += 1
        if seen > budget:
            return (level if beta_d is None else beta_d), math.inf
        f = first[x]
        if f < 0:
            arena.expand(x)
            f = first[x]
        for c in range(f, f + deg[x]):
            push(heap, (u[c], c))


def pivot_beta(arena, node, depth_cap=DEFAULT_DEPTH_CAP, tol=DEFAULT_TOL, cutoff=1.0, solver=None, risk=1e-9):
    """Bounds on the pivot of ``node``.

    The lower bound ``beta_D`` is the least level at which ``node`` reaches
    ``depth_cap`` generations down through vertices of weight at most that
    level (the minimax value over the truncated subtree).

    With a ``solver`` the upper bound is certified: it is the level ``x``
    at which, given everything explored, ``P[beta > x] <= risk``.  Without
    one, the upper bound is ``beta_D + tol`` when percolation at that level
    continues a further ``depth_cap`` generations below the witness, a
    heuristic that can undershoot near criticality.  Either way an
    unsuccessful probe gives the sentinel 1.0 with ``inconclusive`` set.
    Searches stop once the level exceeds ``cutoff``; the lower bound stays valid.
    """
    if hasattr(arena, "arena"):
        arena = arena.arena
    if solver is not None:
        lo, hi = _conditional_quantile(arena, node, solver, depth_cap, 1.0 - risk, cutoff)
        if math.isinf(hi):
            return PivotBounds(lo, 1.0, -1, inconclusive=True)
        return PivotBounds(lo, min(1.0, hi))
    lo, witness = _bottleneck(arena, node, depth_cap, cutoff)
    if witness < 0:
        return PivotBounds(lo, 1.0, -1, inconclusive=True)
    level = min(1.0, lo + tol)
    if _survives(arena, witness, level, depth_cap):
        return PivotBounds(lo, level, witness)
    warnings.warn(f"pivot probe inconclusive at node {node}", InconclusiveProbe, stacklevel=2)
    return PivotBounds(lo, 1.0, witness, inconclusive=True)


def sample_pivot(arena, node, solver, depth_cap=DEFAULT_DEPTH_CAP, uniform=None):
    """Draw beta(node) from its law given the realized tree down to ``depth_cap``.

    Below the cap the subtrees are integrated out, so the draw has exactly
    the law of beta(node) whatever ``depth_cap`` is; larger caps just use
    more of the quenched tree.  The driving uniform is keyed to the vertex,
    so repeated calls agree.
    """
    if uniform is None:
        uniform = rng.to_unit(rng.mix(arena.key[node] ^ _SALT_PIVOT ^ arena._wsalt))
    return _conditional_quantile(arena, node, solver, depth_cap, uniform)[1]


def dual_pivots(trace, arena, solver, depth_cap=DEFAULT_DEPTH_CAP, risk=1e-9):
    """Bounds on beta*_n along a certified backbone; fills ``trace.dual_lower/upper``.

    beta*_n is the least level at which some strict ancestor of gamma_n
    escapes to infinity avoiding T(gamma_n), i.e. the running minimum over
    m < n and children c != gamma_{m+1} of gamma_m of max(U_c, beta(c)).
    beta*_0 = 1.
    """
    u = arena.u
    L = trace.certified_len
    lo = np.ones(L + 1)
    hi = np.ones(L + 1)
    cur_lo, cur_hi = 1.0, 1.0
    flagged = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", InconclusiveProbe)
        for m in range(L):
            g_m, nxt = trace.path[m], trace.path[m + 1]
            for c in arena.expand(g_m):
                if c == nxt or u[c] >= cur_hi:
                    continue
                b = pivot_beta(arena, c, depth_cap, cutoff=cur_hi, solver=solver, risk=risk)
                if b.inconclusive and b.lower <= cur_hi:
                    flagged.append(c)
                cur_lo = min(cur_lo, max(u[c], b.lower))
                cur_hi = min(cur_hi, max(u[c], b.upper))
            lo[m + 1], hi[m + 1] = cur_lo, cur_hi
    trace.dual_lower, trace.dual_upper = lo, hi
    trace.inconclusive = flagged
    return lo


# completed pivots ------------------------------------------------------------

_SALT_TAIL = 0xA54FF53A5F1D36F1


@dataclass
class CompletedBackbone:
    """Backbone and pivots of a run completed below its boundary.

    The subtrees hanging below boundary vertices are unexplored, hence fresh
    and independent of the run; each boundary vertex gets a pivot drawn from
    its exact law, after which every pivot in the invaded cluster is an exact
    minimax value and the backbone is the greedy path
    ``gamma_{n+1} = argmin_c max(U_c, beta(c))``.
    """

    path: list
    beta: np.ndarray
    p_c: float
    dual: np.ndarray = None

    @property
    def h(self):
        return self.beta - self.p_c

    @property
    def h_star(self):
        return self.dual - self.p_c

    def __len__(self):
        return len(self.path) - 1


def tail_pivot(arena, node, solver, depth_cap=0):
    """A draw of beta(node) with the exact law g, keyed to the vertex.

    ``depth_cap = 0`` inverts g at a hashed uniform; larger caps condition on
    the realized subtree (see :func:`sample_pivot`).
    """
    v = rng.to_unit(rng.mix(arena.key[node] ^ _SALT_TAIL ^ arena._wsalt))
    if depth_cap <= 0:
        return float(solver.g_inverse(v))
    return _conditional_quantile(arena, node, solver, depth_cap, v)[1]


def completed_backbone(run, solver, tail_depth=0):
    """Exact pivots along the backbone of ``run``'s cluster completed with tail pivots."""
    arena = run.arena
    u, first, deg = arena.u, arena.first_child, arena.deg
    invaded = set(run.invaded)
    beta = {}
    if tail_depth <= 0:
        nodes = [v for _, v in run.boundary]
        keys = np.fromiter((arena.key[v] for v in nodes), dtype=np.uint64, count=len(nodes))
        salt = np.uint64(_SALT_TAIL ^ arena._wsalt)
        vals = solver.g_inverse(rng.to_unit_array(rng.mix_array(keys ^ salt)))
        beta.update(zip(nodes, vals.tolist()))
    else:
        for _, v in run.boundary:
            beta[v] = tail_pivot(arena, v, solver, tail_depth)
    best_child = {}
    for v in reversed(run.invaded):
        f = first[v]
        best, arg = math.inf, -1
        for c in range(f, f + deg[v]):
            b = beta[c]
            val = u[c] if u[c] > b else b
            if val < best:
                best, arg = val, c
        beta[v] = best
        best_child[v] = arg
    path = [run.root]
    dual = [1.0]
    v = run.root
    while v in invaded:
        nxt = best_child[v]
        esc = dual[-1]
        f = first[v]
        for c in range(f, f + deg[v]):
            if c != nxt:
                esc = min(esc, max(u[c], beta[c]))
        dual.append(esc)
        path.append(nxt)
        v = nxt
    return CompletedBackbone(path=path, beta=np.array([beta[v] for v in path]), p_c=solver.p_c,
                             dual=np.array(dual))
