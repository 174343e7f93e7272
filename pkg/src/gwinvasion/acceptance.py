"""Acceptance experiments: one function per criterion, each returning verdicts.

Every function takes a master ``seed`` and a ``scale`` in ``(0, 1]`` that
shrinks replicate counts for quick runs (verdicts are only meaningful at
``scale = 1``), plus a ``mapper`` used to fan out per-tree work.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .invasion import _SALT_PIVOT, _conditional_quantile, backbone, completed_backbone, invade
from .measures import (
    P_BOUNDARY_P1_ZERO,
    kl_X,
    main_theorem_condition,
    p1_boundary,
    qtilde,
    sandwich_check,
    split_q_mc,
)
from .offspring import OffspringDistribution
from .pivot_chain import (
    SAMPLE_FROM_L,
    PivotKernel,
    corridor_start,
    couple_min_uniform,
    dual_decay_experiment,
    lpe_values,
    run_chain,
)
from .stats import ks_analytic, ks_critical, ks_two_sample, mean_se
from .survival import SurvivalSolver
from .tree import TreeArena

LPE_FREE_START = 1e6


@dataclass
class Verdict:
    criterion: int
    name: str
    passed: bool
    value: float
    tolerance: str
    detail: str = ""
    informational: bool = False

    def line(self):
        tag = "info" if self.informational else ("PASS" if self.passed else "FAIL")
        where = f"criterion {self.criterion} " if self.criterion else ""
        return f"[{tag}] {where}{self.name}: value={_fmt(self.value)} tolerance {self.tolerance}" + (
            f" ({self.detail})" if self.detail else ""
        )


@dataclass
class CriterionResult:
    criterion: int
    verdicts: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(v.passed for v in self.verdicts if not v.informational)


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".6g")


def _n(count, scale, floor=10):
    return max(floor, int(round(count * scale)))


_SOLVERS = {}


def _solver(dist):
    key = dist.spec()
    if key not in _SOLVERS:
        _SOLVERS[key] = SurvivalSolver(dist)
    return _SOLVERS[key]


Z2 = OffspringDistribution.deterministic(2)
Z3 = OffspringDistribution.deterministic(3)
Z12 = OffspringDistribution.two_point(0.4)


# 1 -------------------------------------------------------------------------


def survival_oracle(seed=0, scale=1.0, mapper=map):
    t0 = time.perf_counter()
    s = SurvivalSolver(Z2)
    ps = np.linspace(0.5, 0.999, 51)[1:]
    eg = max(abs(s.g(p) - (2 * p - 1) / p**2) for p in ps)
    ed = max(abs(s.g_prime(p) - (2 - 2 * p) / p**3) for p in ps)
    fast = time.perf_counter() - t0 < 1.0
    res = CriterionResult(1)
    res.verdicts += [
        Verdict(1, "g closed form, max error", eg < 1e-10, eg, "< 1e-10"),
        Verdict(1, "g' closed form, max error", ed < 1e-8, ed, "< 1e-8"),
        Verdict(1, "runtime", fast, fast, "< 1 s"),
    ]
    return res


# 2 -------------------------------------------------------------------------


def k_limit(seed=0, scale=1.0, mapper=map):
    t0 = time.perf_counter()
    res = CriterionResult(2)
    for dist, K in ((Z2, 8.0), (Z3, 9.0)):
        s = SurvivalSolver(dist)
        err = abs(s.g_prime(s.p_c + 1e-5) - K)
        res.verdicts.append(Verdict(2, f"g'(p_c + 1e-5) vs K={K:g} on {dist.name}", err < 1e-3, err, "< 1e-3"))
    fast = time.perf_counter() - t0 < 1.0
    res.verdicts.append(Verdict(2, "runtime", fast, fast, "< 1 s"))
    return res


# 3 -------------------------------------------------------------------------


def _pivot_worker(args):
    dist, tree_seed, depth_cap = args
    s = _solver(dist)
    arena = TreeArena(dist, tree_seed)
    u = rng.to_unit(rng.mix(arena.key[0] ^ _SALT_PIVOT ^ arena._wsalt))
    beta_d, beta = _conditional_quantile(arena, 0, s, depth_cap, u)
    return beta, beta_d


def pivot_law(seed=0, scale=1.0, mapper=map, trees=10_000, depth_cap=25):
    s = _solver(Z2)
    n = _n(trees, scale, 200)
    out = list(mapper(_pivot_worker, [(Z2, rng.derive_seed(seed, i), depth_cap) for i in range(n)]))
    beta = np.array([b for b, _ in out])
    beta_d = np.array([b for _, b in out])
    cdf = np.vectorize(lambda x: s.g(min(max(x, 0.0), 1.0)))
    ks = ks_analytic(beta, cdf)
    ks_d = ks_analytic(beta_d, cdf)
    res = CriterionResult(3)
    res.verdicts.append(Verdict(3, f"KS of beta_0 (depth_cap {depth_cap}, {n} trees) vs g", ks <= 0.03, ks, "<= 0.03",
                                f"99% critical {ks_critical(n):.4f}"))
    res.verdicts.append(Verdict(3, "KS of truncated minimax beta_D vs g", ks_d <= 0.03, ks_d, "<= 0.03",
                                "lower bound only, biased low", informational=True))
    return res


# 4 -------------------------------------------------------------------------


def _entry_worker(args):
    dist, tree_seed, steps, windows, delta = args
    s = _solver(dist)
    cb = completed_backbone(invade(TreeArena(dist, tree_seed), steps), s)
    h = cb.h
    out = []
    for a in windows:
        hit = np.flatnonzero(np.abs(h - a) <= delta)
        if not hit.size:
            out.append(None)
        elif hit[0] + 1 >= len(h):
            out.append("end")
        else:
            out.append((float(h[hit[0]]), float(h[hit[0] + 1])))
    return out


def kernel_crosscheck(seed=0, scale=1.0, mapper=map, windows=(0.05, 0.15), samples=5000, delta=0.005, steps=100,
                      batch=4000, max_trees=2_000_000):
    s = _solver(Z2)
    kernel = PivotKernel(s)
    need = _n(samples, scale, 200)
    got = {a: [] for a in windows}
    ended = {a: 0 for a in windows}
    trees = 0
    while min(len(v) for v in got.values()) < need and trees < max_trees:
        jobs = [(Z2, rng.derive_seed(seed, trees + i), steps, windows, delta) for i in range(batch)]
        for row in mapper(_entry_worker, jobs):
            for a, r in zip(windows, row):
                if r == "end":
                    ended[a] += 1
                elif r is not None and len(got[a]) < need:
                    got[a].append(r)
        trees += batch
    gen = rng.generator(rng.derive_seed(seed, 0xC0FFEE))
    res = CriterionResult(4)
    for a in windows:
        pairs = np.array(got[a])
        start, nxt = pairs[:, 0], pairs[:, 1]
        ref = kernel.step_h(start, gen.random(len(start)))
        ks = ks_two_sample(nxt, ref)
        res.verdicts.append(Verdict(4, f"tree h_(n+1) vs kernel at a={a:g}", ks <= 0.05, ks, "<= 0.05",
                                    f"{len(start)} samples from {trees} trees, {ended[a]} paths ended in window, "
                                    f"99% critical {ks_critical(len(start), len(ref)):.4f}"))
    return res


# 5 -------------------------------------------------------------------------


def exp_limit_table(kernel, n, replicates, seed, points=21):
    vals = run_chain(kernel, SAMPLE_FROM_L, n, seed, replicates=replicates, record=[n]).values[:, 0] * n
    mu = kernel.solver.consts.mu
    cdf = lambda x: -np.expm1(-mu * np.asarray(x))
    ks = ks_analytic(vals, cdf)
    xs = np.quantile(vals, np.linspace(0.0, 1.0, points))
    emp = np.searchsorted(np.sort(vals), xs, side="right") / len(vals)
    return ks, np.column_stack((xs, emp, cdf(xs)))


def exponential_limit(seed=0, scale=1.0, mapper=map, n=500, replicates=4000):
    res = CriterionResult(5)
    reps = _n(replicates, scale, 200)
    for i, dist in enumerate((Z2, Z12)):
        ks, table = exp_limit_table(PivotKernel(_solver(dist)), n, reps, rng.derive_seed(seed, i))
        res.verdicts.append(Verdict(5, f"KS of n h_n vs Exp(mu) on {dist.name}", ks <= 0.05, ks, "<= 0.05",
                                    f"n={n}, {reps} replicates"))
        res.tables[dist.name] = table
    return res


# 6 -------------------------------------------------------------------------


def lpe_consistency(seed=0, scale=1.0, mapper=map, paths=100_000):
    m = _n(paths, scale, 1000)
    L1 = lpe_values(1.0, m, rng.derive_seed(seed, 1), start=LPE_FREE_START)
    L10 = lpe_values(10.0, m, rng.derive_seed(seed, 10), start=LPE_FREE_START)
    prob = float(np.mean(L1 > 0.5))
    err = abs(prob - math.exp(-0.5))
    ks = ks_two_sample(10.0 * L10, L1)
    res = CriterionResult(6)
    res.verdicts.append(Verdict(6, "P[L(1) > 0.5] - exp(-0.5)", err <= 0.005, err, "<= 0.005", f"{m} paths"))
    res.verdicts.append(Verdict(6, "KS(10 L(10), L(1))", ks <= 0.02, ks, "<= 0.02"))
    return res


# 7 -------------------------------------------------------------------------


def _corridor_worker(args):
    dist, tree_seed, steps, min_len, c1f, c2f = args
    s = _solver(dist)
    kernel = _kernel(dist)
    run = invade(TreeArena(dist, tree_seed), steps)
    cb = completed_backbone(run, s)
    if len(cb) < min_len:
        return None
    tr = backbone(run, s)
    agree = cb.path[: tr.certified_len + 1] == tr.path
    h = cb.h
    N = len(h) - 1
    c1, c2 = c1f * s.p_c, c2f * s.p_c
    out = {"agree": agree, "certified": tr.certified_len}
    for method in ("quantile", "reverse"):
        _, M = couple_min_uniform(kernel, h, tree_seed, c1, c2, method=method)
        n0 = corridor_start(h, M, c1, c2)
        out[method] = n0 is not None and n0 <= N / 2
    return out


_KERNELS = {}


def _kernel(dist):
    key = dist.spec()
    if key not in _KERNELS:
        _KERNELS[key] = PivotKernel(_solver(dist))
    return _KERNELS[key]


def coupling_corridor(seed=0, scale=1.0, mapper=map, trees=200, steps=100_000, min_len=30, c1f=0.9, c2f=1.1):
    n = _n(trees, scale, 20)
    jobs = [(Z2, rng.derive_seed(seed, i), steps, min_len, c1f, c2f) for i in range(n)]
    out = list(mapper(_corridor_worker, jobs))
    kept = [o for o in out if o is not None]
    rate_q = float(np.mean([o["quantile"] for o in kept]))
    rate_p = float(np.mean([o["reverse"] for o in kept]))
    agree = sum(o["agree"] for o in kept)
    res = CriterionResult(7)
    detail = (f"{len(kept)} runs kept, {n - len(kept)} shorter than {min_len}; corridor on [n0, N] with n0 <= N/2; "
              f"certified prefix matches completed path in {agree}/{len(kept)}")
    res.verdicts.append(Verdict(7, "corridor rate, quantile coupling", rate_q >= 0.9, rate_q, ">= 0.9", detail))
    res.verdicts.append(Verdict(7, "corridor rate, reverse Q_r coupling", rate_p >= 0.9, rate_p, ">= 0.9",
                                informational=True))
    return res


# 8 -------------------------------------------------------------------------


def dual_decay(seed=0, scale=1.0, mapper=map, t=0.75, n_grid=(50, 100, 200, 400), replicates=10_000):
    reps = _n(replicates, scale, 500)
    res = CriterionResult(8)
    for i, (dist, info) in enumerate(((Z2, False), (Z12, True))):
        tab = dual_decay_experiment(_kernel(dist), t, n_grid, reps, rng.derive_seed(seed, i))
        detail = "P = " + ", ".join(f"{p:.4f} [{lo:.4f}, {hi:.4f}]" for p, lo, hi in zip(tab.prob, tab.lo, tab.hi))
        res.verdicts.append(Verdict(8, f"P[h*_n > n^-{t:g}] strictly decreasing (99% Wilson) on {dist.name}",
                                    tab.decreasing, tab.decreasing, "nonoverlapping CIs", detail, informational=info))
        res.tables[dist.name] = np.column_stack((tab.n, tab.count, tab.prob, tab.lo, tab.hi))
    return res


# 9 -------------------------------------------------------------------------


def _heavy_worker(args):
    dist, tree_seed, steps, tail, p = args
    run = invade(TreeArena(dist, tree_seed), steps)
    return run.exceedances(p, start=steps - tail + 1)


def heavy_edges(seed=0, scale=1.0, mapper=map, seeds=200, steps=10_000, tail=5000, p=0.6):
    n = _n(seeds, scale, 20)
    ex = list(mapper(_heavy_worker, [(Z2, rng.derive_seed(seed, i), steps, tail, p) for i in range(n)]))
    rate = float(np.mean(np.array(ex) == 0))
    res = CriterionResult(9)
    res.verdicts.append(Verdict(9, f"runs with no weight > {p:g} in the final {tail} steps", rate >= 0.99, rate,
                                ">= 0.99", f"{n} seeds, {steps} steps"))
    return res


# 10 ------------------------------------------------------------------------


def _measure_worker(args):
    dist, tree_seed, replicates, p, rep_seed = args
    s = _solver(dist)
    arena = TreeArena(dist, tree_seed)
    est = split_q_mc(arena, 0, replicates, s, seed=rep_seed)
    qt = qtilde(arena, 0, p, replicates, s, seed=rep_seed ^ 0x9E3779B9)
    sw = sandwich_check(arena, 0, p, s, estimate=qt)
    kl = kl_X(est)
    return {
        "p": est.p_hat,
        "q_counts": est.q_hat * est.passing,
        "qt_counts": qt.q * qt.accepted,
        "X": kl.X,
        "bound": kl.bound,
        "within": kl.within_bound,
        "floor": (len(est.q_hat) - 1) / (2.0 * est.passing),
        "sandwich": not sw.violated,
        "ambiguous": qt.ambiguous,
    }


def measure_symmetry(seed=0, scale=1.0, mapper=map, trees=100, replicates=100, p=0.5):
    n = _n(trees, scale, 5)
    jobs = [(Z3, rng.derive_seed(seed, i), replicates, p, rng.derive_seed(seed ^ 0xA5A5, i)) for i in range(n)]
    out = list(mapper(_measure_worker, jobs))
    res = CriterionResult(10)
    target = 1.0 / 3.0
    p_all = np.concatenate([o["p"] for o in out])
    p_dev = float(np.max(np.abs(p_all - target)))
    res.verdicts.append(Verdict(10, "p split deviation from 1/3", p_dev <= 1e-12, p_dev, "exact on a regular tree"))
    for key, label in (("q_counts", "q"), ("qt_counts", f"q~(., {p:g})")):
        counts = np.sum([o[key] for o in out], axis=0)
        tot = counts.sum()
        share = counts / tot
        se = np.sqrt(share * (1 - share) / tot)
        z = np.abs(share - target) / se
        res.verdicts.append(Verdict(10, f"{label} pooled per child slot within 3 SE of 1/3", bool(np.all(z <= 3)),
                                    float(z.max()), "max |z| <= 3",
                                    "shares " + ", ".join(f"{x:.4f}" for x in share) + f" over {int(tot)} runs"))
    xc = np.array([o["X"] - o["floor"] for o in out])
    m, se = mean_se(xc)
    res.verdicts.append(Verdict(10, "mean X minus multinomial floor", abs(m) <= 3 * se, m, f"|.| <= 3 SE = {3 * se:.4g}"))
    within = sum(o["within"] for o in out)
    res.verdicts.append(Verdict(10, "X <= sum p eps^2 on every estimate", within == n, within, f"== {n}"))
    ok = sum(o["sandwich"] for o in out)
    amb = sum(o["ambiguous"] for o in out)
    res.verdicts.append(Verdict(10, "sandwich bound unviolated", ok == n, ok, f"== {n}", f"{amb} ambiguous runs dropped"))
    return res


# 11 ------------------------------------------------------------------------


def theorem_endpoints(seed=0, scale=1.0, mapper=map, mus=(1.2, 1.5, 2.0, 3.0, 10.0)):
    res = CriterionResult(11)
    m_inf = max(abs(main_theorem_condition(math.inf, p1_boundary(mu), mu).margin) for mu in mus)
    res.verdicts.append(Verdict(11, "margin at p = inf, p1 = mu^-(3+sqrt 17)/2", m_inf < 1e-9, m_inf, "< 1e-9"))
    m_0 = max(abs(main_theorem_condition(P_BOUNDARY_P1_ZERO, 0.0, mu).margin) for mu in mus)
    res.verdicts.append(Verdict(11, "margin at p1 = 0, p = (11+sqrt 105)/2", m_0 < 1e-9, m_0, "< 1e-9"))
    c = main_theorem_condition(12, 0.0, 2.0)
    res.verdicts.append(Verdict(11, "p = 12, p1 = 0 satisfies the condition", c.holds and c.margin == -16.0, c.margin,
                                "== -16", informational=True))
    return res


# 12 ------------------------------------------------------------------------

DETERMINISM_RUNS = [
    ["survival", "--p-grid", "0.5:1:0.05"],
    ["invade", "--steps", "200"],
    ["backbone", "--steps", "2000"],
    ["pivot-chain", "--n", "50", "--replicates", "200", "--joint"],
    ["exp-limit", "--n", "100", "--replicates", "500"],
    ["lpe", "--t", "2", "--paths", "2000"],
    ["dual-decay", "--replicates", "500"],
    ["kl", "--dist", "family=deterministic,b=3", "--trees", "2", "--replicates", "20", "--n-max", "2"],
    ["thm1-check", "--p", "inf", "--p1", "0.01", "--mu", "2"],
    ["validate-all", "--criteria", "1,2,11", "--scale", "0.01"],
]


def determinism(seed=0, scale=1.0, mapper=map):
    from .cli import run_argv

    res = CriterionResult(12)
    bad = []
    for argv in DETERMINISM_RUNS:
        for emit in ("csv", "json"):
            full = argv + ["--seed", str(seed), "--emit", emit]
            a = run_argv(full)[0]
            b = run_argv(full)[0]
            if a != b:
                bad.append(f"{argv[0]}/{emit}")
    n = 2 * len(DETERMINISM_RUNS)
    res.verdicts.append(Verdict(12, "byte-identical reruns", not bad, n - len(bad), f"== {n}",
                                ("differ: " + ", ".join(bad)) if bad else "every subcommand, csv and json"))
    return res


CRITERIA = {
    1: survival_oracle,
    2: k_limit,
    3: pivot_law,
    4: kernel_crosscheck,
    5: exponential_limit,
    6: lpe_consistency,
    7: coupling_corridor,
    8: dual_decay,
    9: heavy_edges,
    10: measure_symmetry,
    11: theorem_endpoints,
    12: determinism,
}
