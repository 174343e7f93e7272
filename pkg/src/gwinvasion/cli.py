"""Command line experiments: ``python -m gwinvasion <experiment> [flags]``.

Every report starts with ``#`` header lines echoing the experiment, master
seed and configuration, then the verdicts (each with its tolerance), then
the tables.  Reports depend only on (config, seed, version); wall-clock time
goes to stderr.  The exit code is 0 iff every verdict passes.

Flags may also come from ``--config FILE``, a flat ``key = value`` file
(``#`` comments, lists as ``[a, b]`` or ``a, b``, booleans as true/false);
explicit flags override the file.  Replicate ``i`` of a run with master
seed ``s`` uses the stream ``rng.derive_seed(s, i)``.
"""

import argparse
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from . import acceptance
from .invasion import backbone, completed_backbone, invade
from .measures import ac_diagnostic, main_theorem_condition
from .offspring import OffspringDistribution
from .pivot_chain import SAMPLE_FROM_L, PivotKernel, dual_decay_experiment, lpe_values, run_chain
from .stats import ks_analytic, ks_critical, ks_two_sample
from .survival import SurvivalSolver
from .tree import TreeArena

EXPERIMENTS = (
    "survival",
    "invade",
    "backbone",
    "pivot-chain",
    "exp-limit",
    "lpe",
    "dual-decay",
    "kl",
    "thm1-check",
    "validate-all",
)
DEFAULT_DIST = "family=deterministic,b=2"


class ConfigError(ValueError):
    pass


# report ----------------------------------------------------------------------


@dataclass
class Table:
    name: str
    columns: list
    rows: list


@dataclass
class ExperimentReport:
    experiment: str
    seed: int
    config: dict
    tables: list = field(default_factory=list)
    verdicts: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def passed(self):
        return all(v.passed for v in self.verdicts if not v.informational)

    def to_csv(self):
        out = [f"# experiment={self.experiment}", f"# seed={self.seed}", f"# version={__version__}"]
        out += [f"# config {k}={_cell(v)}" for k, v in self.config.items()]
        out += [f"# note {n}" for n in self.notes]
        out += ["# " + v.line() for v in self.verdicts]
        for t in self.tables:
            if len(self.tables) > 1:
                out.append(f"# table {t.name}")
            out.append(",".join(t.columns))
            out += [",".join(_cell(x) for x in row) for row in t.rows]
        return "\n".join(out) + "\n"

    def to_json(self):
        doc = {
            "experiment": self.experiment,
            "seed": self.seed,
            "version": __version__,
            "config": {k: _jsonable(v) for k, v in self.config.items()},
            "notes": self.notes,
            "verdicts": [
                {
                    "criterion": v.criterion,
                    "name": v.name,
                    "passed": bool(v.passed),
                    "informational": v.informational,
                    "value": _jsonable(v.value),
                    "tolerance": v.tolerance,
                    "detail": v.detail,
                }
                for v in self.verdicts
            ],
            "tables": {t.name: {"columns": t.columns, "rows": [[_jsonable(x) for x in r] for r in t.rows]}
                       for t in self.tables},
            "passed": self.passed,
        }
        return json.dumps(doc, indent=1) + "\n"


def _cell(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".12g")
    if isinstance(x, (list, tuple)):
        return "[" + ",".join(_cell(y) for y in x) + "]"
    return str(x)


def _jsonable(x):
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(format(float(x), ".12g"))
        return x if math.isfinite(x) else str(x)
    if isinstance(x, (list, tuple)):
        return [_jsonable(y) for y in x]
    return x


def _verdict(name, passed, value, tolerance, detail="", informational=False):
    return acceptance.Verdict(0, name, bool(passed), value, tolerance, detail, informational)


# argument parsing ------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer")
    if v <= 0:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {v}")
    return v


def _positive_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a number")
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {v}")
    return v


def _int_list(text):
    try:
        vals = [int(x) for x in text.strip("[]").split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a list of integers")
    if not vals or any(v <= 0 for v in vals):
        raise argparse.ArgumentTypeError("list entries must be positive")
    return vals


def _dist(text):
    try:
        return OffspringDistribution.parse(text)
    except (ValueError, KeyError) as exc:
        raise argparse.ArgumentTypeError(f"bad distribution {text!r}: {exc}")


def _threads_default():
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--dist", type=_dist, default=DEFAULT_DIST,
                        help="offspring law, e.g. 'family=two_point,p1=0.4' or 'pmf=[[1,0.4],[2,0.6]]'")
    common.add_argument("--seed", type=int, default=0, help="master seed")
    common.add_argument("--emit", choices=("csv", "json"), default="csv")
    common.add_argument("--out", default=None, help="output path (default stdout)")
    common.add_argument("--threads", type=_positive_int, default=_threads_default())
    common.add_argument("--config", default=None, help="flat key=value config file")

    parser = _Parser(prog="gwinvasion", description="Invasion percolation on Galton-Watson trees.")
    sub = parser.add_subparsers(dest="experiment", required=True, parser_class=_Parser)

    p = sub.add_parser("survival", parents=[common], help="g(p) and g'(p) on a grid")
    p.add_argument("--p-grid", default="0.5:1:0.01", help="a:b:step")

    p = sub.add_parser("invade", parents=[common], help="invasion log")
    p.add_argument("--steps", type=_positive_int, default=1000)

    p = sub.add_parser("backbone", parents=[common], help="certified backbone with pivots")
    p.add_argument("--steps", type=_positive_int, default=20000)

    p = sub.add_parser("pivot-chain", parents=[common], help="analytic pivot chain summaries")
    p.add_argument("--n", type=_positive_int, default=100)
    p.add_argument("--replicates", type=_positive_int, default=1000)
    p.add_argument("--joint", action="store_true", help="also run the dual pivot")
    p.add_argument("--h0", type=_positive_float, default=None, help="fixed start (default: drawn from its law)")

    p = sub.add_parser("exp-limit", parents=[common], help="n h_n against its exponential limit")
    p.add_argument("--n", type=_positive_int, default=500)
    p.add_argument("--replicates", type=_positive_int, default=4000)
    p.add_argument("--tolerance", type=_positive_float, default=0.05)

    p = sub.add_parser("lpe", parents=[common], help="Poisson lower envelope at time t")
    p.add_argument("--t", type=_positive_float, default=1.0)
    p.add_argument("--paths", type=_positive_int, default=100_000)

    p = sub.add_parser("dual-decay", parents=[common], help="tail of the dual pivot")
    p.add_argument("--t", type=_positive_float, default=0.75)
    p.add_argument("--n-grid", type=_int_list, default=[50, 100, 200, 400])
    p.add_argument("--replicates", type=_positive_int, default=10_000)

    p = sub.add_parser("kl", parents=[common], help="KL series along the backbone")
    p.add_argument("--prefix-depth", type=_positive_int, default=25, help="martingale proxy depth D")
    p.add_argument("--replicates", type=_positive_int, default=200, help="weight redraws per tree")
    p.add_argument("--trees", type=_positive_int, default=4)
    p.add_argument("--n-max", type=_positive_int, default=10)
    p.add_argument("--min-count", type=_positive_int, default=10)

    p = sub.add_parser("thm1-check", parents=[common], help="absolute-continuity condition")
    p.add_argument("--p", default="inf", help="moment order (a number or inf)")
    p.add_argument("--p1", type=float, required=True)
    p.add_argument("--mu", type=_positive_float, default=None, help="default: mean of --dist")

    p = sub.add_parser("validate-all", parents=[common], help="every acceptance criterion")
    p.add_argument("--criteria", type=_int_list, default=sorted(acceptance.CRITERIA))
    p.add_argument("--scale", type=_positive_float, default=1.0, help="replicate multiplier in (0, 1]")
    return parser


def load_config(path):
    """Flat ``key = value`` lines to argv tokens."""
    tokens = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key = key.strip().replace("_", "-")
            value = value.strip()
            if value.startswith("[") and value.endswith("]") and key != "dist":
                value = ",".join(x.strip() for x in value[1:-1].split(","))
            if value.lower() in ("true", "false"):
                if value.lower() == "true":
                    tokens.append(f"--{key}")
                continue
            tokens += [f"--{key}", value]
    return tokens


def parse(argv):
    argv = list(argv)
    if argv and "--config" in argv:
        i = argv.index("--config")
        if i + 1 >= len(argv):
            raise ConfigError("--config needs a path")
        path = argv[i + 1]
        rest = argv[:i] + argv[i + 2 :]
        if not rest:
            raise ConfigError("experiment name missing")
        argv = rest[:1] + load_config(path) + rest[1:]
    if argv and argv[0] not in EXPERIMENTS and not argv[0].startswith("-"):
        raise ConfigError(f"unknown experiment {argv[0]!r}; choose from {', '.join(EXPERIMENTS)}")
    args = build_parser().parse_args(argv)
    if isinstance(args.dist, str):
        args.dist = _dist(args.dist)
    return args


# experiments -------------------------------------------------------------------


def _echo(args, *keys):
    cfg = {"dist": args.dist.spec()}
    for k in keys:
        cfg[k] = getattr(args, k.replace("-", "_"))
    return cfg


def _grid(text):
    try:
        a, b, step = (float(x) for x in text.split(":"))
    except ValueError:
        raise ConfigError(f"--p-grid must be a:b:step, got {text!r}")
    if step <= 0 or b < a or not (0.0 <= a and b <= 1.0):
        raise ConfigError("--p-grid needs 0 <= a <= b <= 1 and step > 0")
    n = int(math.floor((b - a) / step + 1e-9))
    return [min(b, a + i * step) for i in range(n + 1)]


def _g_prime(s, p):
    if p < s.p_c:
        return 0.0
    if p - s.p_c < 1e-15:
        return s.consts.K
    if p >= 1.0:
        p1 = s.dist.p1
        return p1 / (1.0 - p1)
    return s.g_prime(p)


def exp_survival(args, mapper):
    s = SurvivalSolver(args.dist)
    rows = [[p, s.g(p), _g_prime(s, p)] for p in _grid(args.p_grid)]
    rep = ExperimentReport("survival", args.seed, _echo(args, "p-grid"))
    rep.tables.append(Table("survival", ["p", "g", "g_prime"], rows))
    return rep


def exp_invade(args, mapper):
    run = invade(TreeArena(args.dist, args.seed), args.steps)
    arena = run.arena
    rows = [[t, v, arena.depth[v], run.weights[t]] for t, v in enumerate(run.invaded) if t > 0]
    rep = ExperimentReport("invade", args.seed, _echo(args, "steps"))
    rep.tables.append(Table("invade", ["step", "nodeid", "depth", "u_weight"], rows))
    return rep


def exp_backbone(args, mapper):
    s = SurvivalSolver(args.dist)
    run = invade(TreeArena(args.dist, args.seed), args.steps)
    tr = backbone(run, s)
    cb = completed_backbone(run, s)
    rep = ExperimentReport("backbone", args.seed, _echo(args, "steps"))
    rep.notes.append(f"certified_len={tr.certified_len} resolved_len={tr.resolved_len} candidate_len={tr.candidate_len}")
    if tr.diagnostic:
        rep.notes.append(tr.diagnostic)
    agree = cb.path[: tr.certified_len + 1] == tr.path
    rep.verdicts.append(_verdict("completed path extends the certified prefix", agree, agree, "== true"))
    rows = []
    for n in range(tr.certified_len + 1):
        rows.append([n, cb.h[n], cb.h_star[n], tr.beta_lower[n], tr.beta_upper[n]])
    rep.tables.append(Table("backbone", ["n", "h_n", "h_star_n", "beta_lower", "beta_upper"], rows))
    return rep


def exp_pivot_chain(args, mapper):
    k = PivotKernel(SurvivalSolver(args.dist))
    h0 = SAMPLE_FROM_L if args.h0 is None else args.h0
    path = run_chain(k, h0, args.n, args.seed, joint=args.joint, replicates=args.replicates)
    cols = ["n", "mean_h", "sd_h", "mean_n_h"] + (["mean_h_star", "sd_h_star"] if args.joint else [])
    rows = []
    for n in range(args.n + 1):
        h = path.values[:, n]
        row = [n, h.mean(), h.std(ddof=1) if len(h) > 1 else 0.0, n * h.mean()]
        if args.joint:
            d = path.dual[:, n]
            row += [d.mean(), d.std(ddof=1) if len(d) > 1 else 0.0]
        rows.append(row)
    rep = ExperimentReport("pivot-chain", args.seed, _echo(args, "n", "replicates", "joint", "h0"))
    rep.tables.append(Table("pivot_chain", cols, rows))
    return rep


def exp_exp_limit(args, mapper):
    k = PivotKernel(SurvivalSolver(args.dist))
    ks, table = acceptance.exp_limit_table(k, args.n, args.replicates, args.seed)
    rep = ExperimentReport("exp-limit", args.seed, _echo(args, "n", "replicates", "tolerance"))
    rep.verdicts.append(_verdict("KS of n h_n vs Exp(mu)", ks <= args.tolerance, ks, f"<= {args.tolerance:g}"))
    rep.tables.append(Table("exp_limit", ["x", "empirical_cdf", "analytic_cdf", "ks"], [list(r) + [ks] for r in table]))
    return rep


def exp_lpe(args, mapper):
    from .rng import derive_seed

    t = args.t
    L = lpe_values(t, args.paths, derive_seed(args.seed, 0), start=acceptance.LPE_FREE_START)
    L1 = lpe_values(1.0, args.paths, derive_seed(args.seed, 1), start=acceptance.LPE_FREE_START)
    cdf = lambda x: -np.expm1(-t * np.asarray(x))
    ks = ks_analytic(L, cdf)
    ks_scale = ks_two_sample(t * L, L1)
    crit = ks_critical(args.paths)
    rep = ExperimentReport("lpe", args.seed, _echo(args, "t", "paths"))
    rep.verdicts.append(_verdict(f"KS of L({t:g}) vs 1 - exp(-t x)", ks <= crit, ks, f"<= {crit:.4g} (99%)"))
    crit2 = ks_critical(args.paths, args.paths)
    rep.verdicts.append(_verdict(f"KS({t:g} L({t:g}), L(1))", ks_scale <= crit2, ks_scale, f"<= {crit2:.4g} (99%)"))
    xs = np.quantile(L, np.linspace(0.0, 1.0, 21))
    emp = np.searchsorted(np.sort(L), xs, side="right") / len(L)
    rows = [[x, e, c, ks] for x, e, c in zip(xs, emp, cdf(xs))]
    rep.tables.append(Table("lpe", ["x", "empirical_cdf", "analytic_cdf", "ks"], rows))
    return rep


def exp_dual_decay(args, mapper):
    k = PivotKernel(SurvivalSolver(args.dist))
    if not 0.5 < args.t < 1.0:
        raise ConfigError("--t must lie in (1/2, 1)")
    tab = dual_decay_experiment(k, args.t, args.n_grid, args.replicates, args.seed)
    rep = ExperimentReport("dual-decay", args.seed, _echo(args, "t", "n-grid", "replicates"))
    rep.verdicts.append(_verdict(f"P[h*_n > n^-{args.t:g}] strictly decreasing", tab.decreasing, tab.decreasing,
                                 "nonoverlapping 99% Wilson CIs"))
    rows = [[n, c, c / tab.replicates, lo, hi] for n, c, lo, hi in zip(tab.n, tab.count, tab.lo, tab.hi)]
    rep.tables.append(Table("dual_decay", ["n", "count", "prob", "ci_lo", "ci_hi"], rows))
    return rep


def exp_kl(args, mapper):
    import warnings

    s = SurvivalSolver(args.dist)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        ser = ac_diagnostic(args.dist, args.n_max, args.trees, args.replicates, s, seed=args.seed,
                            proxy_depth=args.prefix_depth, min_count=args.min_count)
    rep = ExperimentReport("kl", args.seed, _echo(args, "prefix-depth", "replicates", "trees", "n-max", "min-count"))
    rep.notes += ser.warnings
    flat = ser.flattening()
    rep.verdicts.append(_verdict("no significant growth of E X_n over the last 5 terms", flat, flat,
                                 "weighted slope <= 3 SE"))
    ps, pse = ser.partial_sum, ser.partial_se
    rows = [[n, ser.EX[n], ser.se[n], ps[n], pse[n], ser.coverage[n]] for n in range(len(ser.EX))]
    rep.tables.append(Table("kl", ["n", "EX_n", "se", "partial_sum", "partial_se", "coverage"], rows))
    return rep


def exp_thm1(args, mapper):
    try:
        p = math.inf if args.p.strip().lower() in ("inf", "infinity") else float(args.p)
    except ValueError:
        raise ConfigError(f"--p must be a number or inf, got {args.p!r}")
    mu = args.dist.mean if args.mu is None else args.mu
    try:
        c = main_theorem_condition(p, args.p1, mu)
    except ValueError as exc:
        raise ConfigError(str(exc))
    rep = ExperimentReport("thm1-check", args.seed, {"p": args.p, "p1": args.p1, "mu": mu})
    rep.verdicts.append(_verdict("absolute-continuity condition", c.holds, c.margin, "margin < 0"))
    rep.tables.append(Table("thm1", ["p", "p1", "mu", "q", "margin", "holds"], [[p, args.p1, mu, c.q, c.margin, c.holds]]))
    return rep


def exp_validate_all(args, mapper):
    unknown = [c for c in args.criteria if c not in acceptance.CRITERIA]
    if unknown:
        raise ConfigError(f"unknown criteria {unknown}")
    if args.scale > 1.0:
        raise ConfigError("--scale must lie in (0, 1]")
    rep = ExperimentReport("validate-all", args.seed, {"criteria": args.criteria, "scale": args.scale})
    rows = []
    for c in args.criteria:
        res = acceptance.CRITERIA[c](seed=args.seed, scale=args.scale, mapper=mapper)
        for v in res.verdicts:
            rep.verdicts.append(v)
            tag = "info" if v.informational else ("pass" if v.passed else "fail")
            rows.append([c, v.name, tag, v.value, v.tolerance, v.detail])
    rep.tables.append(Table("criteria", ["criterion", "name", "verdict", "value", "tolerance", "detail"],
                            [[r[0], _quote(r[1]), r[2], r[3], _quote(r[4]), _quote(r[5])] for r in rows]))
    return rep


def _quote(text):
    text = str(text)
    return '"' + text.replace('"', '""') + '"' if ("," in text or '"' in text) else text


HANDLERS = {
    "survival": exp_survival,
    "invade": exp_invade,
    "backbone": exp_backbone,
    "pivot-chain": exp_pivot_chain,
    "exp-limit": exp_exp_limit,
    "lpe": exp_lpe,
    "dual-decay": exp_dual_decay,
    "kl": exp_kl,
    "thm1-check": exp_thm1,
    "validate-all": exp_validate_all,
}


# entry points --------------------------------------------------------------------


class _PoolMapper:
    def __init__(self, threads):
        self.threads = threads
        self.pool = None

    def __call__(self, fn, items):
        items = list(items)
        if self.threads <= 1 or len(items) < 2:
            return map(fn, items)
        if self.pool is None:
            import multiprocessing

            self.pool = multiprocessing.get_context("spawn").Pool(self.threads)
        return self.pool.imap(fn, items, chunksize=max(1, len(items) // (8 * self.threads)))

    def close(self):
        if self.pool is not None:
            self.pool.close()
            self.pool.join()


def run(args):
    """Dispatch a parsed config to its experiment; returns the report."""
    mapper = _PoolMapper(args.threads)
    try:
        return HANDLERS[args.experiment](args, mapper)
    finally:
        mapper.close()


def render(report, emit):
    return report.to_json() if emit == "json" else report.to_csv()


def run_argv(argv):
    """(report text, report) for an argument vector; raises :class:`ConfigError` on bad input."""
    args = parse(argv)
    report = run(args)
    return render(report, args.emit), report


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    t0 = time.perf_counter()
    try:
        args = parse(argv)
        report = run(args)
    except ConfigError as exc:
        print(f"gwinvasion: config error: {exc}", file=sys.stderr)
        return 2
    text = render(report, args.emit)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    print(f"gwinvasion: {args.experiment} finished in {time.perf_counter() - t0:.2f} s", file=sys.stderr)
    return 0 if report.passed else 1
