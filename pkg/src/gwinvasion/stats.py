"""Empirical distribution distances and interval estimates."""

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class EcdfSummary:
    samples: np.ndarray
    reference: np.ndarray = None

    @property
    def n(self):
        return len(self.samples)

    def __call__(self, x):
        return np.searchsorted(self.samples, x, side="right") / self.n


def ecdf(samples, cdf=None):
    x = np.sort(np.asarray(samples, dtype=float))
    return EcdfSummary(x, None if cdf is None else np.asarray(cdf(x), dtype=float))


def ks_analytic(samples, cdf):
    """Two-sided Kolmogorov-Smirnov distance between a sample and a continuous CDF.

    Laws with atoms should be compared with :func:`ks_two_sample` instead.
    """
    x = np.sort(np.asarray(samples, dtype=float))
    n = len(x)
    if n == 0:
        raise ValueError("need at least one sample")
    F = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    d_plus = np.max(i / n - F)
    d_minus = np.max(F - (i - 1) / n)
    return float(max(d_plus, d_minus))


def ks_two_sample(a, b):
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if not len(a) or not len(b):
        raise ValueError("need nonempty samples")
    grid = np.concatenate((a, b))
    fa = np.searchsorted(a, grid, side="right") / len(a)
    fb = np.searchsorted(b, grid, side="right") / len(b)
    return float(np.max(np.abs(fa - fb)))


def ks_critical(n, m=None, alpha=0.01):
    """Asymptotic two-sided critical value; c(0.01) = 1.628."""
    c = math.sqrt(-0.5 * math.log(alpha / 2))
    if m is None:
        return c / math.sqrt(n)
    return c * math.sqrt((n + m) / (n * m))


def wilson_ci(successes, trials, z=2.576):
    if trials <= 0:
        raise ValueError("trials must be positive")
    if not 0 <= successes <= trials:
        raise ValueError("successes outside [0, trials]")
    p = successes / trials
    z2 = z * z
    denom = 1.0 + z2 / trials
    centre = (p + z2 / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z2 / (4 * trials * trials)) / denom
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == trials else min(1.0, centre + half)
    return lo, hi


def trend_decreasing(intervals):
    """True when each interval lies strictly below its predecessor."""
    return all(nxt[1] < prev[0] for prev, nxt in zip(intervals, intervals[1:]))


def mean_se(x):
    x = np.asarray(x, dtype=float)
    if len(x) < 2:
        return float(x.mean()), math.inf
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x)))
