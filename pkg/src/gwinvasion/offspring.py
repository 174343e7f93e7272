"""Offspring laws of supercritical Galton-Watson trees without death."""

import bisect
import json
import math
from dataclasses import dataclass

import numpy as np

SUM_TOL = 1e-12
POISSON_TAIL = 1e-14


class DegenerateDistributionError(ValueError):
    """Raised for Z == 1 almost surely: the tree is a ray."""


@dataclass(frozen=True)
class GfConstants:
    mu: float
    phi2: float
    p_c: float
    K: float
    q_ratio: float


class OffspringDistribution:
    """Finite-support progeny law ``P[Z = k] = p_k`` with ``p_0 = 0`` and mean > 1.

    Probabilities are validated once at construction.  Instances are
    immutable and safe to share between replicates.
    """

    def __init__(self, pmf, name=None):
        pairs = sorted((int(k), float(p)) for k, p in pmf)
        pairs = [(k, p) for k, p in pairs if p > 0.0]
        if not pairs:
            raise ValueError("empty offspring distribution")
        ks = [k for k, _ in pairs]
        if len(set(ks)) != len(ks):
            raise ValueError("duplicate support points in pmf")
        if ks[0] < 1:
            raise ValueError("p_0 must be zero: every vertex has at least one child")
        probs = [p for _, p in pairs]
        if any(p < 0 for p in probs):
            raise ValueError("negative probability")
        total = math.fsum(probs)
        if abs(total - 1.0) > SUM_TOL:
            raise ValueError(f"probabilities sum to {total!r}, not 1")
        self.support = tuple(ks)
        self.probs = tuple(probs)
        self.name = name or "pmf"
        self.mean = math.fsum(k * p for k, p in pairs)
        if self.mean <= 1.0:
            raise ValueError(f"mean offspring {self.mean} is not supercritical")
        self.max_support = ks[-1]
        self._k = np.array(ks, dtype=np.int64)
        self._p = np.array(probs)
        cum = np.cumsum(self._p)
        cum[-1] = 1.0
        self._cum = cum
        self._cum_list = cum.tolist()

    # constructors -------------------------------------------------------

    @classmethod
    def deterministic(cls, b):
        return cls([(b, 1.0)], name=f"deterministic(b={b})")

    @classmethod
    def two_point(cls, p1):
        """Z in {1, 2} with P[Z = 1] = p1."""
        return cls([(1, p1), (2, 1.0 - p1)], name=f"two_point(p1={p1})")

    @classmethod
    def poisson_positive(cls, lam):
        """Poisson(lam) conditioned positive, truncated where the tail drops below 1e-14."""
        norm = -math.expm1(-lam)
        pmf = []
        k = 1
        logp = math.log(lam) - lam
        tail = 1.0
        while True:
            p = math.exp(logp) / norm
            pmf.append((k, p))
            tail -= p
            if tail < POISSON_TAIL:
                break
            k += 1
            logp += math.log(lam) - math.log(k)
        s = math.fsum(p for _, p in pmf)
        return cls([(k, p / s) for k, p in pmf], name=f"poisson_positive(lam={lam})")

    @classmethod
    def parse(cls, text):
        """Parse ``pmf = [[1,0.4],[2,0.6]]`` or ``family = deterministic, b = 2``."""
        text = text.strip()
        key, _, rest = text.partition("=")
        if key.strip() == "pmf":
            return cls(json.loads(rest), name="pmf")
        fields = {}
        for part in text.split(","):
            k, sep, v = part.partition("=")
            if not sep:
                raise ValueError(f"malformed distribution field {part!r}")
            fields[k.strip()] = v.strip()
        family = fields.pop("family", None)
        if family == "deterministic":
            return cls.deterministic(int(fields["b"]))
        if family == "two_point":
            return cls.two_point(float(fields["p1"]))
        if family in ("poisson", "poisson_positive"):
            return cls.poisson_positive(float(fields["lam"]))
        raise ValueError(f"unknown offspring family {family!r}")

    def __repr__(self):
        return f"OffspringDistribution({self.name})"

    def spec(self):
        """Config text that parses back to this distribution."""
        return "pmf = " + json.dumps([[k, p] for k, p in zip(self.support, self.probs)])

    # generating function ------------------------------------------------

    def p(self, k):
        try:
            return self.probs[self.support.index(k)]
        except ValueError:
            return 0.0

    @property
    def p1(self):
        return self.p(1)

    @staticmethod
    def _check(z):
        if not 0.0 <= z <= 1.0:
            raise ValueError(f"z={z} outside [0, 1]")

    def phi(self, z):
        self._check(z)
        return math.fsum(p * z**k for k, p in zip(self.support, self.probs))

    def phi_prime(self, z):
        self._check(z)
        return math.fsum(k * p * z ** (k - 1) for k, p in zip(self.support, self.probs))

    def phi_double_prime(self, z):
        self._check(z)
        return math.fsum(
            k * (k - 1) * p * z ** (k - 2) for k, p in zip(self.support, self.probs) if k >= 2
        )

    def one_minus_phi_one_minus(self, x):
        """1 - phi(1 - x), computed without cancellation for small x."""
        if not 0.0 <= x <= 1.0:
            raise ValueError(f"x={x} outside [0, 1]")
        if x == 1.0:
            return 1.0 - self.phi(0.0)
        lg = math.log1p(-x)
        return math.fsum(-p * math.expm1(k * lg) for k, p in zip(self.support, self.probs))

    def constants(self):
        mu = self.phi_prime(1.0)
        phi2 = self.phi_double_prime(1.0)
        if phi2 == 0.0:
            raise DegenerateDistributionError("phi''(1) = 0: Z is identically 1")
        p_c = 1.0 / mu
        K = 2.0 / (p_c**3 * phi2)
        p1 = self.p1
        q_ratio = 0.0 if p1 == 0.0 else math.log(mu) / math.log(1.0 / p1)
        return GfConstants(mu=mu, phi2=phi2, p_c=p_c, K=K, q_ratio=q_ratio)

    @property
    def variance(self):
        return math.fsum(p * (k - self.mean) ** 2 for k, p in zip(self.support, self.probs))

    # sampling -----------------------------------------------------------

    def degree_from_uniform(self, u):
        return self.support[bisect.bisect_right(self._cum_list, u)] if len(self.support) > 1 else self.support[0]

    def degrees_from_uniforms(self, u):
        idx = np.searchsorted(self._cum, np.asarray(u), side="right")
        return self._k[np.minimum(idx, len(self._k) - 1)]

    def sample(self, rng, size=None):
        """Draw offspring counts from a numpy Generator."""
        u = rng.random(size)
        if size is None:
            return int(self.degree_from_uniform(float(u)))
        return self.degrees_from_uniforms(u)


def sample_offspring(d, rng_stream, size=None):
    return d.sample(rng_stream, size)
