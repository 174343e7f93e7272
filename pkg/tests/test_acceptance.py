"""Acceptance criteria at full scale, one verdict line per criterion."""

import time

import pytest

from gwinvasion import acceptance
from conftest import ACCEPTANCE_LINES

NAMES = {
    1: "survival oracle",
    2: "K limit",
    3: "pivot law equals survival CDF",
    4: "kernel cross-validation",
    5: "exponential limit",
    6: "LPE consistency",
    7: "coupling corridor",
    8: "dual-pivot decay",
    9: "finitely many heavy invaded edges",
    10: "measure symmetry and KL bound",
    11: "theorem predicate endpoints",
    12: "determinism",
}
TIME_LIMITS = {1: 1.0, 2: 1.0}


@pytest.mark.parametrize("criterion", sorted(acceptance.CRITERIA))
def test_criterion(criterion):
    t0 = time.perf_counter()
    res = acceptance.CRITERIA[criterion](seed=0, scale=1.0)
    elapsed = time.perf_counter() - t0
    ok = res.passed
    limit = TIME_LIMITS.get(criterion)
    if limit is not None and elapsed >= limit:
        ok = False
    tag = "PASS" if ok else "FAIL"
    ACCEPTANCE_LINES.append((criterion, f"[{tag}] criterion {criterion:2d} {NAMES[criterion]} ({elapsed:.1f} s)"))
    for v in res.verdicts:
        line = v.line()
        ACCEPTANCE_LINES.append((criterion, "        " + line))
        print(line)
    print(f"criterion {criterion}: {tag} in {elapsed:.2f} s")
    if limit is not None:
        assert elapsed < limit, f"took {elapsed:.2f} s"
    assert res.passed, "; ".join(v.line() for v in res.verdicts if not v.passed and not v.informational)
