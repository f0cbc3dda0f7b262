"""Rank statistics used by the analysis suite.

Both tests are computed from exact integer rank sums (average ranks are
half-integers, so doubling them gives integers) and only convert to float
for the final quotient and the p-value.  That makes the statistics
bit-for-bit reproducible and lets small cases be checked against exhaustive
pair-counting oracles with exact equality, not a tolerance.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np
from scipy import stats as _sps

from .errors import GeometryError, ValidationError


def _doubled_average_ranks(values: list[float]) -> list[int]:
    """Twice the average rank of each value (ties share the mean rank)."""
    n = len(values)
    order = sorted(range(n), key=lambda i: values[i])
    doubled = [0] * n
    i = 0
    while i < n:
        j = i
        while j + 1 < n and values[order[j + 1]] == values[order[i]]:
            j += 1
        # Ranks i+1 .. j+1 share the average (i + j + 2) / 2.
        for k in range(i, j + 1):
            doubled[order[k]] = i + j + 2
        i = j + 1
    return doubled


@dataclass(frozen=True)
class SpearmanResult:
    rho: float
    p_value: float
    n: int


def spearman(x, y) -> SpearmanResult:
    """Spearman rank correlation with average-rank ties.

    The p-value uses the t-distribution approximation on
    rho * sqrt((n - 2) / (1 - rho^2)).  Requires n >= 5 and non-constant
    inputs; a constant series has no defined correlation.
    """
    x = [float(v) for v in np.asarray(x).ravel()]
    y = [float(v) for v in np.asarray(y).ravel()]
    if len(x) != len(y):
        raise ValidationError(f"series lengths differ: {len(x)} vs {len(y)}")
    n = len(x)
    if n < 5:
        raise ValidationError(f"need at least 5 samples, got {n}")
    if min(x) == max(x) or min(y) == max(y):
        raise GeometryError("correlation is undefined for a constant series")
    a = _doubled_average_ranks(x)
    b = _doubled_average_ranks(y)
    sa, sb = sum(a), sum(b)
    num = n * sum(ai * bi for ai, bi in zip(a, b)) - sa * sb
    da = n * sum(ai * ai for ai in a) - sa * sa
    db = n * sum(bi * bi for bi in b) - sb * sb
    rho = num / math.sqrt(da * db)
    if rho >= 1.0:
        return SpearmanResult(1.0, 0.0, n)
    if rho <= -1.0:
        return SpearmanResult(-1.0, 0.0, n)
    t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
    p = 2.0 * float(_sps.t.sf(abs(t), df=n - 2))
    return SpearmanResult(rho, p, n)


@dataclass(frozen=True)
class MannWhitneyResult:
    U: float
    z: float
    p_value: float


def mann_whitney_u(a, b) -> MannWhitneyResult:
    """Two-sided Mann-Whitney U-test via the tie-corrected normal approximation.

    Returns the U statistic of the first sample (pairs won plus half the
    ties).  Degenerate when every value in both samples is equal.
    """
    a = [float(v) for v in np.asarray(a).ravel()]
    b = [float(v) for v in np.asarray(b).ravel()]
    n1, n2 = len(a), len(b)
    if n1 < 3 or n2 < 3:
        raise ValidationError(f"need at least 3 samples per group, got {n1} and {n2}")
    combined = a + b
    doubled = _doubled_average_ranks(combined)
    r1_doubled = sum(doubled[:n1])
    u = (r1_doubled - n1 * (n1 + 1)) / 2.0
    n = n1 + n2
    tie_term = sum(t**3 - t for t in Counter(combined).values())
    var = (n1 * n2 / 12.0) * ((n + 1) - tie_term / (n * (n - 1)))
    if var <= 0:
        raise GeometryError("all values are tied; U-test is degenerate")
    z = (u - n1 * n2 / 2.0) / math.sqrt(var)
    p = 2.0 * float(_sps.norm.sf(abs(z)))
    return MannWhitneyResult(u, z, min(p, 1.0))
