"""Empirical distributions on query sets and DKW-based sample sizes."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .oracle import QuerySet


class EstimateError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EmpiricalDistribution:
    """Sample counts over a support set."""

    support: QuerySet
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (len(self.support),):
            raise EstimateError("counts must align with the support")
        if np.any(counts < 0):
            raise EstimateError("counts must be nonnegative")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def m(self) -> int:
        return int(self.counts.sum())

    @property
    def frequencies(self) -> np.ndarray:
        m = self.m
        return self.counts / m if m else np.zeros(self.counts.size)

    def frequency(self, i: int) -> float:
        return float(self.frequencies[self.support.position(i)])


def empirical(samples, support: QuerySet) -> EmpiricalDistribution:
    s = np.asarray(samples, dtype=np.int64).ravel()
    if s.size == 0:
        raise EstimateError("need at least one sample")
    pos = np.searchsorted(support.indices, s)
    pos_clipped = np.minimum(pos, len(support) - 1)
    if np.any(support.indices[pos_clipped] != s):
        bad = s[support.indices[pos_clipped] != s][0]
        raise EstimateError(f"sample {bad} is outside the support")
    return EmpiricalDistribution(support, np.bincount(pos, minlength=len(support)))


def dkw_sample_size(eps: float, delta: float) -> int:
    """Smallest ``m`` with ``2 exp(-2 m eps^2) <= delta``."""
    if not 0 < eps < 1:
        raise EstimateError(f"eps must lie in (0, 1), got {eps!r}")
    if not 0 < delta < 1:
        raise EstimateError(f"delta must lie in (0, 1), got {delta!r}")
    m = max(1, math.ceil(math.log(2 / delta) / (2 * eps * eps) - 1e-9))
    # guard the ceiling against rounding in log/divide
    while m > 1 and 2 * math.exp(-2 * (m - 1) * eps * eps) <= delta * (1 + 1e-12):
        m -= 1
    while 2 * math.exp(-2 * m * eps * eps) > delta * (1 + 1e-12):
        m += 1
    return m


def linf_sample_size(eps: float, delta: float) -> int:
    """Samples per side so that each empirical pmf is within ``eps/10`` in l-inf.

    Uses Kolmogorov accuracy ``eps/20`` (l-inf <= 2 d_K), i.e.
    ``ceil(200 ln(2/delta) / eps^2)``.
    """
    if not 0 < eps <= 1:
        raise EstimateError(f"eps must lie in (0, 1], got {eps!r}")
    if not 0 < delta < 1:
        raise EstimateError(f"delta must lie in (0, 1), got {delta!r}")
    return math.ceil(200 * math.log(2 / delta) / (eps * eps) - 1e-9)


def max_discrepancy(phat: EmpiricalDistribution, qhat: EmpiricalDistribution) -> tuple[int, float]:
    """Symbol and size of the largest ``|phat(i) - qhat(i)|``; ties go to the smallest symbol."""
    if phat.support != qhat.support:
        raise EstimateError("empirical distributions have different supports")
    gaps = np.abs(phat.frequencies - qhat.frequencies)
    k = int(np.argmax(gaps))
    return int(phat.support.indices[k]), float(gaps[k])
