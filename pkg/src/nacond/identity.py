"""Identity testing against an explicit ``q`` by bucketing ``q`` into
near-uniform level sets.

Each bucket ``M_j`` (``j >= 1``) is tested with the near-uniform tester on
the conditionals ``p_{M_j}`` vs ``q_{M_j}``; the bucket masses are then
compared with a plain-sampling test on the reduced distributions over
``{0, ..., k}``.  ``M_0`` (the symbols with ``q(i) < tau/n``) only takes part
in the reduced test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Protocol

import numpy as np

from .anaconda import (
    UNIFORMITY_DEFAULTS,
    Constants,
    NearUniformPlan,
    Outcome,
    Verdict,
    Witness,
    check_near_uniform,
)
from .distributions import DiscreteDistribution, tv_distance
from .oracle import NacondOracle, full_domain

BUCKET_RATIO = 0.01


class IdentityError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class BucketPartition:
    """``M[0..k]``; ``M[j]`` for ``j >= 1`` holds ``edges[j-1] <= q(i) < edges[j]``.

    ``edges[j] = tau * (1 + ratio)**j / n``.  The top bucket is closed above
    so that ``q(i) = 1`` always has a home.
    """

    M: list[np.ndarray]
    labels: np.ndarray
    edges: np.ndarray
    tau: float
    ratio: float

    @property
    def k(self) -> int:
        return len(self.M) - 1

    def nonempty(self) -> list[int]:
        return [j for j, idx in enumerate(self.M) if idx.size]


def bucket_count(n: int, tau: float, ratio: float) -> int:
    x = math.log(n / tau) / math.log1p(ratio)
    return max(1, math.ceil(x - 1e-9 * x))


def bucket(q: DiscreteDistribution, tau: float, ratio: float = BUCKET_RATIO) -> BucketPartition:
    if not 0 < tau < 1:
        raise IdentityError(f"tau must lie in (0, 1), got {tau!r}")
    if not 0 < ratio < 1:
        raise IdentityError(f"ratio must lie in (0, 1), got {ratio!r}")
    n = q.n
    k = bucket_count(n, tau, ratio)
    edges = tau * (1 + ratio) ** np.arange(k + 1) / n
    labels = np.minimum(np.searchsorted(edges, q.pmf, side="right"), k)
    labels.setflags(write=False)
    order = np.argsort(labels, kind="stable")
    starts = np.searchsorted(labels[order], np.arange(k + 2))
    M = [order[starts[j] : starts[j + 1]] for j in range(k + 1)]
    return BucketPartition(M=M, labels=labels, edges=edges, tau=tau, ratio=ratio)


@dataclass(frozen=True, eq=False)
class ReducedPair:
    p_tilde: DiscreteDistribution
    q_tilde: DiscreteDistribution


def reduce_distribution(dist: DiscreteDistribution, partition: BucketPartition) -> DiscreteDistribution:
    """Bucket masses ``dist(M_j)`` as a distribution over ``{0, ..., k}``."""
    masses = np.bincount(partition.labels, weights=dist.pmf, minlength=partition.k + 1)
    return DiscreteDistribution(masses / masses.sum())


def reduce_pair(p: DiscreteDistribution, q: DiscreteDistribution, partition: BucketPartition) -> ReducedPair:
    return ReducedPair(reduce_distribution(p, partition), reduce_distribution(q, partition))


def map_to_buckets(samples, partition: BucketPartition) -> np.ndarray:
    return partition.labels[np.asarray(samples, dtype=np.intp)]


class Sampler(Protocol):
    def draw_many(self, m: int) -> np.ndarray: ...


class ReducedSampler:
    """SAMP access to the reduced distribution through an underlying sampler."""

    def __init__(self, samp: Sampler, partition: BucketPartition):
        self.samp = samp
        self.partition = partition

    def draw_many(self, m: int) -> np.ndarray:
        return map_to_buckets(self.samp.draw_many(m), self.partition)


def small_support_sample_size(support: int, eps: float, delta: float, c_s: float = 4.0) -> int:
    if not 0 < eps < 1 or not 0 < delta < 1:
        raise IdentityError("eps and delta must lie in (0, 1)")
    return math.ceil(c_s * (support + math.log(2 / delta)) / eps**2 - 1e-9)


def small_support_identity_test(
    samp: Sampler,
    q_tilde: DiscreteDistribution,
    eps: float,
    delta: float,
    c_s: float = 4.0,
) -> Verdict:
    """Learn the unknown distribution, then accept iff its empirical TV to ``q_tilde`` is below ``eps/2``."""
    m = small_support_sample_size(q_tilde.n, eps, delta, c_s)
    counts = np.bincount(samp.draw_many(m), minlength=q_tilde.n)
    if counts.size != q_tilde.n:
        raise IdentityError("samples fall outside the reduced domain")
    phat = counts / m
    dist = tv_distance(phat, q_tilde.pmf)
    if dist < eps / 2:
        return Verdict(Outcome.EQUAL, queries_p=m)
    i = int(np.argmax(np.abs(phat - q_tilde.pmf)))
    return Verdict(Outcome.FAR, Witness(0, full_domain(q_tilde.n), i, dist), queries_p=m)


@dataclass(frozen=True)
class BucketReport:
    bucket: int
    size: int
    verdict: str  # "Equal", "Far" or "skipped"
    queries: int
    linf_scaled: float  # |M_j| * ||q_{M_j} - U||_inf


@dataclass(frozen=True)
class IdentityReport:
    verdict: Verdict
    buckets: list[BucketReport]
    nacond_queries: int
    samp_queries: int
    samp_verdict: Verdict
    k: int

    @property
    def outcome(self) -> Outcome:
        return self.verdict.outcome


def per_bucket_delta(n: int, eps: float, delta: float) -> float:
    return delta * math.log(1 + BUCKET_RATIO) / (2 * math.log(100 * n / eps))


class _SessionSampler:
    def __init__(self, session, set_id: int):
        self.session = session
        self.set_id = set_id

    def draw_many(self, m: int) -> np.ndarray:
        return self.session.draw_many(self.set_id, m)


def identity_test(
    oracle_p: NacondOracle,
    q: DiscreteDistribution,
    eps: float,
    constants: Optional[Constants] = None,
    rng: Optional[np.random.Generator] = None,
    delta: float = 1 / 3,
    c_s: float = 4.0,
) -> IdentityReport:
    """Test ``p = q`` vs ``d_TV(p, q) >= eps`` with NACOND access to ``p``.

    Every query set (all buckets, all boosting runs, and the full domain used
    for the plain-sampling stage) is registered before any draw.
    """
    if not 0 < eps <= 1:
        raise IdentityError(f"eps must lie in (0, 1], got {eps!r}")
    if oracle_p.n != q.n:
        raise IdentityError("oracle and q have different domain sizes")
    rng = rng if rng is not None else np.random.default_rng()
    constants = constants or UNIFORMITY_DEFAULTS
    n = q.n
    part = bucket(q, eps / 100, BUCKET_RATIO)
    delta_b = per_bucket_delta(n, eps, delta)

    plans: dict[int, NearUniformPlan] = {}
    linf: dict[int, float] = {}
    for j in range(1, part.k + 1):
        M = part.M[j]
        if M.size == 0:
            continue
        linf[j] = check_near_uniform(q, M) if M.size > 1 else 0.0
        if M.size > 1:
            plans[j] = NearUniformPlan.build(M, eps / 2, delta_b, constants, rng)

    oracle_q = NacondOracle(q, rng, name="q")
    sp, sq = oracle_p.session(), oracle_q.session()
    for plan in plans.values():
        plan.register(sp, sq)
    full_id = sp.register(full_domain(n))
    sp.seal()
    sq.seal()

    reports, far_bucket = [], None
    for j in sorted(linf):
        if j in plans:
            v = plans[j].execute(sp, sq)
            reports.append(BucketReport(j, part.M[j].size, str(v.outcome), v.queries_p, linf[j]))
            if v.far and far_bucket is None:
                far_bucket = v
        else:
            reports.append(BucketReport(j, 1, "skipped", 0, 0.0))

    q_tilde = reduce_distribution(q, part)
    samp_v = small_support_identity_test(
        ReducedSampler(_SessionSampler(sp, full_id), part), q_tilde, eps / 2, delta / 2, c_s
    )
    samp_queries = sp.ledger[full_id]
    nacond_queries = sp.total_draws - samp_queries
    if far_bucket is not None:
        outcome, witness = Outcome.FAR, far_bucket.witness
    elif samp_v.far:
        outcome, witness = Outcome.FAR, samp_v.witness
    else:
        outcome, witness = Outcome.EQUAL, None
    verdict = Verdict(outcome, witness, queries_p=sp.total_draws, queries_q=sq.total_draws)
    return IdentityReport(verdict, reports, nacond_queries, samp_queries, samp_v, part.k)


# --- fixtures ---------------------------------------------------------------


def within_bucket_perturbation(
    q: DiscreteDistribution,
    eps: float,
    rng: np.random.Generator,
    tau: Optional[float] = None,
    donor_share: float = 2 / 3,
) -> DiscreteDistribution:
    """``p`` with ``p(M_j) = q(M_j)`` for every bucket and ``d_TV(p, q) = eps``.

    In each bucket of size >= 2 a random ``donor_share`` of the symbols give
    up the same fraction of their mass, spread over the remaining symbols in
    proportion to ``q``.
    """
    part = bucket(q, tau if tau is not None else eps / 100, BUCKET_RATIO)
    groups = []
    for M in part.M[1:]:
        if M.size < 2:
            continue
        perm = rng.permutation(M)
        cut = min(M.size - 1, max(1, math.ceil(donor_share * M.size)))
        groups.append((perm[:cut], perm[cut:]))
    donated = sum(q.pmf[d].sum() for d, _ in groups)
    if donated < eps:
        raise IdentityError(f"only {donated:.4g} of mass can move inside buckets; need {eps}")
    frac = eps / donated
    pmf = q.pmf.copy()
    for d, r in groups:
        moved = frac * q.pmf[d].sum()
        pmf[d] *= 1 - frac
        pmf[r] += moved * q.pmf[r] / q.pmf[r].sum()
    return DiscreteDistribution(pmf)


def bucket_mass_shift(q: DiscreteDistribution, eps: float, tau: Optional[float] = None) -> DiscreteDistribution:
    """``p`` with the same within-bucket conditionals as ``q`` but ``eps`` of mass
    moved from the lowest occupied buckets to the rest.

    The low side is the shortest prefix of occupied buckets holding more than
    ``1.5 eps`` (or, failing that, more than ``eps``) of ``q``'s mass.
    """
    part = bucket(q, tau if tau is not None else eps / 100, BUCKET_RATIO)
    occupied = part.nonempty()
    cum = np.cumsum([q.pmf[part.M[j]].sum() for j in occupied])
    cut = None
    for need in (1.5 * eps, eps):
        k = int(np.searchsorted(cum, need, side="right"))
        if k < len(occupied) - 1:
            cut = k + 1
            break
    if cut is None:
        raise IdentityError(f"no bucket prefix can give up {eps} of mass")
    low = np.concatenate([part.M[j] for j in occupied[:cut]])
    high = np.concatenate([part.M[j] for j in occupied[cut:]])
    q_low, q_high = q.pmf[low].sum(), q.pmf[high].sum()
    pmf = q.pmf.copy()
    pmf[low] *= (q_low - eps) / q_low
    pmf[high] *= (q_high + eps) / q_high
    return DiscreteDistribution(pmf / pmf.sum())
