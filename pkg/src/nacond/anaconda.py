"""The Anaconda tester: random dyadic-scale query sets, conditional samples
from both distributions on each, and an l-inf check on the empirical
conditionals.

All query sets of a run are planned and registered before any sample is
drawn, and every planned set receives its full ``m`` samples even when an
earlier set already exposes a discrepancy.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .distributions import DiscreteDistribution, ceil_log2, conditional, log2n
from .estimate import EmpiricalDistribution, max_discrepancy
from .oracle import NacondOracle, NacondSession, QuerySet

LINF_SLACK = 1e-12


class ConfigError(ValueError):
    pass


class NearUniformError(ValueError):
    """The explicit target is too far from uniform for the near-uniform tester."""


# --- constants and configuration --------------------------------------------

CONSTANT_KEYS = ("c_T", "c_m", "c_eps", "c_b", "seed")


@dataclass(frozen=True)
class Constants:
    """Concrete values for the hidden constants in T, m, eps' and boosting."""

    c_T: float = 4.0
    c_m: float = 16.0
    c_eps: float = 0.125
    c_b: float = 1.0
    seed: Optional[int] = None

    def __post_init__(self):
        for key in ("c_T", "c_m", "c_eps", "c_b"):
            if not getattr(self, key) > 0:
                raise ConfigError(f"{key} must be positive")

    def dumps(self) -> str:
        lines = [f"{k}={getattr(self, k)!r}" for k in CONSTANT_KEYS[:4]]
        if self.seed is not None:
            lines.append(f"seed={self.seed}")
        return "\n".join(lines) + "\n"


UNIFORMITY_DEFAULTS = Constants()


def parse_constants(text: str, source: str = "<string>") -> Constants:
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONSTANT_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = int(value) if key == "seed" else float(value)
        except ValueError:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {value!r}") from None
    return Constants(**values)


def load_constants(path: Union[str, Path]) -> Constants:
    """Load a ``key=value`` constants file, or a bundled one by bare name."""
    p = Path(path)
    if not p.exists() and p.suffix == "" and len(p.parts) == 1:
        bundled = resources.files("nacond") / "constants" / f"{path}.cfg"
        if bundled.is_file():
            return parse_constants(bundled.read_text(), source=str(path))
    return parse_constants(p.read_text(), source=str(p))


def _ceil(x: float) -> int:
    # absorbs float noise such as 1e-4 * 1e6 == 100.00000000000001
    return max(1, math.ceil(x - 1e-9 * max(1.0, abs(x))))


@dataclass(frozen=True)
class AnacondaConfig:
    T: int
    m: int
    eps_prime: float
    j_range_max: int
    c_T: float = 1.0
    c_m: float = 1.0
    c_eps: float = 1.0
    seed: Optional[int] = None

    def __post_init__(self):
        if self.T < 1 or self.m < 1:
            raise ConfigError(f"T and m must be >= 1 (T={self.T}, m={self.m})")
        if not 0 < self.eps_prime < 1:
            raise ConfigError(f"eps_prime must lie in (0, 1), got {self.eps_prime!r}")
        if self.j_range_max < 1:
            raise ConfigError("j_range_max must be >= 1")

    @property
    def queries_per_oracle(self) -> int:
        return self.T * self.m


def _check_params(n: int, eps: float) -> None:
    if int(n) != n or n < 2:
        raise ConfigError(f"n must be an integer >= 2, got {n!r}")
    if not 0 < eps <= 1:
        raise ConfigError(f"eps must lie in (0, 1], got {eps!r}")


def uniformity_config(n: int, eps: float, constants: Optional[Constants] = None) -> AnacondaConfig:
    """T ~ log n, m ~ log log n / eps^2, eps' ~ eps."""
    _check_params(n, eps)
    c = constants or UNIFORMITY_DEFAULTS
    L = log2n(n)
    return AnacondaConfig(
        T=_ceil(c.c_T * L),
        m=_ceil(c.c_m * max(1.0, math.log2(L)) / eps**2),
        eps_prime=c.c_eps * eps,
        j_range_max=2 * ceil_log2(n),
        c_T=c.c_T,
        c_m=c.c_m,
        c_eps=c.c_eps,
        seed=c.seed,
    )


def equivalence_config(n: int, eps: float, constants: Optional[Constants] = None) -> AnacondaConfig:
    """T ~ log^6 n, m ~ log^6 n / eps^2, eps' ~ eps / log^3 n."""
    _check_params(n, eps)
    c = constants or Constants(1.0, 1.0, 1.0)
    L = log2n(n)
    return AnacondaConfig(
        T=_ceil(c.c_T * L**6),
        m=_ceil(c.c_m * L**6 / eps**2),
        eps_prime=c.c_eps * eps / L**3,
        j_range_max=2 * ceil_log2(n),
        c_T=c.c_T,
        c_m=c.c_m,
        c_eps=c.c_eps,
        seed=c.seed,
    )


# --- verdicts ---------------------------------------------------------------


class Outcome(enum.Enum):
    EQUAL = "Equal"
    FAR = "Far"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class Witness:
    t: int
    query_set: QuerySet
    index: int
    gap: float

    @property
    def set_size(self) -> int:
        return len(self.query_set)


@dataclass(frozen=True)
class Verdict:
    outcome: Outcome
    witness: Optional[Witness] = None
    queries_p: int = 0
    queries_q: int = 0
    votes: Optional[tuple[int, int]] = None  # (far votes, runs) when boosted

    def __post_init__(self):
        if self.outcome is Outcome.FAR and self.witness is None:
            raise ValueError("a Far verdict needs a witness")

    @property
    def far(self) -> bool:
        return self.outcome is Outcome.FAR


# --- planning ---------------------------------------------------------------


def _positive_binomial(n: int, prob: float, rng: np.random.Generator) -> int:
    """A Binomial(n, prob) draw conditioned on being positive, by redrawing."""
    p_nonzero = -math.expm1(n * math.log1p(-prob)) if prob < 1 else 1.0
    batch = int(min(4096, max(8, math.ceil(4 / p_nonzero))))
    while True:
        ks = rng.binomial(n, prob, size=batch)
        hit = np.flatnonzero(ks)
        if hit.size:
            return int(ks[hit[0]])


def sample_set(n: int, j: int, rng: np.random.Generator) -> QuerySet:
    """Each symbol kept independently with probability ``2**-j``; empty draws redrawn.

    Drawn as a zero-truncated binomial size followed by a uniform subset of
    that size, which has the same law as independent inclusion conditioned
    on a nonempty result.
    """
    k = _positive_binomial(n, 2.0**-j, rng)
    return QuerySet(np.sort(rng.choice(n, size=k, replace=False)))


def plan_sets(
    n: int,
    T: int,
    j_range_max: int,
    rng: np.random.Generator,
    j: Optional[int] = None,
) -> list[QuerySet]:
    """Plan ``T`` query sets, each at a uniformly random scale ``j`` in ``1..j_range_max``."""
    if n < 2:
        raise ConfigError("n must be >= 2")
    if T < 1:
        raise ConfigError("T must be >= 1")
    sets = []
    for _ in range(T):
        jj = int(rng.integers(1, j_range_max + 1)) if j is None else j
        sets.append(sample_set(n, jj, rng))
    return sets


def random_discrepancy_set(n: int, rng: np.random.Generator) -> tuple[int, int, np.ndarray]:
    """Scale ``j`` uniform in ``1..ceil(log2 n)``, ``r = 2**j``, independent ``1/r`` inclusion.

    The returned index array may be empty.
    """
    if n < 2:
        raise ConfigError("n must be >= 2")
    j = int(rng.integers(1, ceil_log2(n) + 1))
    r = 2**j
    S = np.flatnonzero(rng.random(n) < 1.0 / r)
    return j, r, S


# --- the tester -------------------------------------------------------------


def _commit(session: NacondSession, sets: Sequence[QuerySet]) -> list[int]:
    ids = session.register_all(sets)
    # nothing may have been drawn before every set is registered
    assert session.total_draws == 0
    return ids


def scan_for_witness(
    sets: Sequence[QuerySet],
    counts_p: Sequence[np.ndarray],
    counts_q: Sequence[np.ndarray],
    eps_prime: float,
) -> Optional[Witness]:
    """First set whose empirical conditionals differ by ``>= eps_prime`` somewhere."""
    for t, (S, cp, cq) in enumerate(zip(sets, counts_p, counts_q)):
        i, gap = max_discrepancy(EmpiricalDistribution(S, cp), EmpiricalDistribution(S, cq))
        if gap >= eps_prime - LINF_SLACK:
            return Witness(t=t, query_set=S, index=i, gap=gap)
    return None


def anaconda_run(
    oracle_p: NacondOracle,
    oracle_q: NacondOracle,
    cfg: AnacondaConfig,
    rng: np.random.Generator,
) -> Verdict:
    """One execution of the tester with ``T * m`` queries to each oracle."""
    n = oracle_p.n
    if oracle_q.n != n:
        raise ConfigError(f"oracles have different domain sizes: {n} vs {oracle_q.n}")
    sets = plan_sets(n, cfg.T, cfg.j_range_max, rng)
    sp, sq = oracle_p.session(), oracle_q.session()
    ids_p, ids_q = _commit(sp, sets), _commit(sq, sets)
    sp.seal()
    sq.seal()
    counts_p = [sp.draw_counts(k, cfg.m) for k in ids_p]
    counts_q = [sq.draw_counts(k, cfg.m) for k in ids_q]
    witness = scan_for_witness(sets, counts_p, counts_q, cfg.eps_prime)
    return Verdict(
        outcome=Outcome.FAR if witness else Outcome.EQUAL,
        witness=witness,
        queries_p=sp.total_draws,
        queries_q=sq.total_draws,
    )


# --- near-uniform identity --------------------------------------------------


def boost_runs(delta: float, c_b: float = 1.0) -> int:
    if not 0 < delta < 1:
        raise ConfigError(f"delta must lie in (0, 1), got {delta!r}")
    return _ceil(c_b * math.log2(1 / delta))


def check_near_uniform(q: DiscreteDistribution, support: Optional[np.ndarray] = None) -> float:
    """``||q_S - U_S||_inf * |S|``; raises unless it is at most 1/100."""
    S = np.arange(q.n) if support is None else np.asarray(support)
    q_S = conditional(q, S)
    scaled = float(np.abs(q_S - 1.0 / S.size).max() * S.size)
    if scaled > 0.01 + LINF_SLACK:
        raise NearUniformError(
            f"target is {scaled:.4g}/|S| from uniform in l-inf; at most 1/(100|S|) is allowed"
        )
    return scaled


@dataclass
class NearUniformPlan:
    """Planned (not yet drawn) boosted near-uniform test on one support set."""

    support: np.ndarray
    cfg: AnacondaConfig
    runs: list[list[QuerySet]]
    ids_p: list[list[int]] = field(default_factory=list)
    ids_q: list[list[int]] = field(default_factory=list)

    @classmethod
    def build(
        cls,
        support: np.ndarray,
        eps: float,
        delta: float,
        constants: Constants,
        rng: np.random.Generator,
    ) -> "NearUniformPlan":
        support = np.asarray(support, dtype=np.int64)
        cfg = uniformity_config(support.size, eps, constants)
        runs = []
        for _ in range(boost_runs(delta, constants.c_b)):
            local = plan_sets(support.size, cfg.T, cfg.j_range_max, rng)
            runs.append([QuerySet(support[S.indices]) for S in local])
        return cls(support, cfg, runs)

    def register(self, sp: NacondSession, sq: NacondSession) -> None:
        self.ids_p = [sp.register_all(sets) for sets in self.runs]
        self.ids_q = [sq.register_all(sets) for sets in self.runs]

    def execute(self, sp: NacondSession, sq: NacondSession) -> Verdict:
        m = self.cfg.m
        before_p, before_q = sp.total_draws, sq.total_draws
        far_votes, first = 0, None
        for sets, ip, iq in zip(self.runs, self.ids_p, self.ids_q):
            cp = [sp.draw_counts(k, m) for k in ip]
            cq = [sq.draw_counts(k, m) for k in iq]
            w = scan_for_witness(sets, cp, cq, self.cfg.eps_prime)
            if w is not None:
                far_votes += 1
                first = first or w
        far = 2 * far_votes > len(self.runs)
        return Verdict(
            outcome=Outcome.FAR if far else Outcome.EQUAL,
            witness=first if far else None,
            queries_p=sp.total_draws - before_p,
            queries_q=sq.total_draws - before_q,
            votes=(far_votes, len(self.runs)),
        )


def near_uniform_identity(
    oracle_p: NacondOracle,
    q: DiscreteDistribution,
    eps: float,
    delta: float,
    constants: Optional[Constants] = None,
    rng: Optional[np.random.Generator] = None,
    support: Optional[np.ndarray] = None,
) -> Verdict:
    """Test ``p = q`` against ``d_TV >= eps`` for a ``q`` within ``1/(100n)`` of uniform.

    Majority vote over ``ceil(c_b log2(1/delta))`` independent runs.  With
    ``support`` given, the test is on the conditionals ``p_S`` and ``q_S``.
    """
    rng = rng if rng is not None else np.random.default_rng()
    constants = constants or UNIFORMITY_DEFAULTS
    S = np.arange(q.n) if support is None else np.asarray(support, dtype=np.int64)
    if S.size < 2:
        raise ConfigError("near-uniform testing needs a support of at least 2 symbols")
    check_near_uniform(q, S)
    plan = NearUniformPlan.build(S, eps, delta, constants, rng)
    oracle_q = NacondOracle(q, rng, name="q")
    sp, sq = oracle_p.session(), oracle_q.session()
    plan.register(sp, sq)
    sp.seal()
    sq.seal()
    return plan.execute(sp, sq)
