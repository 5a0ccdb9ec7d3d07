"""Simulated SAMP and NACOND oracles over explicit distributions.

A :class:`NacondSession` is the non-adaptive contract made concrete: query
sets are registered first, the session is sealed, and only then can samples
be drawn.  Violations raise :class:`NonAdaptivityError` and are tallied in
``NacondSession.violations`` so callers can assert none happened.

Random streams are derived as ``SeedSequence([root, crc32(tag), trial])``,
one stream per (root seed, oracle tag, trial index).
"""

from __future__ import annotations

import zlib
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional

import numpy as np

from .distributions import DiscreteDistribution


class OracleError(RuntimeError):
    pass


class NonAdaptivityError(OracleError):
    """A draw before sealing, or a registration after it."""


def derive_seed(root: int, tag: str, trial: int = 0) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(root), zlib.crc32(tag.encode()), int(trial)])


def derive_rng(root: int, tag: str, trial: int = 0) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, tag, trial))


@dataclass(frozen=True, eq=False)
class QuerySet:
    """A nonempty, strictly increasing set of symbols."""

    indices: np.ndarray

    def __post_init__(self):
        idx = np.array(self.indices, dtype=np.int64).ravel()
        if idx.size == 0:
            raise ValueError("query set must be nonempty")
        if idx[0] < 0:
            raise ValueError("query set indices must be nonnegative")
        if idx.size > 1 and np.any(np.diff(idx) <= 0):
            raise ValueError("query set indices must be strictly increasing")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    @classmethod
    def of(cls, symbols: Iterable[int]) -> "QuerySet":
        """Build from any iterable of distinct symbols (sorted here)."""
        arr = np.asarray(list(symbols), dtype=np.int64)
        if np.unique(arr).size != arr.size:
            raise ValueError("query set has duplicate symbols")
        return cls(np.sort(arr))

    def __len__(self) -> int:
        return self.indices.size

    def __iter__(self) -> Iterator[int]:
        return iter(self.indices.tolist())

    def __contains__(self, i) -> bool:
        k = np.searchsorted(self.indices, i)
        return bool(k < self.indices.size and self.indices[k] == i)

    def __array__(self, dtype=None, copy=None):
        return self.indices if dtype is None else self.indices.astype(dtype)

    def __eq__(self, other) -> bool:
        return isinstance(other, QuerySet) and np.array_equal(self.indices, other.indices)

    def __hash__(self) -> int:
        return hash(self.indices.tobytes())

    def __repr__(self) -> str:
        if len(self) <= 8:
            return f"QuerySet({self.indices.tolist()})"
        return f"QuerySet(size={len(self)})"

    def position(self, i: int) -> int:
        k = int(np.searchsorted(self.indices, i))
        if k >= self.indices.size or self.indices[k] != i:
            raise KeyError(i)
        return k


class QueryLedger:
    """Per-set sample counters; counters only ever grow."""

    def __init__(self):
        self._counts: Counter[int] = Counter()

    def record(self, set_id: int, k: int = 1) -> None:
        if k < 0:
            raise ValueError("ledger counts cannot decrease")
        self._counts[set_id] += k

    def __getitem__(self, set_id: int) -> int:
        return self._counts[set_id]

    @property
    def total(self) -> int:
        return sum(self._counts.values())

    def as_dict(self) -> dict[int, int]:
        return dict(sorted(self._counts.items()))


class NacondSession:
    """One non-adaptive batch of conditional queries against ``target``.

    Single owner: not safe for concurrent draws.
    """

    violations = 0  # class-wide tally of rejected contract breaches

    def __init__(self, target: DiscreteDistribution, rng: np.random.Generator, stream: str = ""):
        self.target = target
        self.rng = rng
        self.stream = stream
        self.registered: list[QuerySet] = []
        self.sealed = False
        self.ledger = QueryLedger()
        self.registered_at_first_draw: Optional[int] = None
        self._cdfs: list[np.ndarray] = []

    def _violation(self, msg: str) -> NonAdaptivityError:
        NacondSession.violations += 1
        return NonAdaptivityError(msg)

    def register(self, S: QuerySet) -> int:
        if self.sealed:
            raise self._violation("cannot register a query set after the session is sealed")
        if not isinstance(S, QuerySet):
            S = QuerySet.of(S)
        if S.indices[-1] >= self.target.n:
            raise ValueError(f"query set exceeds domain size {self.target.n}")
        w = self.target.pmf[S.indices]
        total = w.sum()
        if total > 0:
            cdf = np.cumsum(w)
            cdf /= cdf[-1]
        else:
            cdf = np.arange(1, len(S) + 1) / len(S)
        self.registered.append(S)
        self._cdfs.append(cdf)
        return len(self.registered) - 1

    def register_all(self, sets: Iterable[QuerySet]) -> list[int]:
        return [self.register(S) for S in sets]

    def seal(self) -> None:
        if self.sealed:
            return
        if not self.registered:
            raise OracleError("cannot seal a session with no registered query sets")
        self.sealed = True

    def _check_draw(self, set_id: int) -> None:
        if not self.sealed:
            raise self._violation("cannot draw before the session is sealed")
        if not 0 <= set_id < len(self.registered):
            raise OracleError(f"invalid set id {set_id}")
        if self.registered_at_first_draw is None:
            self.registered_at_first_draw = len(self.registered)

    def draw(self, set_id: int) -> int:
        return int(self.draw_many(set_id, 1)[0])

    def draw_many(self, set_id: int, m: int) -> np.ndarray:
        """``m`` independent conditional samples from set ``set_id``."""
        self._check_draw(set_id)
        if m < 0:
            raise ValueError("m must be nonnegative")
        u = self.rng.random(m)
        pos = np.searchsorted(self._cdfs[set_id], u, side="right")
        self.ledger.record(set_id, m)
        return self.registered[set_id].indices[pos]

    def draw_counts(self, set_id: int, m: int) -> np.ndarray:
        """Histogram of ``m`` draws, aligned with the set's indices."""
        self._check_draw(set_id)
        u = self.rng.random(m)
        cdf = self._cdfs[set_id]
        pos = np.searchsorted(cdf, u, side="right")
        self.ledger.record(set_id, m)
        return np.bincount(pos, minlength=cdf.size)

    @property
    def total_draws(self) -> int:
        return self.ledger.total


class NacondOracle:
    """NACOND access to a distribution: opens sessions and totals their queries."""

    def __init__(self, target: DiscreteDistribution, rng: np.random.Generator, name: str = "p"):
        self.target = target
        self.rng = rng
        self.name = name
        self.sessions: list[NacondSession] = []

    @property
    def n(self) -> int:
        return self.target.n

    def session(self) -> NacondSession:
        s = NacondSession(self.target, self.rng, stream=self.name)
        self.sessions.append(s)
        return s

    @property
    def queries(self) -> int:
        return sum(s.total_draws for s in self.sessions)


def samp_draw(p: DiscreteDistribution, rng: np.random.Generator, size: Optional[int] = None):
    """Inverse-CDF sampling from ``p``; a scalar when ``size`` is None."""
    cdf = np.cumsum(p.pmf)
    cdf /= cdf[-1]
    u = rng.random(1 if size is None else size)
    out = np.searchsorted(cdf, u, side="right")
    return int(out[0]) if size is None else out


class SampOracle:
    """Plain i.i.d. sampling access with a query counter."""

    def __init__(self, target: DiscreteDistribution, rng: np.random.Generator):
        self.target = target
        self.rng = rng
        self.queries = 0
        self._cdf = np.cumsum(target.pmf)
        self._cdf /= self._cdf[-1]

    def draw(self) -> int:
        return int(self.draw_many(1)[0])

    def draw_many(self, m: int) -> np.ndarray:
        self.queries += m
        return np.searchsorted(self._cdf, self.rng.random(m), side="right")


def full_domain(n: int) -> QuerySet:
    return QuerySet(np.arange(n))

