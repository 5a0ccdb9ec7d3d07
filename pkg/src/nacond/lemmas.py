"""Monte Carlo checks of the structural lemmas behind the tester.

Query sets are drawn as batches of Bernoulli inclusion masks; every
set-level quantity (conditional gaps, ``z(S)``, ``U_n(S)``) is evaluated
exactly from the explicit pmfs, so the only randomness is in the sets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Sequence

import numpy as np
from scipy.stats import binom

from . import distributions as dist
from .distributions import DiscreteDistribution, ceil_log2
from .harness import wilson_interval
from .oracle import derive_rng

LEMMAS = ("discrepant-set", "uniform-key", "rest-signal", "rest-noise", "appendix-a", "dkw", "good-set")
CORE_LEMMAS = LEMMAS[:6]

# Calibrated by ``calibrate_lemma_constants`` (seeds 101-103, 1e5 sets each, 80% of the
# smallest per-fixture mean, rounded down to two significant digits).
DISCREPANT_SET_C = 0.39
APPENDIX_A_C1 = 0.25
APPENDIX_A_C2 = 0.86

MASK_BATCH_ELEMENTS = 4_000_000
STABILITY = 0.2


class LemmaError(ValueError):
    pass


@dataclass(frozen=True)
class Check:
    """One estimated event frequency against its threshold."""

    label: str
    draws: int
    hits: int
    threshold: float
    direction: str  # ">=" or "<="
    passed: bool
    exact: Optional[float] = None

    @property
    def frequency(self) -> float:
        return self.hits / self.draws

    @property
    def ci(self) -> tuple[float, float]:
        return wilson_interval(self.hits, self.draws)

    def line(self) -> str:
        lo, hi = self.ci
        ex = "" if self.exact is None else f" exact={self.exact:.5f}"
        return (
            f"{'PASS' if self.passed else 'FAIL'} {self.label}: freq={self.frequency:.5f} "
            f"ci95=[{lo:.5f}, {hi:.5f}] {self.direction} {self.threshold:.5f} draws={self.draws}{ex}"
        )


@dataclass
class LemmaReport:
    lemma: str
    checks: list[Check]
    notes: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(c.passed for c in self.checks)

    @property
    def draws(self) -> int:
        return sum(c.draws for c in self.checks)

    def lines(self) -> list[str]:
        head = f"[{'PASS' if self.passed else 'FAIL'}] {self.lemma}"
        extra = [f"  note {k}: {v}" for k, v in self.notes.items()]
        return [head] + ["  " + c.line() for c in self.checks] + extra


# --- set sampling -----------------------------------------------------------


def _batches(total: int, n: int) -> Iterator[int]:
    size = max(1, MASK_BATCH_ELEMENTS // n)
    done = 0
    while done < total:
        b = min(size, total - done)
        yield b
        done += b


def inclusion_masks(n: int, js: np.ndarray, rng: np.random.Generator, redraw_empty: bool = False) -> np.ndarray:
    """Row ``k`` keeps each symbol independently with probability ``2**-js[k]``.

    With ``redraw_empty`` the rows follow that law conditioned on being
    nonempty: the first kept symbol ``F`` is drawn from its truncated
    geometric law and the symbols after it are kept independently.
    """
    probs = 2.0 ** -np.asarray(js, dtype=float)
    masks = rng.random((probs.size, n)) < probs[:, None]
    if redraw_empty:
        log_keep = np.log1p(-probs)
        u = rng.random(probs.size)
        # inverse CDF of Pr[F = f] proportional to (1 - pi)^f pi on f < n
        first = np.floor(np.log1p(u * np.expm1(n * log_keep)) / log_keep).astype(np.int64)
        first = np.clip(first, 0, n - 1)
        idx = np.arange(n)
        masks &= idx[None, :] > first[:, None]
        masks |= idx[None, :] == first[:, None]
    return masks


def max_conditional_gap(p: np.ndarray, q: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """``max_{i in S} |p_S(i) - q_S(i)|`` per mask row; zero-mass sets condition to uniform."""
    size = masks.sum(axis=1)
    out = np.zeros(masks.shape[0])
    ok = size > 0
    m = masks[ok]
    k = size[ok][:, None]

    def cond(x):
        w = m * x
        tot = w.sum(axis=1, keepdims=True)
        return np.where(tot > 0, w / np.where(tot > 0, tot, 1.0), m / k)

    gap = np.abs(cond(p) - cond(q)) * m
    out[ok] = gap.max(axis=1)
    return out


# --- exact oracles ----------------------------------------------------------


def uniform_key_exact(z_plus: np.ndarray, J: int) -> float:
    """Exact ``Pr[exists i in S: z+(i) >= 1/r]`` with ``j`` uniform on ``1..J``."""
    total = 0.0
    for j in range(1, J + 1):
        N = int(np.count_nonzero(z_plus >= 2.0**-j))
        total += -math.expm1(N * math.log1p(-(2.0**-j)))
    return total / J


def rest_signal_exact(n: int, j: int) -> float:
    """Exact ``Pr[1/(2 r) <= U_n(S minus {i}) <= 3/(2 r)]``, ``r = 2**j``."""
    r = 2**j
    lo = math.ceil(n / (2 * r))
    hi = math.floor(3 * n / (2 * r))
    return float(binom.cdf(hi, n - 1, 1 / r) - binom.cdf(lo - 1, n - 1, 1 / r))


# --- fixtures ---------------------------------------------------------------


def fixture(name: str, n: int, eps: float, rng: np.random.Generator) -> DiscreteDistribution:
    """Named distributions used against ``uniform(n)``."""
    if name == "spike":
        return dist.spike(n, eps)
    if name == "paninski":
        return dist.paninski(n, eps, rng)
    if name == "few-heavy":
        # z+ in bins 1 and 3, z- spread thin
        return dist.mixed_bins(n, eps, {"plus": {1: 0.6, 3: 0.4}, "minus": {ceil_log2(n) - 1: 1.0}}, rng)
    if name == "graded":
        # z+ spread over bins 2, 4 and 5
        L = ceil_log2(n)
        return dist.mixed_bins(n, eps, {"plus": {2: 0.5, 4: 0.25, 5: 0.25}, "minus": {L - 1: 0.5, L: 0.5}}, rng)
    raise LemmaError(f"unknown lemma fixture {name!r}")


def _noise(p: DiscreteDistribution, n: int) -> np.ndarray:
    return dist.noise_profile(p, dist.uniform(n)).z


# --- the checks -------------------------------------------------------------


def discrepant_set_frequency(p: np.ndarray, q: np.ndarray, eps: float, draws: int, rng) -> int:
    """Sets from one planning step (``j`` on ``1..2 ceil(log2 n)``, empty sets redrawn)
    whose exact conditional gap reaches ``eps/96`` somewhere."""
    n = p.size
    J = 2 * ceil_log2(n)
    hits = 0
    for b in _batches(draws, n):
        js = rng.integers(1, J + 1, size=b)
        masks = inclusion_masks(n, js, rng, redraw_empty=True)
        hits += int(np.count_nonzero(max_conditional_gap(p, q, masks) >= eps / 96))
    return hits


def uniform_key_hits(z_plus: np.ndarray, J: int, draws: int, rng) -> int:
    n = z_plus.size
    hits = 0
    for b in _batches(draws, n):
        js = rng.integers(1, J + 1, size=b)
        masks = inclusion_masks(n, js, rng)
        big = z_plus[None, :] >= (2.0 ** -js)[:, None]
        hits += int(np.count_nonzero((masks & big).any(axis=1)))
    return hits


def rest_signal_hits(n: int, j: int, draws: int, rng, i: int = 0) -> int:
    r = 2**j
    hits = 0
    for b in _batches(draws, n):
        masks = inclusion_masks(n, np.full(b, j), rng)
        k = masks.sum(axis=1) - masks[:, i]
        hits += int(np.count_nonzero((2 * r * k >= n) & (2 * r * k <= 3 * n)))
    return hits


def rest_noise_hits(z: np.ndarray, j: int, draws: int, rng, i: int) -> int:
    n = z.size
    hits = 0
    for b in _batches(draws, n):
        masks = inclusion_masks(n, np.full(b, j), rng)
        zs = masks @ z - masks[:, i] * z[i]
        hits += int(np.count_nonzero(zs >= 4.0 / 2**j))
    return hits


def appendix_a_hits(z: np.ndarray, c1: float, draws: int, rng) -> int:
    """Joint event ``|S| in [n/(2r), 3n/(2r)]`` and ``exists i in S: |z(i)| >= c1/r``."""
    n = z.size
    J = ceil_log2(n)
    az = np.abs(z)
    hits = 0
    for b in _batches(draws, n):
        js = rng.integers(1, J + 1, size=b)
        r = 2.0**js
        masks = inclusion_masks(n, js, rng)
        size = masks.sum(axis=1)
        size_ok = (2 * r * size >= n) & (2 * r * size <= 3 * n)
        big = (masks & (az[None, :] >= (c1 / r)[:, None])).any(axis=1)
        hits += int(np.count_nonzero(size_ok & big))
    return hits


def dkw_failures(p: np.ndarray, m: int, eps: float, trials: int, rng) -> int:
    counts = rng.multinomial(m, p, size=trials)
    gap = np.abs(np.cumsum(counts, axis=1) / m - np.cumsum(p)).max(axis=1)
    return int(np.count_nonzero(gap >= eps - 1e-12))


def good_set_instances(trials: int, rng, n_max: int = 64) -> tuple[int, int, float]:
    """Random ``(p, q, S, i)`` with ``n <= n_max``.

    Returns ``(instances where the predicate min{z(i), z(i)-z(S)} > 0 held,
    those where |p_S(i) - q_S(i)| >= eps * ratio / 2 also held, smallest
    observed gap / (eps * ratio))`` with ``ratio = min{...}/(p(S)+q(S))``.
    """
    applicable = held = 0
    worst = math.inf
    for _ in range(trials):
        n = int(rng.integers(2, n_max + 1))
        p = rng.dirichlet(np.full(n, 0.5))
        q = rng.dirichlet(np.full(n, 0.5))
        eps = 0.5 * np.abs(p - q).sum()
        if eps == 0:
            continue
        z = (p - q) / eps
        mask = rng.random(n) < rng.uniform(0.05, 1.0)
        S = np.flatnonzero(mask)
        if S.size == 0:
            continue
        pS, qS = p[S].sum(), q[S].sum()
        if pS == 0 or qS == 0:
            continue
        i = int(rng.choice(S))
        pred = min(z[i], z[i] - z[S].sum())
        if pred <= 0:
            continue
        applicable += 1
        ratio = pred / (pS + qS)
        gap = abs(p[i] / pS - q[i] / qS)
        held += gap >= eps * ratio / 2
        worst = min(worst, gap / (eps * ratio))
    return applicable, held, worst


# --- drivers ----------------------------------------------------------------

N_DEFAULT = 1024
EPS_DEFAULT = 0.5


def _check_ge(label, hits, draws, threshold, exact=None) -> Check:
    return Check(label, draws, hits, threshold, ">=", hits / draws >= threshold, exact)


def _check_le(label, hits, draws, threshold, exact=None) -> Check:
    return Check(label, draws, hits, threshold, "<=", hits / draws <= threshold, exact)


def verify_discrepant_set(draws=100_000, seeds=(1, 2, 3), n=N_DEFAULT, eps=EPS_DEFAULT, c=DISCREPANT_SET_C):
    U = dist.uniform(n).pmf
    L = math.log2(n)
    checks, notes = [], {}
    for name in ("spike", "paninski"):
        freqs = []
        for s in seeds:
            rng = derive_rng(s, f"discrepant-set/{name}")
            p = fixture(name, n, eps, rng).pmf
            hits = discrepant_set_frequency(p, U, eps, draws, rng)
            checks.append(_check_ge(f"{name}(n={n}) seed={s}", hits, draws, c / L))
            freqs.append(hits / draws)
        spread = max(abs(f - np.mean(freqs)) for f in freqs) / np.mean(freqs)
        notes[f"{name} relative spread"] = round(float(spread), 4)
        if spread > STABILITY:
            checks.append(Check(f"{name} stability", 1, 0, STABILITY, "<=", False))
    notes["c"] = c
    return LemmaReport("discrepant-set", checks, notes)


def verify_uniform_key(draws=100_000, seed=4, ns=(1024, 4096), eps=EPS_DEFAULT):
    """Event frequency must not fall significantly below ``3/(20 log2(n/32))``."""
    checks = []
    for n in ns:
        J = int(math.log2(n / 32))
        for name in ("few-heavy", "graded"):
            rng = derive_rng(seed, f"uniform-key/{name}/{n}")
            z_plus = np.maximum(_noise(fixture(name, n, eps, rng), n), 0)
            hits = uniform_key_hits(z_plus, J, draws, rng)
            thr = 3 / (20 * J)
            hi = wilson_interval(hits, draws)[1]
            exact = uniform_key_exact(z_plus, J)
            checks.append(Check(f"{name}(n={n})", draws, hits, thr, ">=", hi >= thr, exact))
    return LemmaReport("uniform-key", checks)


def verify_rest_signal(draws=20_000, seed=5, ns=(1024, 4096)):
    thr = 1 - 2 / math.e**2 - 0.02
    checks = []
    for n in ns:
        for j in range(1, int(math.log2(n / 32)) + 1):
            rng = derive_rng(seed, f"rest-signal/{n}/{j}")
            hits = rest_signal_hits(n, j, draws, rng)
            checks.append(_check_ge(f"n={n} j={j}", hits, draws, thr, rest_signal_exact(n, j)))
    return LemmaReport("rest-signal", checks)


def verify_rest_noise(draws=10_000, seed=6, eps=EPS_DEFAULT):
    cases = [("paninski", 4096), ("spike", 1024), ("few-heavy", 1024), ("graded", 1024)]
    checks = []
    for name, n in cases:
        rng = derive_rng(seed, f"rest-noise/{name}")
        z = _noise(fixture(name, n, eps, rng), n)
        for i, tag in ((int(np.argmin(z)), "argmin"), (int(np.argmax(z)), "argmax")):
            for j in range(1, ceil_log2(n) + 1):
                hits = rest_noise_hits(z, j, draws, rng, i)
                checks.append(_check_le(f"{name}(n={n}) i={tag} j={j}", hits, draws, 0.26))
    return LemmaReport("rest-noise", checks)


def verify_appendix_a(draws=100_000, seed=7, n=N_DEFAULT, eps=EPS_DEFAULT, c1=APPENDIX_A_C1, c2=APPENDIX_A_C2):
    U = dist.uniform(n).pmf
    checks = []
    for name in ("spike", "paninski", "few-heavy", "graded"):
        rng = derive_rng(seed, f"appendix-a/{name}")
        z = fixture(name, n, eps, rng).pmf - U
        hits = appendix_a_hits(z, c1, draws, rng)
        checks.append(_check_ge(f"{name}(n={n})", hits, draws, c2 / math.log2(n)))
    return LemmaReport("appendix-a", checks, {"c1": c1, "c2": c2})


def verify_dkw(trials=10_000, seed=8, n=16, m=100, eps=0.2):
    rng = derive_rng(seed, "dkw")
    bound = 2 * math.exp(-2 * m * eps * eps)
    fails = dkw_failures(dist.uniform(n).pmf, m, eps, trials, rng)
    low = wilson_interval(fails, trials)[0]
    check = Check(f"uniform({n}) m={m} eps={eps}", trials, fails, bound, "<=", low <= bound)
    return LemmaReport("dkw", [check], {"bound": bound})


def verify_good_set(trials=10_000, seed=9):
    rng = derive_rng(seed, "good-set")
    applicable, held, worst = good_set_instances(trials, rng)
    check = Check("random (p, q, S, i), n <= 64", applicable, held, 1.0, ">=", applicable > 0 and held == applicable)
    return LemmaReport("good-set", [check], {"min gap / (eps * ratio)": round(worst, 6)})


VERIFIERS: dict[str, Callable[..., LemmaReport]] = {
    "discrepant-set": verify_discrepant_set,
    "uniform-key": verify_uniform_key,
    "rest-signal": verify_rest_signal,
    "rest-noise": verify_rest_noise,
    "appendix-a": verify_appendix_a,
    "dkw": verify_dkw,
    "good-set": verify_good_set,
}


def verify_lemma(name: str, **kwargs) -> LemmaReport:
    try:
        fn = VERIFIERS[name]
    except KeyError:
        raise LemmaError(f"unknown lemma {name!r}; expected one of {LEMMAS}") from None
    return fn(**kwargs)


def verify_all(names: Sequence[str] = LEMMAS) -> list[LemmaReport]:
    return [verify_lemma(n) for n in names]


# --- calibration of the unnamed constants -----------------------------------


def _floor2(x: float) -> float:
    if x <= 0:
        return 0.0
    e = math.floor(math.log10(x)) - 1
    return math.floor(x / 10**e) * 10**e


def calibrate_lemma_constants(
    draws: int = 100_000,
    seeds: Sequence[int] = (101, 102, 103),
    n: int = N_DEFAULT,
    eps: float = EPS_DEFAULT,
    margin: float = 0.8,
    c1_grid: Sequence[float] = (1.0, 0.5, 0.25, 0.125, 0.0625),
) -> dict:
    """Constants for the discrepant-set and appendix-a checks.

    ``c`` and ``c2`` are ``margin`` times the smallest per-fixture mean
    frequency times ``log2 n``.  ``c1`` is the largest grid value whose
    smallest per-fixture joint frequency is at least ``1/log2 n``.
    """
    L = math.log2(n)
    U = dist.uniform(n).pmf
    lem5 = []
    for name in ("spike", "paninski"):
        f = []
        for s in seeds:
            rng = derive_rng(s, f"calibrate/discrepant-set/{name}")
            p = fixture(name, n, eps, rng).pmf
            f.append(discrepant_set_frequency(p, U, eps, draws, rng) / draws)
        lem5.append(float(np.mean(f)))
    out = {"c": _floor2(margin * min(lem5) * L), "discrepant_set_means": lem5}
    for c1 in c1_grid:
        f = []
        for name in ("spike", "paninski", "few-heavy", "graded"):
            rng = derive_rng(seeds[0], f"calibrate/appendix-a/{name}")
            z = fixture(name, n, eps, rng).pmf - U
            f.append(appendix_a_hits(z, c1, draws, rng) / draws)
        if min(f) * L >= 1:
            out.update(c1=c1, c2=_floor2(margin * min(f) * L), appendix_a_freqs=f)
            break
    return out
