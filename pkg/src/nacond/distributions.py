"""Explicit discrete distributions over ``{0, ..., n-1}`` and the quantities
derived from a pair of them: distances, conditionals, the normalized
discrepancy vector and its dyadic bins.

Symbols are 0-based throughout the package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence, Union

import numpy as np

SUM_TOL = 1e-9
FILE_SUM_TOL = 1e-6
BIN_SNAP = 1e-12


class DistributionError(ValueError):
    """Invalid distribution or generator parameters."""


class DistributionFileError(DistributionError):
    """Malformed distribution file."""


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    """A probability mass function over ``{0, ..., n-1}``, ``n >= 2``.

    The pmf is stored as a read-only float64 array.
    """

    pmf: np.ndarray

    def __post_init__(self):
        pmf = np.array(self.pmf, dtype=np.float64).ravel()
        if pmf.size < 2:
            raise DistributionError(f"domain size must be at least 2, got {pmf.size}")
        if not np.all(np.isfinite(pmf)):
            raise DistributionError("pmf entries must be finite")
        if np.any(pmf < 0):
            raise DistributionError("pmf entries must be nonnegative")
        total = float(pmf.sum())
        if abs(total - 1.0) > SUM_TOL:
            raise DistributionError(f"pmf sums to {total!r}, not 1")
        pmf.setflags(write=False)
        object.__setattr__(self, "pmf", pmf)

    @classmethod
    def from_weights(cls, weights: Sequence[float]) -> "DiscreteDistribution":
        w = np.asarray(weights, dtype=np.float64)
        if np.any(w < 0):
            raise DistributionError("weights must be nonnegative")
        total = w.sum()
        if total <= 0:
            raise DistributionError("weights must have positive total")
        return cls(w / total)

    @property
    def n(self) -> int:
        return self.pmf.size

    def __len__(self) -> int:
        return self.pmf.size

    def __getitem__(self, i):
        return self.pmf[i]

    def __array__(self, dtype=None, copy=None):
        return self.pmf if dtype is None else self.pmf.astype(dtype)

    def __repr__(self) -> str:
        return f"DiscreteDistribution(n={self.n})"

    def mass(self, S) -> float:
        """``p(S)``, the total probability of the index set ``S``."""
        return float(self.pmf[np.asarray(S, dtype=np.intp)].sum())

    def mixture(self, other: "DiscreteDistribution") -> "DiscreteDistribution":
        """The midpoint ``(p + q) / 2``."""
        _check_same_domain(self, other)
        return DiscreteDistribution((self.pmf + other.pmf) / 2)

    def permuted(self, rng: np.random.Generator) -> "DiscreteDistribution":
        return DiscreteDistribution(self.pmf[rng.permutation(self.n)])


DistLike = Union[DiscreteDistribution, np.ndarray, Sequence[float]]


def _pmf(x: DistLike) -> np.ndarray:
    if isinstance(x, DiscreteDistribution):
        return x.pmf
    return np.asarray(x, dtype=np.float64)


def _check_same_domain(p: DistLike, q: DistLike) -> tuple[np.ndarray, np.ndarray]:
    a, b = _pmf(p), _pmf(q)
    if a.shape != b.shape:
        raise DistributionError(f"domain sizes differ: {a.size} vs {b.size}")
    return a, b


def tv_distance(p: DistLike, q: DistLike) -> float:
    a, b = _check_same_domain(p, q)
    return float(0.5 * np.abs(a - b).sum())


def kolmogorov_distance(p: DistLike, q: DistLike) -> float:
    a, b = _check_same_domain(p, q)
    return float(np.abs(np.cumsum(a - b)).max())


def linf_distance(p: DistLike, q: DistLike) -> tuple[int, float]:
    """Index and value of the largest pointwise gap; ties go to the smallest index."""
    a, b = _check_same_domain(p, q)
    gaps = np.abs(a - b)
    i = int(np.argmax(gaps))
    return i, float(gaps[i])


def _index_array(S, n: int) -> np.ndarray:
    idx = np.asarray(S, dtype=np.intp).ravel()
    if idx.size == 0:
        raise DistributionError("query set is empty")
    if idx.min() < 0 or idx.max() >= n:
        raise DistributionError(f"query set has indices outside [0, {n})")
    return idx


def conditional(p: DistLike, S) -> np.ndarray:
    """``p_S`` as an array aligned with the entries of ``S``.

    Zero-mass sets give the uniform distribution on ``S``.
    """
    a = _pmf(p)
    idx = _index_array(S, a.size)
    w = a[idx]
    total = w.sum()
    if total > 0:
        return w / total
    return np.full(idx.size, 1.0 / idx.size)


def discrepancy_expression(p: DistLike, q: DistLike, S, i: int) -> float:
    """``|p_S(i) - q_S(i)|`` computed from the explicit pmfs."""
    a, b = _check_same_domain(p, q)
    idx = _index_array(S, a.size)
    pos = np.flatnonzero(idx == i)
    if pos.size == 0:
        raise DistributionError(f"index {i} is not in the query set")
    k = int(pos[0])
    return float(abs(conditional(a, idx)[k] - conditional(b, idx)[k]))


def log2n(n: int) -> float:
    return math.log2(n)


def ceil_log2(n: int) -> int:
    """``ceil(log2 n)`` for integers, exact (no float rounding)."""
    return max(1, (int(n) - 1).bit_length())


# --- bins -------------------------------------------------------------------


def bin_index(x: np.ndarray) -> np.ndarray:
    """Bin index ``j`` with ``2**-j <= x < 2**(1-j)`` for each positive entry.

    ``frexp`` writes ``x = m * 2**e`` with ``m`` in ``[0.5, 1)`` exactly, so
    ``j = 1 - e``.  Values within a relative ``BIN_SNAP`` below a power of two
    count as that power (rounding in ``(p - q) / d_TV`` otherwise moves exact
    dyadic entries down a bin).  Zero entries get index 0 and must be masked
    by the caller.
    """
    m, e = np.frexp(np.asarray(x, dtype=np.float64))
    e = np.where(m >= 1.0 - BIN_SNAP, e + 1, e)
    return (1 - e).astype(np.int64)


@dataclass(frozen=True, eq=False)
class BinPartition:
    """Dyadic level sets of a nonnegative vector.

    ``bins[j]`` holds the indices with ``2**-j <= x(i) < 2**(1-j)``.  Entries
    equal to zero belong to no bin.  Entries ``>= 1`` land in bins ``j <= 0``.
    """

    source: np.ndarray
    bins: dict[int, np.ndarray] = field(default_factory=dict)

    def mass(self, j: int) -> float:
        idx = self.bins.get(j)
        return 0.0 if idx is None else float(self.source[idx].sum())

    @property
    def masses(self) -> dict[int, float]:
        return {j: self.mass(j) for j in self.bins}

    def size(self, j: int) -> int:
        idx = self.bins.get(j)
        return 0 if idx is None else idx.size


def bin_partition(x) -> BinPartition:
    v = np.array(x, dtype=np.float64).ravel()
    if np.any(v < 0):
        raise DistributionError("bin_partition needs a nonnegative vector")
    v.setflags(write=False)
    nz = np.flatnonzero(v > 0)
    bins: dict[int, np.ndarray] = {}
    if nz.size:
        js = bin_index(v[nz])
        order = np.argsort(js, kind="stable")
        js_sorted, nz_sorted = js[order], nz[order]
        cuts = np.flatnonzero(np.diff(js_sorted)) + 1
        for group_j, group in zip(np.split(js_sorted, cuts), np.split(nz_sorted, cuts)):
            bins[int(group_j[0])] = np.sort(group)
    return BinPartition(source=v, bins=bins)


# --- discrepancy profile ----------------------------------------------------


@dataclass(frozen=True, eq=False)
class DiscrepancyProfile:
    """Normalized difference ``z = (p - q) / d_TV(p, q)`` of two distributions.

    ``z_hat`` keeps ``z(i)`` only where ``|z(i)| > (p(i) + q(i)) / (400 log2 n)``;
    the other indices form ``zeroed_set``.
    """

    eps: float
    z: np.ndarray
    z_plus: np.ndarray
    z_minus: np.ndarray
    z_hat: np.ndarray
    zeroed_set: np.ndarray
    signal: np.ndarray  # p + q

    @property
    def n(self) -> int:
        return self.z.size

    @property
    def b_plus(self) -> BinPartition:
        """Bins of ``z_hat^+`` (whose masses are the ``b+`` measure)."""
        return bin_partition(np.maximum(self.z_hat, 0.0))

    @property
    def b_minus(self) -> BinPartition:
        return bin_partition(np.maximum(-self.z_hat, 0.0))

    def truncated_positive_mass(self) -> float:
        return float(self.z_plus[self.zeroed_set].sum())


def noise_profile(p: DistLike, q: DistLike) -> DiscrepancyProfile:
    a, b = _check_same_domain(p, q)
    eps = tv_distance(a, b)
    if eps == 0:
        raise DistributionError("noise profile is undefined for identical distributions")
    z = (a - b) / eps
    signal = a + b
    cutoff = signal / (400.0 * log2n(a.size))
    keep = np.abs(z) > cutoff
    z_hat = np.where(keep, z, 0.0)
    arrays = [z, np.maximum(z, 0.0), np.maximum(-z, 0.0), z_hat, np.flatnonzero(~keep), signal]
    for arr in arrays:
        arr.setflags(write=False)
    return DiscrepancyProfile(eps, *arrays)


# --- generators -------------------------------------------------------------


def _check_n(n: int) -> None:
    if int(n) != n or n < 2:
        raise DistributionError(f"n must be an integer >= 2, got {n!r}")


def _check_eps(eps: float) -> None:
    if not 0 < eps <= 1:
        raise DistributionError(f"eps must lie in (0, 1], got {eps!r}")


def uniform(n: int) -> DiscreteDistribution:
    _check_n(n)
    return DiscreteDistribution(np.full(n, 1.0 / n))


def spike(n: int, eps: float, i_star: int = 0) -> DiscreteDistribution:
    """Symbol ``i_star`` at ``1/n + eps``; the rest share the deficit evenly.

    The others sit at ``1/n - eps/(n-1)``, so ``d_TV`` to uniform is exactly ``eps``.
    """
    _check_n(n)
    _check_eps(eps)
    if eps > 1 - 1 / n:
        raise DistributionError(f"spike needs eps <= 1 - 1/n, got {eps!r}")
    if not 0 <= i_star < n:
        raise DistributionError(f"i_star out of range: {i_star}")
    pmf = np.full(n, max(0.0, 1 / n - eps / (n - 1)))
    pmf[i_star] = 1 / n + eps
    return DiscreteDistribution(pmf)


def paninski(n: int, eps: float, rng: np.random.Generator) -> DiscreteDistribution:
    """A random half of the symbols at ``(1+eps)/n``, the rest at ``(1-eps)/n``."""
    _check_n(n)
    _check_eps(eps)
    if n % 2:
        raise DistributionError(f"paninski needs even n, got {n}")
    signs = np.ones(n)
    signs[rng.permutation(n)[: n // 2]] = -1.0
    return DiscreteDistribution((1 + eps * signs) / n)


def mixed_bins(
    n: int,
    eps: float,
    spec: Mapping[str, Mapping[int, float]],
    rng: np.random.Generator,
) -> DiscreteDistribution:
    """Perturb the uniform distribution with discrepancy mass in chosen bins.

    ``spec = {"plus": {j: mass, ...}, "minus": {j: mass, ...}}``; each side's
    masses must sum to 1.  The result ``p`` has ``d_TV(p, U_n) = eps`` and the
    bins of ``z+`` (resp. ``z-``) carry exactly the requested masses.
    """
    _check_n(n)
    _check_eps(eps)
    unknown = set(spec) - {"plus", "minus"}
    if unknown:
        raise DistributionError(f"unknown mixed_bins keys: {sorted(unknown)}")
    z = np.zeros(n)
    slots = rng.permutation(n)
    used = 0
    for side, sign in (("plus", 1.0), ("minus", -1.0)):
        masses = dict(spec.get(side, {}))
        if abs(sum(masses.values()) - 1.0) > SUM_TOL:
            raise DistributionError(f"{side} bin masses must sum to 1")
        for j, mass in sorted(masses.items()):
            if mass <= 0:
                continue
            count = math.floor(mass * 2.0**j)
            if count < 1:
                raise DistributionError(f"mass {mass} cannot sit in bin {j}")
            if used + count > n:
                raise DistributionError("bin spec needs more symbols than n")
            z[slots[used : used + count]] = sign * mass / count
            used += count
    pmf = 1.0 / n + eps * z
    if np.any(pmf < 0):
        raise DistributionError("eps too large for this bin spec (negative mass)")
    return DiscreteDistribution(pmf / pmf.sum())


def near_uniform_perturb(n: int, delta_inf: float, rng: np.random.Generator) -> DiscreteDistribution:
    """A random ``q`` with ``||q - U_n||_inf <= delta_inf``."""
    _check_n(n)
    if not 0 <= delta_inf <= 1 / (100 * n):
        raise DistributionError(f"delta_inf must lie in [0, 1/(100 n)], got {delta_inf!r}")
    half = n // 2
    u = rng.uniform(-delta_inf, delta_inf, size=half)
    d = np.zeros(n)
    order = rng.permutation(n)
    d[order[:half]] = u
    d[order[half : 2 * half]] = -u
    return DiscreteDistribution(1.0 / n + d)


def ramp(n: int, slope: float = 0.5) -> DiscreteDistribution:
    """``q(i)`` proportional to ``1 + slope * (i + 1) / n``."""
    _check_n(n)
    return DiscreteDistribution.from_weights(1 + slope * np.arange(1, n + 1) / n)


def from_file(path: Union[str, Path]) -> DiscreteDistribution:
    """Read one nonnegative decimal per line; the total must be within 1e-6 of 1."""
    values = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            try:
                v = float(text)
            except ValueError:
                raise DistributionFileError(f"{path}:{lineno}: not a number: {text!r}") from None
            if not math.isfinite(v) or v < 0:
                raise DistributionFileError(f"{path}:{lineno}: invalid probability {text!r}")
            values.append(v)
    if len(values) < 2:
        raise DistributionFileError(f"{path}: need at least 2 lines, got {len(values)}")
    total = math.fsum(values)
    if abs(total - 1.0) > FILE_SUM_TOL:
        raise DistributionFileError(f"{path}:{len(values)}: probabilities sum to {total!r}")
    return DiscreteDistribution(np.asarray(values) / total)


def to_file(dist: DiscreteDistribution, path: Union[str, Path]) -> None:
    Path(path).write_text("".join(f"{v!r}\n" for v in dist.pmf.tolist()))
