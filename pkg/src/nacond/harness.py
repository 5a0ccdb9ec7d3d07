"""Seeded Monte Carlo trials, summaries, calibration of the tester constants
and record output.

Every trial derives its own random streams from ``(seed, tag, trial_id)``,
so a spec and seed determine every record regardless of how trials are
scheduled across worker processes.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import binomtest

from . import distributions as dist
from .anaconda import (
    AnacondaConfig,
    ConfigError,
    Constants,
    UNIFORMITY_DEFAULTS,
    Verdict,
    anaconda_run,
    equivalence_config,
    load_constants,
    near_uniform_identity,
    uniformity_config,
)
from .distributions import DiscreteDistribution
from .identity import bucket_mass_shift, identity_test, within_bucket_perturbation
from .oracle import NacondOracle, NacondSession, derive_rng

MODES = ("uniformity", "identity", "equivalence", "near-uniform-identity")
FORMATS = ("csv", "jsonl")
RECORD_FIELDS = (
    "trial_id",
    "seed",
    "verdict",
    "truth",
    "queries_p",
    "queries_q",
    "witness_t",
    "witness_set_size",
    "witness_index",
    "witness_gap",
    "wall_ms",
)
BUNDLED = {
    "uniformity": "uniformity",
    "equivalence": "equivalence",
    "identity": "near-uniform-identity",
    "near-uniform-identity": "near-uniform-identity",
}


class HarnessError(ValueError):
    """Invalid experiment spec (bad mode/fixture combination etc.)."""


def default_constants(mode: str) -> Constants:
    try:
        return load_constants(BUNDLED[mode])
    except (KeyError, FileNotFoundError):
        return UNIFORMITY_DEFAULTS if mode != "equivalence" else Constants(1.0, 1.0, 1.0)


# --- fixtures ---------------------------------------------------------------


@dataclass(frozen=True)
class Instance:
    p: DiscreteDistribution
    q: DiscreteDistribution

    @property
    def truth(self) -> str:
        return "Equal" if np.array_equal(self.p.pmf, self.q.pmf) else "Far"


def _near_uniform_q(n: int, rng) -> DiscreteDistribution:
    return dist.near_uniform_perturb(n, 0.99 / (100 * n), rng)


def _signed_perturb(q: DiscreteDistribution, eps: float, rng) -> DiscreteDistribution:
    """``q(i) (1 +- 2 eps)`` on random halves; ``d_TV = eps`` up to normalization."""
    if eps > 0.5:
        raise HarnessError("signed perturbation needs eps <= 1/2")
    signs = np.ones(q.n)
    signs[rng.permutation(q.n)[: q.n // 2]] = -1
    return DiscreteDistribution.from_weights(q.pmf * (1 + 2 * eps * signs))


FixtureFn = Callable[[int, float, np.random.Generator], Instance]

_U = dist.uniform

FIXTURES: dict[str, dict[str, FixtureFn]] = {
    "uniformity": {
        "uniform": lambda n, e, r: Instance(_U(n), _U(n)),
        "spike": lambda n, e, r: Instance(dist.spike(n, e), _U(n)),
        "paninski": lambda n, e, r: Instance(dist.paninski(n, e, r), _U(n)),
    },
    "equivalence": {
        "uniform": lambda n, e, r: Instance(_U(n), _U(n)),
        "paninski": lambda n, e, r: Instance(dist.paninski(n, e, r), _U(n)),
        "spike": lambda n, e, r: Instance(dist.spike(n, e), _U(n)),
        "paninski-pair": lambda n, e, r: Instance(dist.paninski(n, e, r), dist.paninski(n, e, r)),
        "ramp": lambda n, e, r: Instance(dist.ramp(n), dist.ramp(n)),
    },
    "identity": {
        "ramp": lambda n, e, r: Instance(dist.ramp(n), dist.ramp(n)),
        "ramp-within": lambda n, e, r: Instance(within_bucket_perturbation(dist.ramp(n), e, r), dist.ramp(n)),
        "ramp-reduced": lambda n, e, r: Instance(bucket_mass_shift(dist.ramp(n), e), dist.ramp(n)),
        "uniform": lambda n, e, r: Instance(_U(n), _U(n)),
        "paninski": lambda n, e, r: Instance(dist.paninski(n, e, r), _U(n)),
    },
    "near-uniform-identity": {
        "near-uniform": lambda n, e, r: (lambda q: Instance(q, q))(_near_uniform_q(n, r)),
        "near-uniform-far": lambda n, e, r: (lambda q: Instance(_signed_perturb(q, e, r), q))(
            _near_uniform_q(n, r)
        ),
        "uniform": lambda n, e, r: Instance(_U(n), _U(n)),
    },
}

CANONICAL = {
    "uniformity": ("uniform", "paninski"),
    "equivalence": ("uniform", "paninski"),
    "near-uniform-identity": ("near-uniform", "near-uniform-far"),
    "identity": ("ramp", "ramp-within"),
}


# --- specs and records ------------------------------------------------------


@dataclass(frozen=True)
class ExperimentSpec:
    mode: str
    n: int
    eps: float
    trials: int = 100
    seed: int = 0
    fixture: str = ""
    fixture_eps: Optional[float] = None
    constants: Optional[Constants] = None
    delta: float = 0.05  # near-uniform-identity only
    out: Optional[str] = None
    fmt: str = "csv"
    parallel: int = 1
    timing: bool = True
    p_file: Optional[str] = None
    q_file: Optional[str] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise HarnessError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.trials < 1:
            raise HarnessError("trials must be >= 1")
        if self.fmt not in FORMATS:
            raise HarnessError(f"unknown format {self.fmt!r}")
        fixture = self.fixture or CANONICAL[self.mode][1]
        object.__setattr__(self, "fixture", fixture)
        if fixture != "file" and fixture not in FIXTURES[self.mode]:
            raise HarnessError(
                f"fixture {fixture!r} is not valid for mode {self.mode!r}; "
                f"choose from {sorted(FIXTURES[self.mode]) + ['file']}"
            )
        if fixture == "file" and not self.p_file:
            raise HarnessError("fixture 'file' needs p_file")
        if self.constants is None:
            object.__setattr__(self, "constants", default_constants(self.mode))
        if self.parallel < 1:
            raise HarnessError("parallel must be >= 1")
        # surface generator precondition errors (e.g. odd n for paninski) early
        self.instance(0)

    def instance(self, trial_id: int) -> Instance:
        rng = derive_rng(self.seed, "fixture", trial_id)
        e = self.fixture_eps if self.fixture_eps is not None else self.eps
        if self.fixture == "file":
            p = dist.from_file(self.p_file)
            q = dist.from_file(self.q_file) if self.q_file else dist.uniform(p.n)
            if p.n != self.n or q.n != self.n:
                raise HarnessError(f"distribution files have n={p.n}/{q.n}, spec says {self.n}")
            return Instance(p, q)
        try:
            return FIXTURES[self.mode][self.fixture](self.n, e, rng)
        except dist.DistributionError as exc:
            raise HarnessError(f"fixture {self.fixture!r}: {exc}") from exc


@dataclass(frozen=True)
class TrialRecord:
    trial_id: int
    seed: int
    verdict: str
    truth: str
    queries_p: int
    queries_q: int
    witness_t: Optional[int] = None
    witness_set_size: Optional[int] = None
    witness_index: Optional[int] = None
    witness_gap: Optional[float] = None
    wall_ms: float = 0.0
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def correct(self) -> bool:
        return self.verdict == self.truth

    def row(self) -> dict:
        d = asdict(self)
        d.pop("extra")
        return d


def wilson_interval(k: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    ci = binomtest(k, n).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass(frozen=True)
class ErrorRate:
    errors: int
    total: int
    low: float
    high: float

    @classmethod
    def of(cls, errors: int, total: int) -> "ErrorRate":
        return cls(errors, total, *wilson_interval(errors, total))

    @property
    def rate(self) -> Optional[float]:
        return self.errors / self.total if self.total else None


@dataclass(frozen=True)
class SummaryStats:
    trials: int
    false_far: ErrorRate  # among truth == Equal
    false_equal: ErrorRate  # among truth == Far
    max_error: float
    passed: bool
    mean_queries_p: float
    mean_queries_q: float
    wall_ms: float

    def as_dict(self) -> dict:
        return asdict(self)


def summarize(records: Sequence[TrialRecord], max_error: float = 1 / 3) -> SummaryStats:
    """Error rates from the records; passes iff every Wilson-95% upper bound is <= ``max_error``."""
    eq = [r for r in records if r.truth == "Equal"]
    far = [r for r in records if r.truth == "Far"]
    ff = ErrorRate.of(sum(r.verdict == "Far" for r in eq), len(eq))
    fe = ErrorRate.of(sum(r.verdict == "Equal" for r in far), len(far))
    passed = all(e.high <= max_error for e in (ff, fe) if e.total)
    return SummaryStats(
        trials=len(records),
        false_far=ff,
        false_equal=fe,
        max_error=max_error,
        passed=passed,
        mean_queries_p=float(np.mean([r.queries_p for r in records])) if records else 0.0,
        mean_queries_q=float(np.mean([r.queries_q for r in records])) if records else 0.0,
        wall_ms=float(sum(r.wall_ms for r in records)),
    )


# --- running ----------------------------------------------------------------


def config_for(mode: str, n: int, eps: float, constants: Constants) -> AnacondaConfig:
    if mode == "equivalence":
        return equivalence_config(n, eps, constants)
    return uniformity_config(n, eps, constants)


def _record(trial_id: int, spec: ExperimentSpec, v: Verdict, truth: str, start: float, extra=None) -> TrialRecord:
    w = v.witness
    return TrialRecord(
        trial_id=trial_id,
        seed=spec.seed,
        verdict=str(v.outcome),
        truth=truth,
        queries_p=v.queries_p,
        queries_q=v.queries_q,
        witness_t=None if w is None else w.t,
        witness_set_size=None if w is None else w.set_size,
        witness_index=None if w is None else w.index,
        witness_gap=None if w is None else round(w.gap, 12),
        wall_ms=round((time.perf_counter() - start) * 1e3, 3) if spec.timing else 0.0,
        extra=extra or {},
    )


def run_trial(spec: ExperimentSpec, trial_id: int) -> TrialRecord:
    start = time.perf_counter()
    # per-process counter, so the delta travels back inside the record
    violations_before = NacondSession.violations
    inst = spec.instance(trial_id)
    oracle_p = NacondOracle(inst.p, derive_rng(spec.seed, "p", trial_id), name="p")
    plan_rng = derive_rng(spec.seed, "plan", trial_id)
    extra: dict = {}
    if spec.mode in ("uniformity", "equivalence"):
        cfg = config_for(spec.mode, spec.n, spec.eps, spec.constants)
        oracle_q = NacondOracle(inst.q, derive_rng(spec.seed, "q", trial_id), name="q")
        v = anaconda_run(oracle_p, oracle_q, cfg, plan_rng)
        sessions = oracle_p.sessions + oracle_q.sessions
    elif spec.mode == "near-uniform-identity":
        v = near_uniform_identity(oracle_p, inst.q, spec.eps, spec.delta, spec.constants, plan_rng)
        sessions = oracle_p.sessions
    else:
        report = identity_test(oracle_p, inst.q, spec.eps, spec.constants, plan_rng)
        v = report.verdict
        sessions = oracle_p.sessions
        extra = {
            "nacond_queries": report.nacond_queries,
            "samp_queries": report.samp_queries,
            "buckets": [asdict(b) for b in report.buckets],
        }
    if v.queries_p != oracle_p.queries:
        raise AssertionError("record query count disagrees with the session ledger")
    extra["registered_at_first_draw"] = [s.registered_at_first_draw for s in sessions]
    extra["registered"] = [len(s.registered) for s in sessions]
    extra["violations"] = NacondSession.violations - violations_before
    return _record(trial_id, spec, v, inst.truth, start, extra)


def _run_chunk(args) -> list[TrialRecord]:
    spec, ids = args
    return [run_trial(spec, t) for t in ids]


def run_trials(spec: ExperimentSpec, max_error: float = 1 / 3) -> tuple[list[TrialRecord], SummaryStats]:
    """Run all trials; records come back in ``trial_id`` order."""
    ids = list(range(spec.trials))
    workers = min(spec.parallel, spec.trials)
    if workers <= 1:
        records = [run_trial(spec, t) for t in ids]
    else:
        chunks = [ids[k::workers] for k in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_run_chunk, [(spec, c) for c in chunks]))
        records = sorted((r for part in parts for r in part), key=lambda r: r.trial_id)
    summary = summarize(records, max_error)
    if spec.out:
        write_records(records, spec.out, spec.fmt)
    return records, summary


def format_records(records: Sequence[TrialRecord], fmt: str = "csv") -> str:
    buf = io.StringIO()
    if fmt == "csv":
        writer = csv.DictWriter(buf, fieldnames=RECORD_FIELDS, lineterminator="\n")
        writer.writeheader()
        for r in records:
            writer.writerow({k: ("" if v is None else v) for k, v in r.row().items()})
    elif fmt == "jsonl":
        for r in records:
            buf.write(json.dumps(r.row()) + "\n")
    else:
        raise HarnessError(f"unknown format {fmt!r}")
    return buf.getvalue()


def write_records(records: Sequence[TrialRecord], path, fmt: str = "csv") -> None:
    Path(path).write_text(format_records(records, fmt))


# --- calibration ------------------------------------------------------------

CALIBRATION_MODES = ("uniformity", "equivalence", "near-uniform-identity")

# Candidate (T, m, eps'/eps) grids; converted into constants for each mode.
DEFAULT_GRID = {
    "T": (10, 20, 30, 40, 60, 80),
    "m": (128, 256, 384, 512, 768, 1024, 1536, 2048),
    "eps_frac": (0.15, 0.2, 0.25, 0.3),
}


def _shapes(mode: str, n: int, eps: float) -> tuple[float, float, float]:
    """Multipliers ``(s_T, s_m, s_eps)`` with ``T = c_T s_T`` etc. for the mode's config."""
    L = math.log2(n)
    if mode == "equivalence":
        return L**6, L**6 / eps**2, eps / L**3
    return L, max(1.0, math.log2(L)) / eps**2, eps


def constants_for(mode: str, n: int, eps: float, T: int, m: int, eps_frac: float, c_b: float = 1.0) -> Constants:
    s_T, s_m, s_eps = _shapes(mode, n, eps)
    return Constants(c_T=T / s_T, c_m=m / s_m, c_eps=eps_frac * eps / s_eps, c_b=c_b)


@dataclass
class CalibrationPoint:
    constants: Constants
    T: int
    m: int
    eps_prime: float
    false_far: ErrorRate
    false_equal: ErrorRate
    passed: bool


@dataclass
class CalibrationResult:
    mode: str
    n: int
    eps: float
    target_success: float
    trials: int
    evaluated: list[CalibrationPoint]
    best: Optional[CalibrationPoint]
    delta: Optional[float] = None

    @property
    def found(self) -> bool:
        return self.best is not None

    def constants_text(self) -> str:
        if self.best is None:
            raise HarnessError("calibration found no passing point")
        b = self.best
        head = (
            f"# calibrated: mode={self.mode} n={self.n} eps={self.eps} "
            f"target_success={self.target_success:.4g} trials={self.trials}"
            + ("" if self.delta is None else f" delta={self.delta}")
            + "\n"
            f"# T={b.T} m={b.m} eps_prime={b.eps_prime:.6g} "
            f"false_far={b.false_far.errors}/{b.false_far.total} "
            f"false_equal={b.false_equal.errors}/{b.false_equal.total}\n"
        )
        return head + b.constants.dumps()


def calibrate(
    mode: str,
    n: int,
    eps: float,
    target_success: float = 2 / 3,
    budget: int = 40,
    trials: int = 100,
    seed: int = 0,
    grid: Optional[dict] = None,
    parallel: int = 1,
    c_b: float = 1.0,
    delta: float = 0.05,
) -> CalibrationResult:
    """Smallest ``T * m`` on the grid whose two error rates both have a
    Wilson-95% upper bound of at most ``1 - target_success`` on the mode's
    canonical (equal, far) fixture pair.

    At most ``budget`` grid points are evaluated, cheapest first.
    """
    if mode not in CALIBRATION_MODES:
        raise HarnessError(f"cannot calibrate mode {mode!r}; expected one of {CALIBRATION_MODES}")
    grid = {**DEFAULT_GRID, **(grid or {})}
    points = sorted(
        ((T, m, f) for T in grid["T"] for m in grid["m"] for f in grid["eps_frac"]),
        key=lambda x: (x[0] * x[1], -x[2], x[0]),
    )
    max_error = 1 - target_success
    equal_fx, far_fx = CANONICAL[mode]
    evaluated: list[CalibrationPoint] = []
    best = None
    for T, m, frac in points[:budget]:
        try:
            c = constants_for(mode, n, eps, T, m, frac, c_b)
            cfg = config_for(mode, n, eps, c)
        except ConfigError:
            continue
        rates = []
        for fx in (equal_fx, far_fx):
            spec = ExperimentSpec(
                mode=mode, n=n, eps=eps, trials=trials, seed=seed, fixture=fx,
                constants=c, parallel=parallel, timing=False, delta=delta,
            )
            recs, summ = run_trials(spec, max_error)
            rates.append(summ.false_far if fx == equal_fx else summ.false_equal)
            if rates[-1].high > max_error:
                break
        passed = len(rates) == 2 and all(r.high <= max_error for r in rates)
        ff = rates[0]
        fe = rates[1] if len(rates) > 1 else ErrorRate(0, 0, 0.0, 1.0)
        point = CalibrationPoint(c, cfg.T, cfg.m, cfg.eps_prime, ff, fe, passed)
        evaluated.append(point)
        if passed:
            best = point
            break
    d = delta if mode == "near-uniform-identity" else None
    return CalibrationResult(mode, n, eps, target_success, trials, evaluated, best, d)


def violations() -> int:
    return NacondSession.violations


def cpu_count() -> int:
    return os.cpu_count() or 1


def with_constants(spec: ExperimentSpec, constants: Constants) -> ExperimentSpec:
    return replace(spec, constants=constants)
