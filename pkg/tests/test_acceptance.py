"""The seven acceptance criteria, each printing one PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``.  Criterion 7 runs last
and checks the violation counts and registration records gathered by the
runs before it.
"""

import math
import time

import numpy as np
import pytest

from nacond import distributions as dist
from nacond.anaconda import equivalence_config, load_constants, uniformity_config
from nacond.distributions import DiscreteDistribution, conditional
from nacond.harness import ExperimentSpec, cpu_count, run_trials
from nacond.identity import bucket
from nacond.lemmas import CORE_LEMMAS, LEMMAS, verify_all
from nacond.oracle import NacondSession, NonAdaptivityError, QuerySet

pytestmark = pytest.mark.acceptance

MAX_ERROR = 1 / 3
RECORDS: list = []


def report(request, criterion: int, ok: bool, detail: str) -> None:
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
    with request.config.pluginmanager.getplugin("capturemanager").global_and_fixture_disabled():
        print("\n" + line)
    assert ok, line


def run(mode, n, eps, fixture, trials, seed, constants=None):
    spec = ExperimentSpec(
        mode=mode, n=n, eps=eps, fixture=fixture, trials=trials, seed=seed,
        constants=constants, timing=False, parallel=cpu_count(),
    )
    records, summary = run_trials(spec, MAX_ERROR)
    RECORDS.extend(records)
    return records, summary


def rate_text(e):
    return f"{e.errors}/{e.total} (wilson95 hi {e.high:.3f})"


def test_criterion_1_uniformity(request):
    t0 = time.perf_counter()
    _, eq = run("uniformity", 1024, 0.5, "uniform", 200, seed=11)
    _, far = run("uniformity", 1024, 0.5, "paninski", 200, seed=12)
    elapsed = time.perf_counter() - t0
    ok = eq.false_far.high <= MAX_ERROR and far.false_equal.high <= MAX_ERROR and elapsed < 120
    report(
        request, 1, ok,
        f"false-Far {rate_text(eq.false_far)}, false-Equal {rate_text(far.false_equal)}, {elapsed:.1f}s",
    )


def test_criterion_2_query_scaling(request):
    c = load_constants("uniformity")
    eps = 0.5
    xs, ys, ledger_ok = [], [], True
    for logn in (8, 10, 12, 14):
        n = 2**logn
        cfg = uniformity_config(n, eps, c)
        for fixture, seed in (("uniform", 21), ("paninski", 22)):
            records, _ = run("uniformity", n, eps, fixture, 5, seed=seed + logn, constants=c)
            for r in records:
                ledger_ok &= r.queries_p == r.queries_q == cfg.T * cfg.m
                xs.append(logn * math.log2(logn))
                ys.append(r.queries_p)
    x, y = np.array(xs), np.array(ys, dtype=float)
    slope = float(x @ y / (x @ x))
    resid = float(np.linalg.norm(y - slope * x) / np.linalg.norm(y))
    ok = resid < 0.10 and ledger_ok
    report(request, 2, ok, f"queries ~ {slope:.1f} log n loglog n, relative residual {resid:.4f}, ledger exact {ledger_ok}")


def test_criterion_3_equivalence(request):
    c = load_constants("equivalence")
    n, eps = 256, 0.5
    _, eq = run("equivalence", n, eps, "uniform", 100, seed=31, constants=c)
    _, far = run("equivalence", n, eps, "paninski", 100, seed=32, constants=c)
    shape_ok = True
    for n2 in (256, 1024, 4096):
        L = math.log2(n2)
        cfg = equivalence_config(n2, eps, c)
        shape_ok &= cfg.T == math.ceil(c.c_T * L**6 - 1e-9)
        shape_ok &= cfg.m == math.ceil(c.c_m * L**6 / eps**2 - 1e-9)
        shape_ok &= math.isclose(cfg.eps_prime, c.c_eps * eps / L**3)
    ok = eq.false_far.high <= MAX_ERROR and far.false_equal.high <= MAX_ERROR and shape_ok
    report(
        request, 3, ok,
        f"false-Far {rate_text(eq.false_far)}, false-Equal {rate_text(far.false_equal)}, config shapes {shape_ok}",
    )


def _exact_linf_violations(q: DiscreteDistribution, eps: float, tested: set) -> int:
    # independent of the tester: rebuild each tested bucket and measure l-inf directly
    part = bucket(q, eps / 100, 0.01)
    bad = 0
    for j in tested:
        M = part.M[j]
        qm = q.pmf[M] / q.pmf[M].sum()
        bad += np.abs(qm - 1 / M.size).max() > 1 / (100 * M.size)
    return bad


def test_criterion_4_identity(request):
    n, eps = 1024, 0.5
    eq_recs, eq = run("identity", n, eps, "ramp", 100, seed=41)
    far_recs, far = run("identity", n, eps, "ramp-within", 100, seed=42)
    tested = {b["bucket"] for r in eq_recs + far_recs for b in r.extra["buckets"] if b["verdict"] != "skipped"}
    q = dist.ramp(n)
    bad = _exact_linf_violations(q, eps, tested)
    ok = eq.false_far.high <= MAX_ERROR and far.false_equal.high <= MAX_ERROR and bad == 0 and tested
    report(
        request, 4, ok,
        f"false-Far {rate_text(eq.false_far)}, false-Equal {rate_text(far.false_equal)}, "
        f"{len(tested)} buckets tested, {bad} l-inf violations",
    )


def test_criterion_5_lemmas(request):
    t0 = time.perf_counter()
    reports = verify_all(LEMMAS)
    elapsed = time.perf_counter() - t0
    failed = [r.lemma for r in reports if not r.passed]
    # the draw floor applies to the six core checks; the good-set check counts applicable instances
    min_draws = min(c.draws for r in reports if r.lemma in CORE_LEMMAS for c in r.checks)
    ok = not failed and elapsed < 300 and min_draws >= 10_000
    report(
        request, 5, ok,
        f"{len(reports) - len(failed)}/{len(reports)} checks pass, min draws {min_draws}, {elapsed:.1f}s"
        + (f", failed: {failed}" if failed else ""),
    )


def test_criterion_6_oracle_fidelity(request):
    rng = np.random.default_rng(61)
    draws = 100_000
    worst, zero_mass_seen = 0.0, False
    for k in range(20):
        n = int(rng.integers(2, 200))
        w = rng.dirichlet(np.full(n, 0.7))
        S = np.flatnonzero(rng.random(n) < rng.uniform(0.1, 0.9))
        if S.size == 0:
            S = np.array([int(rng.integers(n))])
        if k % 5 == 0:
            # zero mass on S: draws must be uniform over S
            w[S] = 0.0
            if w.sum() == 0:
                w[np.setdiff1d(np.arange(n), S)[:1]] = 1.0
            zero_mass_seen = True
        p = DiscreteDistribution.from_weights(w)
        s = NacondSession(p, np.random.default_rng(1000 + k))
        sid = s.register(QuerySet(S))
        s.seal()
        freq = np.bincount(np.searchsorted(S, s.draw_many(sid, draws)), minlength=S.size) / draws
        worst = max(worst, float(np.abs(freq - conditional(p, S)).max()))
    ok = worst <= 0.01 and zero_mass_seen
    report(request, 6, ok, f"max l-inf gap {worst:.4f} over 20 (p, S) pairs at {draws} draws, zero-mass sets included")


def test_criterion_7_non_adaptivity(request):
    s = NacondSession(dist.uniform(4), np.random.default_rng(0))
    s.register(QuerySet.of([0, 1]))
    before = NacondSession.violations
    with pytest.raises(NonAdaptivityError):
        s.draw(0)
    s.seal()
    with pytest.raises(NonAdaptivityError):
        s.register(QuerySet.of([2]))
    rejected = NacondSession.violations - before == 2
    # counted per trial inside whichever process ran it
    run_violations = sum(r.extra["violations"] for r in RECORDS)
    mismatched = sum(r.extra["registered_at_first_draw"] != r.extra["registered"] for r in RECORDS)
    ok = rejected and run_violations == 0 and mismatched == 0 and len(RECORDS) > 0
    report(
        request, 7, ok,
        f"misuse rejected {rejected}, {run_violations} violations and {mismatched} late registrations "
        f"across {len(RECORDS)} acceptance trials",
    )
