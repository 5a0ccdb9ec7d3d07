"""Command line entry point.

Exit codes: 0 pass, 1 statistical failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

from .anaconda import ConfigError, NearUniformError, load_constants
from .distributions import DistributionError
from .harness import (
    CALIBRATION_MODES,
    FIXTURES,
    ExperimentSpec,
    HarnessError,
    calibrate,
    cpu_count,
    run_trials,
)
from .identity import IdentityError
from .lemmas import LEMMAS, verify_lemma

EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

TEST_COMMANDS = {
    "test-uniformity": "uniformity",
    "test-identity": "identity",
    "test-equivalence": "equivalence",
}


def _common(p: argparse.ArgumentParser, *, trials: int = 100) -> None:
    p.add_argument("--n", type=int, required=True, help="domain size")
    p.add_argument("--eps", type=float, required=True, help="distance parameter")
    p.add_argument("--trials", type=int, default=trials)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--parallel", type=int, default=cpu_count(), help="worker processes (default: all cores)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nacond", description="Non-adaptive conditional-sampling testers.")
    sub = parser.add_subparsers(dest="command", required=True)

    for cmd, mode in TEST_COMMANDS.items():
        p = sub.add_parser(cmd, help=f"run seeded {mode} trials")
        _common(p)
        p.add_argument("--fixture", default="", help=f"one of {sorted(FIXTURES[mode]) + ['file']}")
        p.add_argument("--fixture-eps", type=float, default=None, help="distance used by the fixture (default: --eps)")
        p.add_argument("--p-file", help="distribution file for p (fixture 'file')")
        p.add_argument("--q-file", help="distribution file for q (fixture 'file'; default uniform)")
        p.add_argument("--constants", help="constants file or bundled name")
        p.add_argument("--out", help="write per-trial records here")
        p.add_argument("--format", choices=("csv", "jsonl"), default="csv")
        p.add_argument("--no-timing", action="store_true", help="write wall_ms as 0 for byte-identical reruns")

    v = sub.add_parser("verify", help="Monte Carlo lemma checks")
    v.add_argument("--lemma", default="all", choices=("all",) + LEMMAS)
    v.add_argument("--seed", type=int, default=None, help="override the check's default seed")

    c = sub.add_parser("calibrate", help="search for the cheapest passing constants")
    c.add_argument("--mode", required=True, choices=CALIBRATION_MODES)
    _common(c)
    c.add_argument("--target", type=float, default=2 / 3, help="success rate the Wilson bound must confirm")
    c.add_argument("--budget", type=int, default=40, help="grid points to evaluate, cheapest first")
    c.add_argument("--delta", type=float, default=0.5, help="confidence for near-uniform-identity runs")
    c.add_argument("--out", help="write the constants file here")
    return parser


def _run_tests(args, mode: str) -> int:
    constants = load_constants(args.constants) if args.constants else None
    spec = ExperimentSpec(
        mode=mode,
        n=args.n,
        eps=args.eps,
        trials=args.trials,
        seed=args.seed,
        fixture=args.fixture,
        fixture_eps=args.fixture_eps,
        constants=constants,
        out=args.out,
        fmt=args.format,
        parallel=max(1, args.parallel),
        timing=not args.no_timing,
        p_file=args.p_file,
        q_file=args.q_file,
    )
    _, s = run_trials(spec)
    for label, e in (("false-Far", s.false_far), ("false-Equal", s.false_equal)):
        if e.total:
            print(f"{label}: {e.errors}/{e.total} = {e.rate:.4f}  wilson95=[{e.low:.4f}, {e.high:.4f}]")
    print(f"mean queries: p={s.mean_queries_p:.1f} q={s.mean_queries_q:.1f}")
    print("PASS" if s.passed else "FAIL")
    return EXIT_PASS if s.passed else EXIT_FAIL


def _run_verify(args) -> int:
    names = LEMMAS if args.lemma == "all" else (args.lemma,)
    ok = True
    for name in names:
        kwargs = {} if args.seed is None else ({"seeds": (args.seed,)} if name == "discrepant-set" else {"seed": args.seed})
        report = verify_lemma(name, **kwargs)
        print("\n".join(report.lines()))
        ok &= report.passed
    return EXIT_PASS if ok else EXIT_FAIL


def _run_calibrate(args) -> int:
    res = calibrate(
        args.mode,
        args.n,
        args.eps,
        target_success=args.target,
        budget=args.budget,
        trials=args.trials,
        seed=args.seed,
        parallel=max(1, args.parallel),
        delta=args.delta,
    )
    for pt in res.evaluated:
        print(
            f"T={pt.T} m={pt.m} eps'={pt.eps_prime:.4g} false-Far={pt.false_far.errors}/{pt.false_far.total} "
            f"false-Equal={pt.false_equal.errors}/{pt.false_equal.total} {'pass' if pt.passed else 'fail'}"
        )
    if not res.found:
        print(f"FAIL: no passing point within a budget of {args.budget} grid points")
        return EXIT_FAIL
    text = res.constants_text()
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return EXIT_PASS


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PASS if exc.code == 0 else EXIT_USAGE
    try:
        if args.command in TEST_COMMANDS:
            return _run_tests(args, TEST_COMMANDS[args.command])
        if args.command == "verify":
            return _run_verify(args)
        return _run_calibrate(args)
    except (HarnessError, ConfigError, NearUniformError, DistributionError, IdentityError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
