import math
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nacond import distributions as dist
from nacond.anaconda import (
    AnacondaConfig,
    ConfigError,
    Constants,
    NearUniformError,
    Outcome,
    Verdict,
    anaconda_run,
    boost_runs,
    check_near_uniform,
    equivalence_config,
    load_constants,
    near_uniform_identity,
    parse_constants,
    plan_sets,
    random_discrepancy_set,
    sample_set,
    scan_for_witness,
    uniformity_config,
)
from nacond.oracle import NacondOracle, NacondSession, QuerySet


class TestConfigs:
    def test_uniformity_example(self):
        cfg = uniformity_config(1024, 0.5, Constants(1, 1, 1 / 8))
        assert (cfg.T, cfg.m, cfg.eps_prime) == (10, 14, 0.0625)
        assert cfg.j_range_max == 20 and cfg.queries_per_oracle == 140

    def test_uniformity_n2(self):
        cfg = uniformity_config(2, 0.5, Constants(3, 1, 0.25))
        assert cfg.T == 3 and cfg.m == 4

    def test_equivalence_example(self):
        cfg = equivalence_config(1024, 0.5, Constants(1, 1, 1))
        assert cfg.T == 10**6 and cfg.m == 4 * 10**6
        assert cfg.eps_prime == pytest.approx(5e-4)

    def test_equivalence_small_cT(self):
        assert equivalence_config(1024, 0.5, Constants(1e-4, 1, 1)).T == 100

    def test_equivalence_n2(self):
        cfg = equivalence_config(2, 0.5, Constants(1, 1, 1))
        assert cfg.T == 1 and cfg.m == 4 and cfg.eps_prime == 0.5

    @pytest.mark.parametrize("n, eps", [(1, 0.5), (2.5, 0.5), (16, 0.0), (16, 1.5)])
    def test_bad_params(self, n, eps):
        with pytest.raises(ConfigError):
            uniformity_config(n, eps)

    def test_bad_eps_prime(self):
        with pytest.raises(ConfigError):
            uniformity_config(1024, 0.5, Constants(1, 1, 4.0))

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            AnacondaConfig(T=0, m=1, eps_prime=0.1, j_range_max=2)

    @given(st.integers(1, 30), st.floats(0.05, 1.0))
    def test_uniformity_scaling(self, logn, eps):
        n = 2**logn
        c = Constants(2.0, 3.0, 0.2)
        cfg = uniformity_config(n, eps, c)
        assert cfg.T == math.ceil(2.0 * logn - 1e-9 * max(1, 2.0 * logn))
        assert cfg.m >= 3.0 * max(1.0, math.log2(logn)) / eps**2 * (1 - 1e-9)
        assert cfg.eps_prime == pytest.approx(0.2 * eps)


class TestConstantsFiles:
    def test_parse(self):
        c = parse_constants("# header\nc_T = 2\nc_m=8 # inline\nseed=3\n")
        assert (c.c_T, c.c_m, c.c_eps, c.c_b, c.seed) == (2.0, 8.0, 0.125, 1.0, 3)

    @pytest.mark.parametrize(
        "text", ["c_T 2", "c_x=1", "c_T=1\nc_T=2", "c_m=abc", "c_T=-1", "seed=1.5"]
    )
    def test_parse_errors(self, text):
        with pytest.raises(ConfigError):
            parse_constants(text)

    def test_roundtrip(self):
        c = Constants(3.0, 19.265919722494797, 0.25, 1.5, seed=7)
        assert parse_constants(c.dumps()) == c

    @pytest.mark.parametrize("name", ["uniformity", "equivalence", "near-uniform-identity"])
    def test_bundled(self, name):
        assert isinstance(load_constants(name), Constants)

    def test_bundled_uniformity_config(self):
        cfg = uniformity_config(1024, 0.5, load_constants("uniformity"))
        assert (cfg.T, cfg.m) == (30, 256)

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            load_constants(tmp_path / "nope.cfg")


class TestPlanning:
    def test_mean_size_j1(self):
        # empty draws are redrawn, so E|S| = 2 / (1 - 1/16) rather than 2
        rng = np.random.default_rng(1)
        sizes = [len(plan_sets(4, 1, 2, rng, j=1)[0]) for _ in range(20_000)]
        assert np.mean(sizes) == pytest.approx(2 / (1 - 1 / 16), abs=0.03)

    def test_rejects(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ConfigError):
            plan_sets(4, 0, 2, rng)
        with pytest.raises(ConfigError):
            plan_sets(1, 1, 2, rng)

    def test_scales_in_range(self):
        rng = np.random.default_rng(2)
        sets = plan_sets(64, 500, 12, rng)
        assert len(sets) == 500 and all(1 <= len(S) <= 64 for S in sets)

    @pytest.mark.parametrize("n, j, k", [(8, 1, 1), (8, 2, 3), (16, 3, 5), (6, 1, 6)])
    def test_hit_probability_closed_form(self, n, j, k):
        # P(S meets a fixed k-set | S nonempty) = (1 - (1-1/r)^k) / (1 - (1-1/r)^n)
        r = 2**j
        exact = (1 - (1 - 1 / r) ** k) / (1 - (1 - 1 / r) ** n)
        rng = np.random.default_rng(3)
        draws = 20_000
        hits = sum(bool(set(sample_set(n, j, rng)) & set(range(k))) for _ in range(draws))
        sd = math.sqrt(exact * (1 - exact) / draws)
        assert abs(hits / draws - exact) <= 4 * sd + 1e-12

    def test_subset_law_exact(self):
        # every nonempty subset of [4] at j=2 has mass (1/4)^|A| (3/4)^(4-|A|) / (1 - (3/4)^4)
        rng = np.random.default_rng(4)
        draws = 40_000
        seen: dict = {}
        for _ in range(draws):
            key = tuple(sample_set(4, 2, rng))
            seen[key] = seen.get(key, 0) + 1
        norm = 1 - 0.75**4
        for size in range(1, 5):
            for A in combinations(range(4), size):
                exact = 0.25**size * 0.75 ** (4 - size) / norm
                sd = math.sqrt(exact * (1 - exact) / draws)
                assert abs(seen.get(A, 0) / draws - exact) <= 4.5 * sd

    def test_random_discrepancy_set(self):
        rng = np.random.default_rng(5)
        js = [random_discrepancy_set(2, rng)[0] for _ in range(100)]
        assert set(js) == {1}
        out = [random_discrepancy_set(1024, rng) for _ in range(5000)]
        assert {j for j, _, _ in out} == set(range(1, 11))
        assert all(r == 2**j for j, r, _ in out)
        with pytest.raises(ConfigError):
            random_discrepancy_set(1, rng)

    def test_random_discrepancy_inclusion(self):
        rng = np.random.default_rng(6)
        sizes = [random_discrepancy_set(2, rng)[2].size for _ in range(10_000)]
        assert np.mean(sizes) == pytest.approx(1.0, abs=0.03)


class TestRun:
    def _run(self, p, q, cfg, seed):
        rng = np.random.default_rng(seed)
        op, oq = NacondOracle(p, rng, "p"), NacondOracle(q, rng, "q")
        return anaconda_run(op, oq, cfg, rng), op, oq

    def test_query_ledger_exact(self):
        cfg = uniformity_config(64, 0.5, Constants(2, 4, 0.25))
        v, op, oq = self._run(dist.uniform(64), dist.uniform(64), cfg, 0)
        assert v.queries_p == v.queries_q == cfg.T * cfg.m
        assert op.queries == oq.queries == cfg.T * cfg.m

    def test_identical_point_masses_equal(self):
        # any set holding symbol 0 returns 0 on both sides, others are uniform on both
        p = dist.DiscreteDistribution([1.0] + [0.0] * 15)
        cfg = AnacondaConfig(T=30, m=4000, eps_prime=0.2, j_range_max=4)
        v, _, _ = self._run(p, p, cfg, 1)
        assert v.outcome is Outcome.EQUAL

    def test_disjoint_supports_far(self):
        p = dist.DiscreteDistribution([0.5, 0.5, 0.0, 0.0])
        q = dist.DiscreteDistribution([0.0, 0.0, 0.5, 0.5])
        cfg = AnacondaConfig(T=20, m=50, eps_prime=0.3, j_range_max=2)
        v, _, _ = self._run(p, q, cfg, 2)
        assert v.far and v.witness.gap >= 0.3
        assert v.witness.query_set.indices.size == v.witness.set_size

    def test_domain_mismatch(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ConfigError):
            anaconda_run(
                NacondOracle(dist.uniform(4), rng), NacondOracle(dist.uniform(8), rng),
                uniformity_config(4, 0.5), rng,
            )

    def test_registration_precedes_draws(self):
        before = NacondSession.violations
        cfg = uniformity_config(128, 0.5, Constants(2, 4, 0.25))
        self._run(dist.paninski(128, 0.5, np.random.default_rng(0)), dist.uniform(128), cfg, 3)
        assert NacondSession.violations == before

    def test_scan_threshold(self):
        S = QuerySet.of([0, 1])
        w = scan_for_witness([S], [np.array([6, 4])], [np.array([5, 5])], 0.1)
        assert w is not None and w.gap == pytest.approx(0.1) and w.t == 0
        assert scan_for_witness([S], [np.array([6, 4])], [np.array([5, 5])], 0.11) is None

    def test_verdict_needs_witness(self):
        with pytest.raises(ValueError):
            Verdict(Outcome.FAR)
        assert str(Outcome.EQUAL) == "Equal"


class TestNearUniform:
    def test_precondition(self):
        n = 64
        pmf = np.full(n, 1 / n)
        pmf[0] += 1 / (50 * n)
        pmf[1] -= 1 / (50 * n)
        q = dist.DiscreteDistribution(pmf)
        with pytest.raises(NearUniformError):
            near_uniform_identity(NacondOracle(q, np.random.default_rng(1)), q, 0.25, 0.5)

    def test_check_near_uniform(self):
        assert check_near_uniform(dist.uniform(10)) == pytest.approx(0.0)
        q = dist.near_uniform_perturb(1024, 1 / 102400, np.random.default_rng(0))
        assert check_near_uniform(q) <= 0.01 + 1e-12

    def test_boost_runs(self):
        assert boost_runs(0.5) == 1
        assert boost_runs(0.05) == 5
        assert boost_runs(0.05, 2.0) == 9
        with pytest.raises(ConfigError):
            boost_runs(1.0)

    def test_votes_and_queries(self):
        q = dist.uniform(32)
        c = load_constants("near-uniform-identity")
        rng = np.random.default_rng(7)
        op = NacondOracle(q, rng)
        v = near_uniform_identity(op, q, 0.25, 0.2, c, rng)
        runs = boost_runs(0.2, c.c_b)
        cfg = uniformity_config(32, 0.25, c)
        assert v.votes[1] == runs
        assert v.queries_p == op.queries == runs * cfg.T * cfg.m

    def test_support_restricted(self):
        q = dist.ramp(64)
        S = np.arange(60, 64)
        rng = np.random.default_rng(8)
        op = NacondOracle(q, rng)
        v = near_uniform_identity(op, q, 0.5, 0.5, Constants(2, 4, 0.3), rng, support=S)
        assert v.witness is None or set(v.witness.query_set) <= set(S.tolist())

    def test_support_too_small(self):
        q = dist.uniform(8)
        with pytest.raises(ConfigError):
            near_uniform_identity(NacondOracle(q, np.random.default_rng(0)), q, 0.5, 0.5, support=[3])

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 10_000))
    def test_far_witness_inside_support(self, seed):
        q = dist.uniform(32)
        p = dist.paninski(32, 0.8, np.random.default_rng(seed))
        c = load_constants("near-uniform-identity")
        rng = np.random.default_rng(seed)
        v = near_uniform_identity(NacondOracle(p, rng), q, 0.25, 0.5, c, rng)
        assert v.votes[1] == 1
        assert v.far == (v.votes[0] == 1)
        if v.far:
            assert v.witness.gap >= uniformity_config(32, 0.25, c).eps_prime - 1e-12
