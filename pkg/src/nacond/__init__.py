"""Non-adaptive conditional-sampling testers for uniformity, identity and
equivalence of discrete distributions, with simulated oracles and a Monte
Carlo harness."""

from .anaconda import (
    AnacondaConfig,
    Constants,
    Outcome,
    Verdict,
    anaconda_run,
    equivalence_config,
    load_constants,
    near_uniform_identity,
    plan_sets,
    uniformity_config,
)
from .distributions import (
    DiscreteDistribution,
    conditional,
    kolmogorov_distance,
    linf_distance,
    noise_profile,
    tv_distance,
)
from .harness import ExperimentSpec, calibrate, run_trials
from .identity import identity_test
from .lemmas import verify_lemma
from .oracle import NacondOracle, NacondSession, QuerySet, SampOracle, derive_rng

__version__ = "0.1.0"

__all__ = [
    "AnacondaConfig",
    "Constants",
    "DiscreteDistribution",
    "ExperimentSpec",
    "NacondOracle",
    "NacondSession",
    "Outcome",
    "QuerySet",
    "SampOracle",
    "Verdict",
    "anaconda_run",
    "calibrate",
    "conditional",
    "derive_rng",
    "equivalence_config",
    "identity_test",
    "kolmogorov_distance",
    "linf_distance",
    "load_constants",
    "near_uniform_identity",
    "noise_profile",
    "plan_sets",
    "run_trials",
    "tv_distance",
    "uniformity_config",
    "verify_lemma",
]
