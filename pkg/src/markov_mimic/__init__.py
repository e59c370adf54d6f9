"""Markovian projections of jump Ito semimartingales by particle simulation.

The pipeline is: simulate a source ensemble with path-dependent
characteristics, regress the characteristics on the current functional
state, simulate the mimicking process from the projected coefficients,
and compare one-dimensional marginal laws.
"""

from markov_mimic.kernels import (
    CompensatorAccumulator,
    LevyKernel,
    MixtureKernel,
    TestFunctionFamily,
    TruncationFunction,
    accumulate_compensator,
    convert_truncation,
    drift_truncated_to_canonical,
    kernel_integral,
)
from markov_mimic.paths import CadlagPath, TimeGrid, diff, shift, stop
from markov_mimic.updating import UpdatingFunction, apply, builtin, check_axioms
from markov_mimic.scenarios import Scenario, builtin_scenario
from markov_mimic.simulate import ParticleEnsemble, SimConfig, simulate_ensemble
from markov_mimic.projector import (
    ConditioningScheme,
    ProjectedCharacteristics,
    estimate,
    khat_probe,
    oracle,
    sample_jump,
)
from markov_mimic.mimic import MimicSource, check_structure_preservation, simulate_mimic
from markov_mimic.validator import compare_marginals, compensator_probe, martingale_residuals

__version__ = "0.1.0"

__all__ = [
    "CadlagPath",
    "CompensatorAccumulator",
    "ConditioningScheme",
    "LevyKernel",
    "MimicSource",
    "MixtureKernel",
    "ParticleEnsemble",
    "ProjectedCharacteristics",
    "Scenario",
    "SimConfig",
    "TestFunctionFamily",
    "TimeGrid",
    "TruncationFunction",
    "UpdatingFunction",
    "accumulate_compensator",
    "apply",
    "builtin",
    "builtin_scenario",
    "check_axioms",
    "check_structure_preservation",
    "compare_marginals",
    "compensator_probe",
    "convert_truncation",
    "diff",
    "drift_truncated_to_canonical",
    "estimate",
    "kernel_integral",
    "khat_probe",
    "martingale_residuals",
    "oracle",
    "sample_jump",
    "shift",
    "simulate_ensemble",
    "simulate_mimic",
    "stop",
]
