"""Minimal-norm null controls for semidiscrete parabolic systems via penalized duality."""

__version__ = "0.1.0"

from .errors import NotControllableError, ValidationError
from .model import (InitialData, SemidiscreteSystem, build_heat1d, from_matrices,
                    gaussian_profile, initial_from_vector, sample_initial)
from .semigroup import Propagator, exp_action, make_propagator
from .dual import (DualObjective, DualParameters, evaluate_j, gradient_j,
                   gramian_apply, p_power_map)
from .optim import OptimizerConfig, OptimizerTrace, minimize
from .synthesis import (ControlSignal, EstimateAudit, SynthesisResult, build_control,
                        simulate_forward, synthesize)
from .oracle import duality_gap, p2_gramian_solve
from .analysis import ObservabilityRecord, RateFit, observability_constant, rate_fit, uniformity_sweep

__all__ = [
    "NotControllableError", "ValidationError",
    "InitialData", "SemidiscreteSystem", "build_heat1d", "from_matrices",
    "gaussian_profile", "initial_from_vector", "sample_initial",
    "Propagator", "exp_action", "make_propagator",
    "DualObjective", "DualParameters", "evaluate_j", "gradient_j", "gramian_apply",
    "p_power_map", "OptimizerConfig", "OptimizerTrace", "minimize",
    "ControlSignal", "EstimateAudit", "SynthesisResult", "build_control", "simulate_forward",
    "synthesize", "duality_gap", "p2_gramian_solve", "ObservabilityRecord", "RateFit",
    "observability_constant", "rate_fit", "uniformity_sweep",
]
