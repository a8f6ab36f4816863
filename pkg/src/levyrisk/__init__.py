"""Minimal penalty functions and convex risk measures for Lévy-driven densities."""
from .convergence_lab import ConvergenceExperiment, run_convergence, stopped_variant
from .density_engine import (
    DensityBatch,
    DensityPath,
    Estimate,
    GirsanovCoefficients,
    compensator_check,
    density_process,
    martingale_check,
    quadratic_variation_diff,
    reweighted_expectation,
    stochastic_exponential,
)
from .finite_duality import (
    DensityVector,
    FinitePenalty,
    FiniteSpace,
    Position,
    check_axioms,
    entropic_penalty,
    entropic_risk,
    fenchel_biconjugate,
    linear_penalty,
    minimal_penalty,
    risk_from_penalty,
    total_variation_distance,
    worst_case_penalty,
    worst_case_risk,
    zero_penalty,
)
from .levy_model import LevyPath, LevyTriplet, PathBatch, RngStream, empirical_compensator, simulate_path, simulate_paths
from .penalty_risk import (
    PenaltySpec,
    RiskProblem,
    SearchFamily,
    convexity_evidence,
    minimality_evidence,
    penalty_quadrature,
    penalty_value,
    risk_measure,
)

__version__ = "0.1.0"
