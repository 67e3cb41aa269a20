"""Numerical laboratory for minimal-mass blow-up of the inhomogeneous mass-critical NLS

    i u_t + Delta u + g(x) |u|^{4/N} u - V(x) u = 0.
"""
from .grid_field import ComplexField, Norms, SpatialGrid, norms
from .profiles import ProfileBundle, build_bundle, solve_ground_state
from .linops import estimate_mu, identity_residuals, lminus, lplus, solve_rho
from .coeffs import CoefficientSpec, builtin_coefficients, check_assumptions, make_coefficients
from .evolve import EvolveConfig, conserved, evolve_interval, exact_pc_solution, pseudo_conformal, step
from .modulation import ModulationState, ModVector, decompose, energy_H, reconstruct
from .experiment import ExperimentConfig, limit_sequence, rate_fits, run_construction
from .config import RunConfig, parse_config

__version__ = "0.1.0"

__all__ = [
    "ComplexField", "Norms", "SpatialGrid", "norms",
    "ProfileBundle", "build_bundle", "solve_ground_state",
    "estimate_mu", "identity_residuals", "lminus", "lplus", "solve_rho",
    "CoefficientSpec", "builtin_coefficients", "check_assumptions", "make_coefficients",
    "EvolveConfig", "conserved", "evolve_interval", "exact_pc_solution", "pseudo_conformal", "step",
    "ModulationState", "ModVector", "decompose", "energy_H", "reconstruct",
    "ExperimentConfig", "limit_sequence", "rate_fits", "run_construction",
    "RunConfig", "parse_config",
]
