"""Filtering a hidden continuous-time Markov chain from discretely sampled, noisy integrals."""
from __future__ import annotations

__version__ = "0.1.0"

from .ctmc import GeneratorMatrix, CtmcPath, expm, marginal, sample_path, transition_matrix, validate_generator
from .filtering import FilterTrajectory, compare, filter_step, run_filter, summarize
from .lattice import LatticeProvider, build_lattice, g_hat_i, g_hat_ij
from .model import ModelSpec
from .pde import PdeGrid, PdeProvider, build_provider, conditional_density, solve_density_system
from .sim import ObservationSeries, Scenario, preset, simulate_observations
from .telegraph import ExactTwoStateProvider, TwoStateParams, density_g_i, density_g_ij
from .wonham import milstein_filter, milstein_step, quasi_exact, quasi_exact_filter

__all__ = [
    "CtmcPath", "ExactTwoStateProvider", "FilterTrajectory", "GeneratorMatrix", "LatticeProvider",
    "ModelSpec", "ObservationSeries", "PdeGrid", "PdeProvider", "Scenario", "TwoStateParams",
    "build_lattice", "build_provider", "compare", "conditional_density", "density_g_i", "density_g_ij",
    "expm", "filter_step", "g_hat_i", "g_hat_ij", "marginal", "milstein_filter", "milstein_step",
    "preset", "quasi_exact", "quasi_exact_filter", "run_filter", "sample_path", "simulate_observations",
    "solve_density_system", "summarize", "transition_matrix", "validate_generator",
]
