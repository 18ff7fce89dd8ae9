"""Time-consistent equilibrium solvers for time-inconsistent stochastic control.

The package computes, for a controlled 1-D diffusion whose recursive cost
depends on the initial time (and is therefore time-inconsistent):

* the N-player partition cascade (value, feedback strategy, representation
  family, and jump diagnostics),
* the limit equilibrium value/strategy by three independent routes
  (diagonal march, Picard windows, Gaussian-kernel Picard), and
* Monte-Carlo cross-validation of the PDE fields via Feynman-Kac.
"""
from __future__ import annotations

__version__ = "0.1.0"

from .errors import (
    BlowupError,
    CflViolationError,
    DomainTooSmallError,
    NonContractionError,
    NumericalError,
    TicSolveError,
    UnsupportedProblemError,
    UsageError,
)
from .cascade import CascadeSolution, OptimalityReport, cascade_solve, local_optimality_check
from .equilibrium import (
    EquilibriumSolution,
    diagonal_march_solve,
    heat_kernel_matrix,
    kernel_picard_solve,
    picard_window_solve,
)
from .mc import (
    McReport,
    PathBundle,
    detect_generator_mode,
    feynman_kac_check,
    recursive_cost_estimate,
    simulate_closed_loop,
)
from .analysis import (
    ConsistencyReport,
    ConvergenceReport,
    ExperimentConfig,
    export_results,
    run_consistency_suite,
    run_convergence_study,
)
from .grids import Field2D, Field3D, Grid, Partition, derivatives, ell_pi
from .pde import (
    SchemeConfig,
    VerificationReport,
    cfl_dt_max,
    hjb_backward_solve,
    representation_solve,
    stable_nt,
    verification_gap,
)
from .presets import get_preset, preset_names
from .problem import HamiltonianArgs, ProblemSpec, hamiltonian, psi_argmin

__all__ = [
    "__version__",
    "ProblemSpec",
    "HamiltonianArgs",
    "hamiltonian",
    "psi_argmin",
    "Grid",
    "Partition",
    "Field2D",
    "Field3D",
    "ell_pi",
    "derivatives",
    "get_preset",
    "preset_names",
    "SchemeConfig",
    "hjb_backward_solve",
    "representation_solve",
    "verification_gap",
    "VerificationReport",
    "cfl_dt_max",
    "stable_nt",
    "cascade_solve",
    "EquilibriumSolution",
    "diagonal_march_solve",
    "picard_window_solve",
    "kernel_picard_solve",
    "heat_kernel_matrix",
    "PathBundle",
    "McReport",
    "detect_generator_mode",
    "simulate_closed_loop",
    "recursive_cost_estimate",
    "feynman_kac_check",
    "CascadeSolution",
    "local_optimality_check",
    "OptimalityReport",
    "ExperimentConfig",
    "ConvergenceReport",
    "ConsistencyReport",
    "run_convergence_study",
    "run_consistency_suite",
    "export_results",
    "TicSolveError",
    "UsageError",
    "NumericalError",
    "CflViolationError",
    "BlowupError",
    "NonContractionError",
    "DomainTooSmallError",
    "UnsupportedProblemError",
]
