"""Self-organized hydrodynamics lab.

Particle simulations of aligning self-propelled particles, their
macroscopic coefficients, and a finite-volume solver for the resulting
hydrodynamic system.
"""

__version__ = "0.1.0"

from .coefficients import CoefficientSet, Kernel, compute_coefficients, order_parameter_c1, solve_gci
from .errors import ConfigurationError, DomainError, SohLabError, SolverError, StepRejected
from .particles import ParticleEnsemble, ParticleParams, make_ensemble, run_particles
from .soh import SohFields, SohGrid, SohSolverConfig, soh_run, soh_step

__all__ = [
    "CoefficientSet", "ConfigurationError", "DomainError", "Kernel", "ParticleEnsemble",
    "ParticleParams", "SohFields", "SohGrid", "SohLabError", "SohSolverConfig", "SolverError",
    "StepRejected", "compute_coefficients", "make_ensemble", "order_parameter_c1",
    "run_particles", "soh_run", "soh_step", "solve_gci",
]
