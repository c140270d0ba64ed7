"""Surface diffusion of strained epitaxial films by minimizing movements."""

from .anisotropy import Anisotropy, anisotropic_curvature, convexity_margin
from .config import ConfigError, RunConfig, load_config
from .elasticity import ElasticField, LameParams, solve_equilibrium, v_phi_solve
from .energy import (
    EnergyBreakdown,
    FilmElasticity,
    FlowParams,
    criticality_residual,
    energy_gradient,
    free_energy,
    weak_residual,
)
from .errors import (
    CompatibilityError,
    DomainError,
    FilmError,
    InvalidInputError,
    NumericError,
    OptimizerStall,
    StateError,
)
from .geometry import Profile, max_slope, mean_curvature, metrics, volume
from .probes import ProbeReport, probe_interpolation, witness_function
from .stability import (
    StabilityReport,
    d_loc,
    grinfeld_J,
    grinfeld_K,
    liapunov_experiment,
    numeric_threshold,
    poisson_modulus,
    second_variation_flat,
)
from .stepper import EvolutionTrace, StepResult, evolve, incremental_step
from .surface_pde import MetricOperator, hminus1_norm, laplace_beltrami_solve, mm_penalty

__version__ = "0.1.0"
