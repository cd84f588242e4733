"""Free-boundary Stokes flow with dynamic contact points in a two-dimensional channel."""
from .core import BACKEND
from .equilibrium import (
    EquilibriumError,
    EquilibriumSurface,
    PhysicalParams,
    build_equilibrium,
    compute_C,
    energy_functional,
    equilibrium_residual,
)
from .fem import Mesh, build_mesh, rectangle_mesh
from .geometry import GeometryFields, coefficient_fields, piola_residual, validate_geometry
from .kernels import Q_eval, R_eval, ResponseFunction, kappa_of, w_hat
from .norms import (
    CornerScenario,
    DiagnosticsReport,
    WeightedNormSpec,
    corner_probe,
    decay_fit,
    fractional_norm,
    functionals,
    parallel_energy,
    weighted_norm,
)
from .solver import Simulation, SimulationState, energy_audit, load_checkpoint, save_checkpoint

__version__ = "0.1.0"
