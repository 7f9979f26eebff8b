"""Additive Schwarz solvers for fourth-order obstacle problems.

Solves obstacle-constrained minimization of plate-bending and distributed
control energies on the unit square, discretized with C1 bicubic
(Bogner-Fox-Schmit) elements, by one- and two-level additive Schwarz
iterations with a partition-of-unity coarse space.
"""

from .errors import (
    ConfigurationError,
    ConstructionError,
    NonConvergenceError,
    SolverError,
)
from .grid import Grid, DomainDecomposition, Patch, build_decomposition, build_fine_grid
from .bfs import (
    ElementMatrix,
    ScalarField,
    element_matrices,
    evaluate,
    evaluate_batch,
    interpolate,
    shape_functions,
)
from .assembly import DiscreteProblem, ProblemSpec, assemble
from .qp import BoundQP, DualQP, dual_coarse_solve, fbs_solve, pdas_solve, spd_solve
from .subspaces import (
    CoarseSpace,
    LocalSpace,
    PartitionOfUnity,
    build_coarse_space,
    build_local_spaces,
    build_pou,
    coloring_number,
)
from .schwarz import (
    ConvergenceRecord,
    SchwarzConfig,
    Subspaces,
    build_subspaces,
    local_subproblem,
    schwarz_solve,
    solve_reference,
)
from .interpolation import (
    BiasReport,
    PatchInterpolant,
    coarse_linearize,
    gradient_bias,
    linear_touch,
    min_sine_angle,
    patch_alpha,
    patch_linearize,
)
from .experiments import ExperimentConfig, control_problem, plate_problem, run_experiment

__version__ = "0.1.0"
