"""Free-space (Beckmann minimal-flow) norms of point measures on convex domains."""

from .geometry import (
    DomainSpec,
    NormSpec,
    boundary_distance,
    domain_contains,
    dual_norm_eval,
    norm_eval,
    project_dual_ball,
    prox_norm,
    segment_clearance,
)
from .grid import (
    GridSpec,
    ScalarField,
    VectorField,
    divergence,
    field_from_csv,
    field_to_csv,
    gradient,
    inner,
    l1_norm,
)
from .measure import PointMeasure, balance, check_atoms, divergence_data, rasterize
from .solver import (
    BeckmannProblem,
    InfeasibleProblem,
    SolveReport,
    SolverParams,
    duality_gap,
    free_norm,
    solve,
    solve_measure,
)
from .transport import TransportPlan, w1_enumerate, w1_exact

__all__ = [
    "BeckmannProblem", "DomainSpec", "GridSpec", "InfeasibleProblem", "NormSpec", "PointMeasure",
    "ScalarField", "SolveReport", "SolverParams", "TransportPlan", "VectorField", "balance",
    "boundary_distance", "check_atoms", "divergence", "divergence_data", "domain_contains",
    "dual_norm_eval", "duality_gap", "field_from_csv", "field_to_csv", "free_norm", "gradient",
    "inner", "l1_norm", "norm_eval", "project_dual_ball", "prox_norm", "rasterize",
    "segment_clearance", "solve", "solve_measure", "w1_enumerate", "w1_exact",
]
