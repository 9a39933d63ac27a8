"""Constrained Hellinger-Kantorovich barycenters of discrete measures.

The library solves unbalanced barycenter problems over fixed grids through a
single soft multi-marginal transport problem whose ground cost is the least
weighted cost to a pivot point, and cross-checks the value against the
equivalent extended-space, hard-constrained two-marginal, and conic
formulations.
"""

from .barycenter import (
    BarycenterProblem,
    BarycenterSolution,
    ConicPlan,
    DiracBarycenter,
    EqualityReport,
    TensorBudgetError,
    conic_objective,
    dirac_barycenter,
    evaluate_c2m,
    evaluate_cc2m,
    lift_to_cone,
    solve_extended_smm,
    solve_smm,
    verify_equalities,
)
from .cost import (
    CostMatrix,
    GroundCostKind,
    LeastCostTable,
    WeightError,
    cost_matrix,
    ground_cost,
    least_cost_table,
    pairwise_cost,
    perspective_mm,
    perspective_mm_oracle,
    perspective_mm_unconstrained,
    perspective_two,
    perspective_two_oracle,
    refine_argmin,
)
from .entropy import (
    EntropyKind,
    F_INF_SLOPE,
    R_INF_SLOPE,
    divergence,
    f_conjugate,
    f_entropy,
    kl_divergence,
    r_conjugate,
    r_entropy,
)
from .measure import (
    DensityDecomposition,
    DiscreteMeasure,
    GridError,
    GroundGrid,
    MeasureError,
    build_grid,
    density_ratios,
    gaussian_on_grid,
    read_measure_csv,
    scale_measure,
    total_mass,
    write_measure_csv,
)
from .solver import (
    MarginalPenalty,
    SolverConfig,
    SolverError,
    SolverReport,
    TransportPlan,
    anneal,
    marginal_residuals,
    sinkhorn_general,
    unregularized_objective,
)

__version__ = "0.1.0"
