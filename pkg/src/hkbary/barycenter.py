"""Barycenter pipelines: multi-marginal solves, two-marginal evaluations,
cone lifts, the analytic Dirac solver, and the equality verifier.

The soft multi-marginal solve produces a plan over the product of input
supports with the least cost as ground cost; the barycenter is the plan's
pushforward through the pivot map (mass accumulated at each tuple's argmin
candidate).  The verifier cross-checks that value against the extended-space
solve, the constrained coupled two-marginal evaluation at the extracted
barycenter, and the conic objective of the lifted plan.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cost import (
    GroundCostKind,
    LeastCostTable,
    _refine_minimum,
    as_points,
    check_weights,
    least_cost_table,
    pairwise_cost,
)
from .measure import DiscreteMeasure, GridError, GroundGrid, total_mass
from .solver import (
    MarginalPenalty,
    SolverConfig,
    SolverReport,
    TransportPlan,
    anneal,
)

# A plan is numerically zero when its mass drops below this fraction of the
# total input mass; the zero measure is then the barycenter.
ZERO_PLAN_RTOL = 1e-10


class TensorBudgetError(RuntimeError):
    """Raised when a requested dense tensor exceeds the allowed entry count."""


@dataclass(eq=False)
class BarycenterProblem:
    measures: list
    weights: np.ndarray
    cost_kind: GroundCostKind
    candidate_grid: GroundGrid
    config: SolverConfig = field(default_factory=SolverConfig)
    continuous_argmin: bool = False

    def __post_init__(self):
        if len(self.measures) < 2:
            raise ValueError(f"need at least 2 measures, got {len(self.measures)}")
        self.weights = check_weights(self.weights, len(self.measures))
        for i, m in enumerate(self.measures):
            if m.grid.dim != self.candidate_grid.dim:
                raise GridError(f"measure {i} lives in dimension {m.grid.dim}, "
                                f"candidate grid in {self.candidate_grid.dim}")

    def penalties(self) -> list:
        # a zero weight removes both the cost term and the divergence term,
        # which is exactly an unpenalized axis
        return [MarginalPenalty.soft(w) if w > 0 else MarginalPenalty.free()
                for w in self.weights]


@dataclass(eq=False)
class BarycenterSolution:
    plan: TransportPlan
    barycenter: DiscreteMeasure
    value: float
    report: SolverReport
    barycenter_atoms: Optional[list] = None  # continuous-argmin extraction


@dataclass(eq=False)
class ConicPlan:
    """Atoms on the product cone: coordinates, mass scales, and plan weights."""

    points: np.ndarray  # (n_atoms, N, dim)
    scales: np.ndarray  # (n_atoms, N) cone mass coordinates s_i
    weights: np.ndarray  # (n_atoms,) plan mass per atom
    grid_indices: np.ndarray  # (n_atoms, N) flat indices into the source grids
    grids: list  # N GroundGrid references
    least_costs: Optional[np.ndarray] = None  # (n_atoms,) pivot costs per atom

    @property
    def n_atoms(self) -> int:
        return self.weights.shape[0]

    def homogeneous_marginal(self, axis: int) -> DiscreteMeasure:
        """Pushforward of s_i * alpha onto the axis' grid."""
        masses = np.zeros(self.grids[axis].n_points)
        if self.n_atoms:
            np.add.at(masses, self.grid_indices[:, axis], self.scales[:, axis] * self.weights)
        return DiscreteMeasure(self.grids[axis], masses)

    def homogeneous_masses(self) -> np.ndarray:
        """Total mass of each homogeneous marginal."""
        if not self.n_atoms:
            return np.zeros(len(self.grids))
        return (self.scales * self.weights[:, None]).sum(axis=0)


@dataclass
class DiracBarycenter:
    point: Optional[np.ndarray]
    mass: float

    @property
    def is_zero(self) -> bool:
        return self.point is None


@dataclass
class EqualityReport:
    values: dict  # smm / extended / cc2m / conic
    gaps: dict  # extended / cc2m / conic, all against the smm value
    tolerance: float
    passed: bool
    solution: Optional[BarycenterSolution] = None


def _supports(problem: BarycenterProblem):
    indices, points, masses = [], [], []
    for m in problem.measures:
        idx = m.support()
        indices.append(idx)
        points.append(m.grid.points[idx])
        masses.append(m.masses[idx])
    return indices, points, masses


def _zero_solution(problem: BarycenterProblem, value: float) -> BarycenterSolution:
    shape = tuple(max(len(m.support()), 1) for m in problem.measures)
    plan = TransportPlan(np.zeros(shape), axis_points=[None] * len(shape))
    report = SolverReport(
        regularized_objective=value, unregularized_objective=value,
        residuals=[float(total_mass(m)) if w > 0 else 0.0
                   for m, w in zip(problem.measures, problem.weights)],
        iterations=0, converged=True, epsilon=problem.config.epsilon_final,
    )
    return BarycenterSolution(plan, DiscreteMeasure.zero(problem.candidate_grid), value, report)


def build_table(problem: BarycenterProblem) -> LeastCostTable:
    _, points, _ = _supports(problem)
    return least_cost_table(points, problem.candidate_grid, problem.weights,
                            problem.cost_kind)


def solve_smm(problem: BarycenterProblem) -> BarycenterSolution:
    """Solve the soft multi-marginal problem and push the plan to a barycenter."""
    indices, points, masses = _supports(problem)
    totals = np.array([total_mass(m) for m in problem.measures])
    zero_value = float(np.dot(problem.weights, totals))
    for w, idx in zip(problem.weights, indices):
        if idx.size == 0 and w == 0:
            raise ValueError("a zero-weight measure must still have nonempty support")
    if any(t == 0.0 for t, w in zip(totals, problem.weights) if w > 0):
        return _zero_solution(problem, zero_value)

    table = build_table(problem)
    plan_t, report = anneal(table.values, masses, problem.penalties(), problem.config)
    plan = TransportPlan(plan_t.values, axis_points=points, axis_indices=indices)
    value = report.unregularized_objective

    if plan.total_mass() < ZERO_PLAN_RTOL * totals.sum():
        barycenter = DiscreteMeasure.zero(problem.candidate_grid)
        return BarycenterSolution(plan, barycenter, value, report)

    flat_plan = plan.values.ravel()
    flat_arg = table.argmin_index.ravel()
    carried = flat_plan > 0
    bary_masses = np.zeros(problem.candidate_grid.n_points)
    np.add.at(bary_masses, flat_arg[carried], flat_plan[carried])
    barycenter = DiscreteMeasure(problem.candidate_grid, bary_masses)

    atoms = None
    if problem.continuous_argmin:
        atoms = _refined_atoms(table, plan, carried)
    return BarycenterSolution(plan, barycenter, value, report, barycenter_atoms=atoms)


def _refined_atoms(table: LeastCostTable, plan: TransportPlan, carried: np.ndarray,
                   levels: int = 12) -> list:
    flat = np.flatnonzero(carried)
    if flat.size == 0:
        return []
    multi = np.unravel_index(flat, plan.values.shape)
    tuple_points = np.stack([table.input_points[i][multi[i]] for i in range(plan.ndim)], axis=1)
    centers = table.candidate_points[table.argmin_index.ravel()[flat]]
    centers, _ = _refine_minimum(tuple_points, table.lambdas, table.kind, centers,
                                 table.refine_width(), levels)
    weights = plan.values.ravel()[flat]
    return [(centers[k].copy(), float(weights[k])) for k in range(flat.size)]


def solve_extended_smm(problem: BarycenterProblem,
                       max_tensor_entries: int = 20_000_000):
    """Solve the formulation with an explicit pivot axis instead of a least cost.

    The cost over (support tuples) x (candidates) is the plain weighted sum of
    ground costs to the candidate; the extra axis carries no penalty.  Returns
    ``(value, plan)`` with the plan on N+1 axes.
    """
    indices, points, masses = _supports(problem)
    totals = np.array([total_mass(m) for m in problem.measures])
    zero_value = float(np.dot(problem.weights, totals))
    if any(t == 0.0 for t, w in zip(totals, problem.weights) if w > 0):
        sol = _zero_solution(problem, zero_value)
        return zero_value, sol.plan

    n_axes = len(points) + 1
    cand = problem.candidate_grid.points
    entries = int(np.prod([p.shape[0] for p in points])) * cand.shape[0]
    if entries > max_tensor_entries:
        raise TensorBudgetError(
            f"extended cost tensor needs {entries} entries, budget is {max_tensor_entries}"
        )
    cost = np.zeros(tuple(p.shape[0] for p in points) + (cand.shape[0],))
    for i, p in enumerate(points):
        w = problem.weights[i]
        if w == 0:
            continue
        block = w * pairwise_cost(p, cand, problem.cost_kind)
        cost = cost + block.reshape((1,) * i + block.shape[:1] + (1,) * (len(points) - 1 - i)
                                    + block.shape[1:])
    targets = list(masses) + [np.full(cand.shape[0], 1.0 / cand.shape[0])]
    penalties = problem.penalties() + [MarginalPenalty.free()]
    plan_t, report = anneal(cost, targets, penalties, problem.config)
    plan = TransportPlan(plan_t.values, axis_points=points + [cand],
                         axis_indices=list(indices) + [np.arange(cand.shape[0])])
    return report.unregularized_objective, plan


def _two_marginal_value(mu: DiscreteMeasure, nu_points: np.ndarray, nu_masses: np.ndarray,
                        problem: BarycenterProblem, hard: bool) -> float:
    sup = mu.support()
    cost = pairwise_cost(mu.grid.points[sup], nu_points, problem.cost_kind)
    penalties = [MarginalPenalty.soft(1.0),
                 MarginalPenalty.hard() if hard else MarginalPenalty.soft(1.0)]
    _, report = anneal(cost, [mu.masses[sup], nu_masses], penalties, problem.config)
    if report.infeasible:
        return math.inf
    return report.unregularized_objective


def evaluate_cc2m(nu: DiscreteMeasure, problem: BarycenterProblem) -> float:
    """Weighted sum of hard-constrained two-marginal values against ``nu``.

    Each inner solve uses unit soft weight on the input axis and an exact
    marginal constraint on the ``nu`` axis; the barycentric weight multiplies
    the solved value outside.  Infeasible inner problems give +inf.
    """
    if nu.grid != problem.candidate_grid:
        raise GridError("cc2m evaluation requires nu on the candidate grid")
    if total_mass(nu) == 0.0:
        # only the zero plans are feasible, each worth the full input mass
        return float(np.dot(problem.weights, [total_mass(m) for m in problem.measures]))
    sup = nu.support()
    nu_points, nu_masses = nu.grid.points[sup], nu.masses[sup]
    total = 0.0
    for w, mu in zip(problem.weights, problem.measures):
        if w == 0:
            continue
        if total_mass(mu) == 0.0:
            return math.inf  # no plan can have a zero first marginal and match nu
        v = _two_marginal_value(mu, nu_points, nu_masses, problem, hard=True)
        if math.isinf(v):
            return math.inf
        total += w * v
    return total


def evaluate_c2m(nu: DiscreteMeasure, problem: BarycenterProblem) -> float:
    """Weighted sum of unconstrained two-marginal values (soft on both axes)."""
    if nu.grid != problem.candidate_grid:
        raise GridError("c2m evaluation requires nu on the candidate grid")
    if total_mass(nu) == 0.0:
        return float(np.dot(problem.weights, [total_mass(m) for m in problem.measures]))
    sup = nu.support()
    nu_points, nu_masses = nu.grid.points[sup], nu.masses[sup]
    total = 0.0
    for w, mu in zip(problem.weights, problem.measures):
        if w == 0:
            continue
        if total_mass(mu) == 0.0:
            total += w * float(nu_masses.sum())
            continue
        total += w * _two_marginal_value(mu, nu_points, nu_masses, problem, hard=False)
    return total


def lift_to_cone(plan: TransportPlan, problem: BarycenterProblem) -> ConicPlan:
    """Lift a plan to the cone by attaching reverse densities as mass scales.

    Each plan atom becomes one cone atom with s_i the density of the input
    measure against the plan's i-th marginal at that coordinate.
    """
    indices, points, masses = _supports(problem)
    n_axes = plan.ndim
    rhos = []
    for i in range(n_axes):
        marg = plan.marginal(i)
        if marg.shape != masses[i].shape:
            raise ValueError("plan axes do not match the problem's support sets")
        stray = marg[masses[i] <= 0].sum() if np.any(masses[i] <= 0) else 0.0
        if stray > 0:
            raise ValueError("plan marginal carries mass outside the input support")
        rho = np.zeros_like(marg)
        np.divide(masses[i], marg, out=rho, where=marg > 0)
        rhos.append(rho)
    flat = np.flatnonzero(plan.values.ravel() > 0)
    grids = [m.grid for m in problem.measures]
    if flat.size == 0:
        return ConicPlan(np.zeros((0, n_axes, problem.candidate_grid.dim)),
                         np.zeros((0, n_axes)), np.zeros(0),
                         np.zeros((0, n_axes), dtype=int), grids, np.zeros(0))
    multi = np.unravel_index(flat, plan.values.shape)
    atom_points = np.stack([points[i][multi[i]] for i in range(n_axes)], axis=1)
    scales = np.stack([rhos[i][multi[i]] for i in range(n_axes)], axis=1)
    weights = plan.values.ravel()[flat]
    grid_idx = np.stack([indices[i][multi[i]] for i in range(n_axes)], axis=1)
    least = _least_costs_at(atom_points, problem)
    return ConicPlan(atom_points, scales, weights, grid_idx, grids, least)


def _least_costs_at(atom_points: np.ndarray, problem: BarycenterProblem,
                    chunk: int = 4096) -> np.ndarray:
    """Per-atom least cost over the candidate grid for (n, N, dim) tuples."""
    cand = problem.candidate_grid.points
    lam = problem.weights
    out = np.empty(atom_points.shape[0])
    for lo in range(0, atom_points.shape[0], chunk):
        pts = atom_points[lo:lo + chunk]
        total = np.zeros((pts.shape[0], cand.shape[0]))
        for i in range(pts.shape[1]):
            if lam[i] == 0:
                continue
            total += lam[i] * pairwise_cost(pts[:, i, :], cand, problem.cost_kind)
        out[lo:lo + chunk] = total.min(axis=1)
    return out


def conic_objective(alpha: ConicPlan, problem: BarycenterProblem) -> float:
    """Weighted sum over cone atoms of the multi-marginal perspective cost."""
    if alpha.n_atoms == 0:
        return 0.0
    lam = problem.weights
    least = alpha.least_costs
    if least is None:
        least = _least_costs_at(alpha.points, problem)
    gibbs = np.where(np.isfinite(least), np.exp(-np.where(np.isfinite(least), least, 0.0)), 0.0)
    active = lam > 0
    s_act = alpha.scales[:, active]
    with np.errstate(divide="ignore"):
        logs = np.where(s_act > 0, np.log(np.where(s_act > 0, s_act, 1.0)), -np.inf)
    log_geo = (lam[active][None, :] * logs).sum(axis=1)
    geo = np.where(np.isfinite(log_geo), np.exp(log_geo), 0.0)
    per_atom = alpha.scales @ lam - geo * gibbs
    return float(np.dot(alpha.weights, per_atom))


def _max_distance(pts: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.sqrt(((pts[None, :, :] - x[:, None, :]) ** 2).sum(axis=2)).max(axis=1)


def _chebyshev_center(pts: np.ndarray, levels: int = 60):
    """Approximate minimizer of the maximum distance to the given points."""
    dim = pts.shape[1]
    center = pts.mean(axis=0)[None, :]
    best = float(_max_distance(pts, center)[0])
    w = float(max((pts.max(axis=0) - pts.min(axis=0)).max(), 1e-9))
    steps = np.linspace(-1.0, 1.0, 9)
    offsets = np.array(list(itertools.product(steps, repeat=dim)))
    for _ in range(levels):
        cand = center + w * offsets
        vals = _max_distance(pts, cand)
        k = int(np.argmin(vals))
        if vals[k] < best:
            best = float(vals[k])
            center = cand[k][None, :]
        w *= 0.5
    return center[0], best


def dirac_barycenter(points, masses, lambdas,
                     kind: GroundCostKind = GroundCostKind.HK) -> DiracBarycenter:
    """Closed-form barycenter of Dirac inputs: pivot point and geometric-mean mass.

    Returns the zero measure when no pivot lies within transport range of
    every input point (the half-pi balls around the inputs do not intersect).
    """
    pts = as_points(points)
    m = np.asarray(masses, dtype=float)
    if m.shape != (pts.shape[0],) or np.any(m < 0):
        raise ValueError("need one nonnegative mass per point")
    lam = check_weights(lambdas, pts.shape[0])

    if kind is GroundCostKind.QUADRATIC:
        pivot = lam @ pts
        seed = pivot[None, :]
    else:
        center, radius = _chebyshev_center(pts)
        if radius >= math.pi / 2 - 1e-12:
            return DiracBarycenter(None, 0.0)
        seed = center[None, :]
    span = float(max((pts.max(axis=0) - pts.min(axis=0)).max(), 1e-9))
    tuple_points = pts[None, :, :]
    centers, values = _refine_minimum(tuple_points, lam, kind, seed, span, levels=60)
    least = float(values[0])
    if not math.isfinite(least):
        return DiracBarycenter(None, 0.0)
    active = lam > 0
    if np.any(m[active] == 0):
        mass = 0.0
    else:
        mass = float(np.exp(np.sum(lam[active] * np.log(m[active])) - least))
    return DiracBarycenter(centers[0], mass)


def verify_equalities(problem: BarycenterProblem, tolerance: Optional[float] = None,
                      max_tensor_entries: int = 1_000_000) -> EqualityReport:
    """Cross-check the multi-marginal value against its equivalent formulations.

    Computes the soft multi-marginal value, the extended-space value, the
    hard-constrained coupled two-marginal value at the extracted barycenter,
    and the conic value of the lifted plan (atom sum plus the mass missing
    from the homogeneous marginals).  Gaps are measured against the first.
    """
    _, points, _ = _supports(problem)
    entries = int(np.prod([p.shape[0] for p in points])) * problem.candidate_grid.n_points
    if entries > max_tensor_entries:
        raise TensorBudgetError(
            f"verification needs a {entries}-entry tensor, budget is {max_tensor_entries}"
        )
    sol = solve_smm(problem)
    v1 = sol.value
    v2, _ = solve_extended_smm(problem, max_tensor_entries=max_tensor_entries)
    v3 = evaluate_cc2m(sol.barycenter, problem)
    alpha = lift_to_cone(sol.plan, problem) if sol.plan.axis_points[0] is not None else None
    totals = np.array([total_mass(m) for m in problem.measures])
    if alpha is None or alpha.n_atoms == 0:
        v4 = float(np.dot(problem.weights, totals))
    else:
        leftover = float(np.dot(problem.weights, totals - alpha.homogeneous_masses()))
        v4 = conic_objective(alpha, problem) + leftover
    values = {"smm": v1, "extended": v2, "cc2m": v3, "conic": v4}
    gaps = {k: abs(values[k] - v1) for k in ("extended", "cc2m", "conic")}
    tol = tolerance if tolerance is not None else max(1e-3, 1e-2 * abs(v1))
    passed = all(g <= tol for g in gaps.values())
    return EqualityReport(values, gaps, tol, passed, solution=sol)
