"""Ground costs, least-cost reduction with its pivot map, and perspective costs.

The least-cost table holds, for every support tuple, the best pivot on the
candidate grid together with the minimizing candidate index; infeasible
tuples (no candidate within transport range of every coordinate) carry +inf.
Closed-form perspective costs come with brute-force infimum oracles used to
cross-check them numerically.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .measure import GridError, GroundGrid

HK_CUTOFF = math.pi / 2

# Default oracle grids: log-spaced mass/scale variables with local zoom rounds.
ORACLE_GRID_LO = 1e-4
ORACLE_GRID_HI = 1e4
ORACLE_GRID_N = 200
ORACLE_ZOOM_ROUNDS = 3
ORACLE_ZOOM_N = 65


class GroundCostKind(enum.Enum):
    HK = "hk"
    QUADRATIC = "quadratic"


class WeightError(ValueError):
    """Raised when barycentric weights violate the simplex constraint."""


def as_points(obj, dim: Optional[int] = None) -> np.ndarray:
    """Coerce a GroundGrid or array-like into an (n, dim) point array."""
    if isinstance(obj, GroundGrid):
        pts = obj.points
    else:
        pts = np.asarray(obj, dtype=float)
        if pts.ndim == 0:
            pts = pts.reshape(1, 1)
        elif pts.ndim == 1:
            pts = pts[:, None]
        elif pts.ndim != 2:
            raise GridError(f"cannot interpret array of shape {pts.shape} as points")
    if dim is not None and pts.shape[1] != dim:
        raise GridError(f"points have dimension {pts.shape[1]}, expected {dim}")
    return pts


def _cost_from_sqdist(d2: np.ndarray, kind: GroundCostKind) -> np.ndarray:
    if kind is GroundCostKind.QUADRATIC:
        return d2
    d = np.sqrt(d2)
    inside = d < HK_CUTOFF
    out = np.full(d.shape, np.inf)
    # -log(cos^2 d) = -2 log cos d on the transportable range
    np.copyto(out, -2.0 * np.log(np.cos(np.minimum(d, HK_CUTOFF))), where=inside)
    return out


def pairwise_cost(points_a, points_b, kind: GroundCostKind) -> np.ndarray:
    """Dense (n_a, n_b) ground-cost matrix between two point sets."""
    a = as_points(points_a)
    b = as_points(points_b, dim=a.shape[1])
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    return _cost_from_sqdist(d2, kind)


def ground_cost(x, y, kind: GroundCostKind = GroundCostKind.HK) -> float:
    """Ground cost between two points: -log cos^2 |x-y| (HK) or |x-y|^2."""
    return float(pairwise_cost([np.atleast_1d(x)], [np.atleast_1d(y)], kind)[0, 0])


@dataclass(eq=False)
class CostMatrix:
    rows: np.ndarray  # (n_rows, dim) points
    cols: np.ndarray  # (n_cols, dim) points
    kind: GroundCostKind
    values: np.ndarray  # (n_rows, n_cols), entries >= 0, +inf allowed


def cost_matrix(a, b, kind: GroundCostKind) -> CostMatrix:
    pa = as_points(a)
    pb = as_points(b)
    if pa.shape[1] != pb.shape[1]:
        raise GridError(f"dimension mismatch: {pa.shape[1]} vs {pb.shape[1]}")
    return CostMatrix(rows=pa, cols=pb, kind=kind, values=pairwise_cost(pa, pb, kind))


def check_weights(lambdas, n: Optional[int] = None) -> np.ndarray:
    lam = np.asarray(lambdas, dtype=float)
    if n is not None and lam.shape != (n,):
        raise WeightError(f"expected {n} weights, got shape {lam.shape}")
    if np.any(lam < 0):
        raise WeightError(f"weights must be nonnegative, got {lam}")
    if abs(lam.sum() - 1.0) > 1e-12:
        raise WeightError(f"weights must sum to 1 within 1e-12, got sum {lam.sum()!r}")
    return lam


@dataclass(eq=False)
class LeastCostTable:
    """Tensor of least costs over support tuples plus the pivot map.

    ``values[t]`` is the minimum over candidates of the weighted cost sum for
    tuple ``t``; ``argmin_index[t]`` the flat candidate index realizing it
    (-1 where infeasible); ``feasible`` marks tuples with a finite value.
    In continuous mode ``argmin_point`` holds the refined off-grid pivot and
    ``values`` the refined (never larger) objective.
    """

    input_points: list  # list of (n_i, dim) arrays
    candidate_points: np.ndarray  # (m, dim)
    lambdas: np.ndarray
    kind: GroundCostKind
    values: np.ndarray  # N-way
    argmin_index: np.ndarray  # N-way, int, -1 = infeasible
    feasible: np.ndarray  # N-way, bool
    mode: str = "grid"
    argmin_point: Optional[np.ndarray] = None  # N-way x dim, continuous mode
    candidate_grid: Optional[GroundGrid] = None

    @property
    def shape(self) -> tuple:
        return self.values.shape

    def refine_width(self) -> float:
        if self.candidate_grid is not None:
            return max(self.candidate_grid.spacing)
        spans = self.candidate_points.max(axis=0) - self.candidate_points.min(axis=0)
        return float(max(spans.max(), 1e-6))

    def locate(self, x_tuple) -> tuple:
        """Axis indices of a coordinate tuple within the input point sets."""
        idx = []
        for i, pts in enumerate(self.input_points):
            x = np.atleast_1d(np.asarray(x_tuple[i], dtype=float))
            d = np.linalg.norm(pts - x[None, :], axis=1)
            j = int(np.argmin(d))
            if d[j] > 1e-9 * (1.0 + np.abs(pts).max()):
                raise GridError(f"point {x} not found among axis-{i} support points")
            idx.append(j)
        return tuple(idx)


def _axis_shape(vec: np.ndarray, axis: int, ndim: int) -> np.ndarray:
    return vec.reshape((1,) * axis + (len(vec),) + (1,) * (ndim - 1 - axis))


def _tuple_objective(tuple_points: np.ndarray, lambdas: np.ndarray,
                     kind: GroundCostKind, x: np.ndarray) -> np.ndarray:
    """Weighted cost sum for batched tuples: tuple_points (n, N, dim), x (n, dim)."""
    d2 = ((tuple_points - x[:, None, :]) ** 2).sum(axis=2)
    c = _cost_from_sqdist(d2, kind)
    # zero-weight terms contribute nothing even at infinite cost
    terms = np.where(lambdas[None, :] > 0, lambdas[None, :] * c, 0.0)
    return terms.sum(axis=1)


def _refine_minimum(tuple_points: np.ndarray, lambdas: np.ndarray, kind: GroundCostKind,
                    centers: np.ndarray, half_width: float, levels: int):
    """Window-halving grid search around per-tuple centers, 9 samples per axis."""
    dim = centers.shape[1]
    values = _tuple_objective(tuple_points, lambdas, kind, centers)
    w = half_width
    steps = np.linspace(-1.0, 1.0, 9)
    offsets = np.array(list(itertools.product(steps, repeat=dim)))  # (9^dim, dim)
    for _ in range(levels):
        for off in offsets:
            cand = centers + w * off[None, :]
            val = _tuple_objective(tuple_points, lambdas, kind, cand)
            better = val < values
            if np.any(better):
                centers = np.where(better[:, None], cand, centers)
                values = np.where(better, val, values)
        w *= 0.5
    return centers, values


def least_cost_table(inputs: Sequence, candidates, lambdas, kind: GroundCostKind,
                     mode: str = "grid", refine_levels: int = 10) -> LeastCostTable:
    """Minimize the weighted cost sum over the candidate grid for every tuple.

    ``mode='grid'`` restricts the pivot to the candidate grid; ``'continuous'``
    additionally refines each feasible tuple's pivot off-grid (quadratic cost
    uses the exact weighted mean instead).  Candidate ties resolve to the
    lowest flat index.
    """
    if mode not in ("grid", "continuous"):
        raise ValueError(f"unknown mode {mode!r}")
    pts = [as_points(g) for g in inputs]
    dim = pts[0].shape[1]
    for p in pts[1:]:
        if p.shape[1] != dim:
            raise GridError("input grids must share a dimension")
    cand_grid = candidates if isinstance(candidates, GroundGrid) else None
    cand = as_points(candidates, dim=dim)
    if cand.shape[0] == 0:
        raise GridError("empty candidate grid")
    N = len(pts)
    lam = check_weights(lambdas, N)
    shape = tuple(p.shape[0] for p in pts)

    if kind is GroundCostKind.QUADRATIC and cand_grid is not None:
        values, argmin, tbar = _quadratic_table(pts, cand_grid, lam, shape, dim)
        feasible = np.ones(shape, dtype=bool)
        table = LeastCostTable(pts, cand, lam, kind, values, argmin, feasible,
                               mode=mode, candidate_grid=cand_grid)
        if mode == "continuous":
            table.argmin_point = tbar
            table.values = _quadratic_values_at(pts, lam, shape, dim, tbar)
        return table

    # generic path: running min over candidates, lowest index wins ties
    A = []
    for i in range(N):
        if lam[i] == 0:
            A.append(np.zeros((shape[i], cand.shape[0])))
        else:
            A.append(lam[i] * pairwise_cost(pts[i], cand, kind))
    values = np.full(shape, np.inf)
    argmin = np.full(shape, -1, dtype=np.int64)
    for k in range(cand.shape[0]):
        total = _axis_shape(A[0][:, k], 0, N)
        for i in range(1, N):
            total = total + _axis_shape(A[i][:, k], i, N)
        better = total < values
        if np.any(better):
            values = np.where(better, total, values)
            argmin[better] = k
    feasible = np.isfinite(values)
    table = LeastCostTable(pts, cand, lam, kind, values, argmin, feasible,
                           mode=mode, candidate_grid=cand_grid)
    if mode == "continuous":
        flat = np.flatnonzero(feasible.ravel())
        if flat.size:
            multi = np.unravel_index(flat, shape)
            tuple_points = np.stack([pts[i][multi[i]] for i in range(N)], axis=1)
            centers = cand[argmin.ravel()[flat]]
            centers, vals = _refine_minimum(tuple_points, lam, kind, centers,
                                            table.refine_width(), refine_levels)
            argmin_point = np.zeros(shape + (dim,))
            argmin_point.reshape(-1, dim)[flat] = centers
            new_values = values.copy()
            new_values.ravel()[flat] = vals
            table.argmin_point = argmin_point
            table.values = new_values
    return table


def _quadratic_table(pts, cand_grid: GroundGrid, lam, shape, dim):
    tbar = np.zeros(shape + (dim,))
    N = len(pts)
    for i in range(N):
        tbar += lam[i] * pts[i].reshape((1,) * i + (shape[i],) + (1,) * (N - 1 - i) + (dim,))
    axis_idx = []
    for d in range(dim):
        lo, _ = cand_grid.bounds[d]
        q = (tbar[..., d] - lo) / cand_grid.spacing[d]
        k = np.ceil(q - 0.5).astype(np.int64)  # nearest, ties toward lower index
        axis_idx.append(np.clip(k, 0, len(cand_grid.axes[d]) - 1))
    argmin = np.ravel_multi_index(tuple(axis_idx), cand_grid.shape).astype(np.int64)
    snapped = cand_grid.points[argmin]
    values = _quadratic_values_at(pts, lam, shape, dim, snapped)
    return values, argmin, tbar


def _quadratic_values_at(pts, lam, shape, dim, pivot):
    values = np.zeros(shape)
    N = len(pts)
    for i in range(N):
        xi = pts[i].reshape((1,) * i + (shape[i],) + (1,) * (N - 1 - i) + (dim,))
        values += lam[i] * ((xi - pivot) ** 2).sum(axis=-1)
    return values


def refine_argmin(table: LeastCostTable, index_tuple, levels: int):
    """Refine one tuple's pivot by window-halving search; value never increases.

    Returns ``(point, value)``.  Raises on infeasible tuples.
    """
    idx = tuple(int(i) for i in index_tuple)
    if not table.feasible[idx]:
        raise ValueError(f"tuple {idx} is infeasible (least cost is +inf)")
    tuple_points = np.stack([table.input_points[i][idx[i]] for i in range(len(idx))])[None]
    if table.argmin_point is not None:
        center = table.argmin_point[idx][None]
    else:
        center = table.candidate_points[table.argmin_index[idx]][None]
    centers, values = _refine_minimum(tuple_points, table.lambdas, table.kind,
                                      center, table.refine_width(), levels)
    return centers[0], float(values[0])


# ---------------------------------------------------------------------------
# Perspective costs
# ---------------------------------------------------------------------------

def _reverse_entropy_term(s, t):
    """t * R(s / t) = s - t log(s / t) - t, elementwise for positive s, t."""
    return s - t * np.log(s / t) - t


def perspective_two(x1, s1, x2, s2, kind: GroundCostKind = GroundCostKind.HK) -> float:
    """Closed-form two-marginal perspective cost s1 + s2 - 2 sqrt(s1 s2) e^{-c/2}."""
    if s1 < 0 or s2 < 0:
        raise ValueError(f"masses must be nonnegative, got {s1}, {s2}")
    c = ground_cost(x1, x2, kind)
    gibbs = 0.0 if math.isinf(c) else math.exp(-0.5 * c)
    return s1 + s2 - 2.0 * math.sqrt(s1 * s2) * gibbs


def _zoom_grid(center: float, ratio: float, n: int) -> np.ndarray:
    return center * ratio ** np.linspace(-1.0, 1.0, n)


def perspective_two_oracle(x1, s1, x2, s2, kind: GroundCostKind = GroundCostKind.HK,
                           t_grid: Optional[np.ndarray] = None) -> float:
    """Numeric t-infimum of t*c + t*R(s1/t) + t*R(s2/t) on a log grid with zoom."""
    if s1 <= 0 or s2 <= 0:
        raise ValueError("the oracle requires strictly positive masses")
    c = ground_cost(x1, x2, kind)
    if math.isinf(c):
        return s1 + s2  # annihilation limit; matches the closed form's convention
    if t_grid is None:
        t_grid = np.logspace(np.log10(ORACLE_GRID_LO), np.log10(ORACLE_GRID_HI), ORACLE_GRID_N)

    def objective(t):
        return t * c + _reverse_entropy_term(s1, t) + _reverse_entropy_term(s2, t)

    vals = objective(t_grid)
    k = int(np.argmin(vals))
    best_t, best_v = float(t_grid[k]), float(vals[k])
    ratio = float(t_grid[-1] / t_grid[0]) ** (1.0 / (len(t_grid) - 1))
    for _ in range(ORACLE_ZOOM_ROUNDS):
        g = _zoom_grid(best_t, ratio, ORACLE_ZOOM_N)
        vals = objective(g)
        k = int(np.argmin(vals))
        if vals[k] < best_v:
            best_t, best_v = float(g[k]), float(vals[k])
        ratio = ratio ** (2.0 / (ORACLE_ZOOM_N - 1))
    return best_v


def _weighted_geomean(s: np.ndarray, lam: np.ndarray) -> float:
    """Product of s_j^{lambda_j} with the 0^0 = 1 convention."""
    active = lam > 0
    if np.any(s[active] == 0):
        return 0.0
    return float(np.exp(np.sum(lam[active] * np.log(s[active]))))


def perspective_mm(x_tuple, s_tuple, lambdas, table: LeastCostTable) -> float:
    """Closed-form multi-marginal perspective cost using the table's least cost."""
    s = np.asarray(s_tuple, dtype=float)
    if np.any(s < 0):
        raise ValueError(f"masses must be nonnegative, got {s}")
    lam = check_weights(lambdas, len(s))
    ctil = float(table.values[table.locate(x_tuple)])
    gibbs = 0.0 if math.isinf(ctil) else math.exp(-ctil)
    return float(np.dot(lam, s) - _weighted_geomean(s, lam) * gibbs)


def perspective_mm_oracle(x_tuple, s_tuple, lambdas, x_grid,
                          s_grid: Optional[np.ndarray] = None,
                          t_grid: Optional[np.ndarray] = None,
                          kind: GroundCostKind = GroundCostKind.HK) -> float:
    """Brute-force nested infimum over pivot point, pivot mass, and scale.

    Evaluates t*(sum_i lam_i c(x_i, x)) + sum_i lam_i t R(s_i/t) + t R(s/t)
    over the candidate grid crossed with log grids in (s, t), then zooms
    (s, t) per candidate.
    """
    s_in = np.asarray(s_tuple, dtype=float)
    if np.any(s_in <= 0):
        raise ValueError("the oracle requires strictly positive masses")
    lam = check_weights(lambdas, len(s_in))
    cand = as_points(x_grid)
    C = np.zeros(cand.shape[0])
    for i, x in enumerate(x_tuple):
        if lam[i] == 0:
            continue
        C += lam[i] * pairwise_cost([np.atleast_1d(x)], cand, kind)[0]
    if s_grid is None:
        s_grid = np.logspace(np.log10(ORACLE_GRID_LO), np.log10(ORACLE_GRID_HI), ORACLE_GRID_N)
    if t_grid is None:
        t_grid = np.logspace(np.log10(ORACLE_GRID_LO), np.log10(ORACLE_GRID_HI), ORACLE_GRID_N)

    def inner(C_k, s_vec, t_vec):
        # (ns, nt) objective for one candidate
        t = t_vec[None, :]
        obj = t * C_k + _reverse_entropy_term(s_vec[:, None], t)
        for i in range(len(s_in)):
            obj = obj + lam[i] * _reverse_entropy_term(s_in[i], t)
        return obj

    best = math.inf
    ratio_s0 = float(s_grid[-1] / s_grid[0]) ** (1.0 / (len(s_grid) - 1))
    ratio_t0 = float(t_grid[-1] / t_grid[0]) ** (1.0 / (len(t_grid) - 1))
    for k in range(cand.shape[0]):
        if math.isinf(C[k]):
            continue
        obj = inner(C[k], s_grid, t_grid)
        ks, kt = np.unravel_index(np.argmin(obj), obj.shape)
        s_c, t_c, v_c = float(s_grid[ks]), float(t_grid[kt]), float(obj[ks, kt])
        ratio_s, ratio_t = ratio_s0, ratio_t0
        for _ in range(ORACLE_ZOOM_ROUNDS):
            gs = _zoom_grid(s_c, ratio_s, ORACLE_ZOOM_N)
            gt = _zoom_grid(t_c, ratio_t, ORACLE_ZOOM_N)
            obj = inner(C[k], gs, gt)
            ks, kt = np.unravel_index(np.argmin(obj), obj.shape)
            if obj[ks, kt] < v_c:
                s_c, t_c, v_c = float(gs[ks]), float(gt[kt]), float(obj[ks, kt])
            ratio_s = ratio_s ** (2.0 / (ORACLE_ZOOM_N - 1))
            ratio_t = ratio_t ** (2.0 / (ORACLE_ZOOM_N - 1))
        best = min(best, v_c)
    return best


def perspective_mm_unconstrained(x_tuple, s_tuple, lambdas, x_grid,
                                 s_grid: Optional[np.ndarray] = None,
                                 kind: GroundCostKind = GroundCostKind.HK) -> float:
    """Numeric infimum over (x, s) of the weighted sum of two-marginal costs.

    This is the per-term-scale variant (each pairwise cost optimizes its own
    scale), evaluated by brute force; it lower-bounds the joint-scale cost.
    """
    s_in = np.asarray(s_tuple, dtype=float)
    if np.any(s_in < 0):
        raise ValueError(f"masses must be nonnegative, got {s_in}")
    lam = check_weights(lambdas, len(s_in))
    cand = as_points(x_grid)
    gibbs = np.zeros((len(s_in), cand.shape[0]))
    for i, x in enumerate(x_tuple):
        c = pairwise_cost([np.atleast_1d(x)], cand, kind)[0]
        gibbs[i] = np.where(np.isfinite(c), np.exp(-0.5 * c), 0.0)
    if s_grid is None:
        s_grid = np.logspace(np.log10(ORACLE_GRID_LO), np.log10(ORACLE_GRID_HI), ORACLE_GRID_N)
    base = float(np.dot(lam, s_in))
    # sum_i lam_i H(x_i, s_i, x, s) = base + s - 2 sqrt(s) * sum_i lam_i sqrt(s_i) K_i(x)
    coef = (lam * np.sqrt(s_in)) @ gibbs  # (m,)
    best = base  # s = 0 candidate: pure annihilation on every axis
    ratio0 = float(s_grid[-1] / s_grid[0]) ** (1.0 / (len(s_grid) - 1))
    for k in range(cand.shape[0]):
        vals = s_grid - 2.0 * np.sqrt(s_grid) * coef[k]
        j = int(np.argmin(vals))
        s_c, v_c = float(s_grid[j]), float(vals[j])
        ratio = ratio0
        for _ in range(ORACLE_ZOOM_ROUNDS):
            g = _zoom_grid(s_c, ratio, ORACLE_ZOOM_N)
            vals = g - 2.0 * np.sqrt(g) * coef[k]
            j = int(np.argmin(vals))
            if vals[j] < v_c:
                s_c, v_c = float(g[j]), float(vals[j])
            ratio = ratio ** (2.0 / (ORACLE_ZOOM_N - 1))
        best = min(best, base + v_c)
    return best
