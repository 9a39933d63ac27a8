"""Discrete measures on uniform grids, with density decompositions and CSV I/O.

Everything downstream (cost tables, scaling solves, barycenter extraction)
assumes measures live on fixed uniform grids so that marginal comparisons
are exact index-wise.  Off-grid atoms are rejected at construction.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

# A grid point carries support iff its mass exceeds this fraction of the total.
SUPPORT_RTOL = 1e-15

# Relative slack allowed when checking uniform spacing of grid axes.
_SPACING_RTOL = 1e-12


class GridError(ValueError):
    """Raised for invalid grids or grid mismatches between measures."""


class MeasureError(ValueError):
    """Raised for invalid measure data (negative masses, bad atoms, ...)."""


@dataclass(frozen=True, eq=False)
class GroundGrid:
    """Uniform tensor grid on a closed box in 1 or 2 dimensions.

    ``axes`` holds the per-axis coordinates, ``points`` the flattened lattice
    in row-major (``indexing='ij'``) order, so flat index = ix * ny + iy in 2D.
    """

    dim: int
    bounds: tuple[tuple[float, float], ...]
    axes: tuple[np.ndarray, ...]
    points: np.ndarray  # (n_points, dim)
    spacing: tuple[float, ...]

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.axes)

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, GroundGrid):
            return NotImplemented
        return (
            self.dim == other.dim
            and self.shape == other.shape
            and all(np.array_equal(a, b) for a, b in zip(self.axes, other.axes))
        )

    def flat_index(self, axis_indices: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(axis_indices), self.shape))

    def snap(self, point) -> tuple[int, float]:
        """Nearest lattice point of ``point``.

        Returns ``(flat_index, euclidean_distance)``.  Per-axis ties resolve
        to the lower index so that snapping is deterministic.
        """
        p = np.atleast_1d(np.asarray(point, dtype=float))
        if p.shape != (self.dim,):
            raise GridError(f"point has dimension {p.shape}, grid is {self.dim}-d")
        idx = []
        for d in range(self.dim):
            lo, _ = self.bounds[d]
            q = (p[d] - lo) / self.spacing[d]
            k = int(np.ceil(q - 0.5))  # nearest, ties toward the lower index
            k = min(max(k, 0), len(self.axes[d]) - 1)
            idx.append(k)
        flat = self.flat_index(idx)
        dist = float(np.linalg.norm(self.points[flat] - p))
        return flat, dist


def build_grid(dim: int, bounds, n: int) -> GroundGrid:
    """Uniform grid with ``n`` points per axis, endpoints included.

    ``bounds`` is ``(lo, hi)`` in 1D or a pair of such intervals in 2D.
    """
    if dim not in (1, 2):
        raise GridError(f"dim must be 1 or 2, got {dim}")
    if n < 2:
        raise GridError(f"need at least 2 points per axis, got {n}")
    b = np.asarray(bounds, dtype=float)
    if b.shape == (2,):
        b = b[None, :]
    if b.shape != (dim, 2):
        raise GridError(f"bounds shape {b.shape} does not match dim {dim}")
    for lo, hi in b:
        if not np.isfinite([lo, hi]).all() or hi <= lo:
            raise GridError(f"degenerate bounds ({lo}, {hi})")
    axes = tuple(np.linspace(lo, hi, n) for lo, hi in b)
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)
    spacing = tuple(float((hi - lo) / (n - 1)) for lo, hi in b)
    grid = GroundGrid(
        dim=dim,
        bounds=tuple((float(lo), float(hi)) for lo, hi in b),
        axes=axes,
        points=points,
        spacing=spacing,
    )
    for a, h in zip(axes, spacing):
        gaps = np.diff(a)
        if not np.all(np.abs(gaps - h) <= _SPACING_RTOL * max(abs(h), 1.0)):
            raise GridError("grid spacing is not uniform")
    return grid


@dataclass(eq=False)
class DiscreteMeasure:
    """Nonnegative masses attached to the points of a :class:`GroundGrid`."""

    grid: GroundGrid
    masses: np.ndarray  # (n_points,)

    def __post_init__(self):
        m = np.asarray(self.masses, dtype=float)
        if m.shape != (self.grid.n_points,):
            raise MeasureError(
                f"masses shape {m.shape} does not match grid with {self.grid.n_points} points"
            )
        if not np.all(np.isfinite(m)):
            raise MeasureError("masses must be finite")
        if np.any(m < 0):
            raise MeasureError("masses must be nonnegative")
        self.masses = m

    @classmethod
    def zero(cls, grid: GroundGrid) -> "DiscreteMeasure":
        return cls(grid, np.zeros(grid.n_points))

    @classmethod
    def dirac(cls, grid: GroundGrid, point, mass: float = 1.0) -> "DiscreteMeasure":
        """Single atom at the grid point nearest to ``point``.

        The point must lie within half a grid spacing of the lattice.
        """
        flat, dist = grid.snap(point)
        if dist > 0.5 * max(grid.spacing) * (1 + 1e-9):
            raise MeasureError(f"point {point} is {dist:g} away from the nearest grid point")
        masses = np.zeros(grid.n_points)
        masses[flat] = mass
        return cls(grid, masses)

    @classmethod
    def from_atoms(cls, grid: GroundGrid, atoms: Iterable[tuple]) -> "DiscreteMeasure":
        """Measure from ``(point, mass)`` pairs, each snapped to the grid."""
        masses = np.zeros(grid.n_points)
        for point, mass in atoms:
            flat, dist = grid.snap(point)
            if dist > 0.5 * max(grid.spacing) * (1 + 1e-9):
                raise MeasureError(f"atom at {point} is off-grid (snap distance {dist:g})")
            masses[flat] += mass
        return cls(grid, masses)

    def support(self) -> np.ndarray:
        """Flat indices of the points carrying mass above the support threshold."""
        total = float(self.masses.sum())
        if total <= 0.0:
            return np.empty(0, dtype=int)
        return np.flatnonzero(self.masses > SUPPORT_RTOL * total)


@dataclass
class DensityDecomposition:
    """Pointwise density ratios and singular masses between two measures.

    ``sigma`` is d(marginal)/d(reference) where the reference has support,
    ``rho`` is d(reference)/d(marginal) where the marginal has support;
    the perpendicular masses collect what escapes the other's support.
    """

    sigma: np.ndarray
    rho: np.ndarray
    gamma_perp_mass: float
    mu_perp_mass: float


def total_mass(m: DiscreteMeasure) -> float:
    return float(m.masses.sum())


def scale_measure(m: DiscreteMeasure, k: float) -> DiscreteMeasure:
    if k < 0:
        raise MeasureError(f"scale factor must be nonnegative, got {k}")
    return DiscreteMeasure(m.grid, m.masses * k)


def density_ratios(marginal: DiscreteMeasure, reference: DiscreteMeasure) -> DensityDecomposition:
    """Discrete Lebesgue-type decomposition of ``marginal`` against ``reference``.

    Satisfies ``marginal = sigma * reference + (perp part)`` pointwise and
    ``sigma * rho = 1`` wherever both measures carry mass.
    """
    if marginal.grid != reference.grid:
        raise GridError("density_ratios requires measures on the same grid")
    g, r = marginal.masses, reference.masses
    sigma, rho, g_perp, m_perp = density_ratio_arrays(g, r)
    return DensityDecomposition(sigma, rho, g_perp, m_perp)


def density_ratio_arrays(marginal: np.ndarray, reference: np.ndarray):
    """Array-level core of :func:`density_ratios` (shared with the cone lift)."""
    g = np.asarray(marginal, dtype=float)
    r = np.asarray(reference, dtype=float)
    r_supp = r > SUPPORT_RTOL * max(r.sum(), 0.0) if r.sum() > 0 else np.zeros_like(r, dtype=bool)
    g_supp = g > SUPPORT_RTOL * max(g.sum(), 0.0) if g.sum() > 0 else np.zeros_like(g, dtype=bool)
    sigma = np.zeros_like(g)
    rho = np.zeros_like(g)
    np.divide(g, r, out=sigma, where=r_supp)
    np.divide(r, g, out=rho, where=g_supp)
    gamma_perp = float(g[~r_supp].sum())
    mu_perp = float(r[~g_supp].sum())
    return sigma, rho, gamma_perp, mu_perp


def gaussian_on_grid(grid: GroundGrid, mean, std: float, mass: float) -> DiscreteMeasure:
    """Truncated-Gaussian density sampled on the grid, normalized to ``mass``."""
    mu = np.atleast_1d(np.asarray(mean, dtype=float))
    d2 = ((grid.points - mu[None, :]) ** 2).sum(axis=1)
    density = np.exp(-0.5 * d2 / std**2)
    z = density.sum()
    if z <= 0:
        raise MeasureError("gaussian density vanished on the whole grid")
    return DiscreteMeasure(grid, density * (mass / z))


# ---------------------------------------------------------------------------
# CSV interchange: header x,mass (1D) or x,y,mass (2D), one atom per row.
# ---------------------------------------------------------------------------

def read_measure_csv(path, grid: GroundGrid) -> DiscreteMeasure:
    """Read atoms from ``path`` and snap them onto ``grid``.

    A row whose snap distance exceeds half the grid spacing is an error.
    Duplicate rows at the same grid point accumulate.
    """
    expected = ["x", "mass"] if grid.dim == 1 else ["x", "y", "mass"]
    masses = np.zeros(grid.n_points)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MeasureError(f"{path}: empty measure file") from None
        if [h.strip() for h in header] != expected:
            raise MeasureError(f"{path}: expected header {','.join(expected)!r}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected):
                raise MeasureError(f"{path}:{lineno}: expected {len(expected)} fields, got {len(row)}")
            try:
                vals = [float(v) for v in row]
            except ValueError as exc:
                raise MeasureError(f"{path}:{lineno}: {exc}") from None
            point, mass = vals[:-1], vals[-1]
            if mass < 0:
                raise MeasureError(f"{path}:{lineno}: negative mass {mass}")
            flat, dist = grid.snap(point)
            if dist > 0.5 * max(grid.spacing) * (1 + 1e-9):
                raise MeasureError(
                    f"{path}:{lineno}: atom at {point} is {dist:g} from the nearest grid point "
                    f"(limit {0.5 * max(grid.spacing):g})"
                )
            masses[flat] += mass
    return DiscreteMeasure(grid, masses)


def write_measure_csv(m: DiscreteMeasure, path) -> None:
    """Write the support atoms of ``m``, one per row, at full precision."""
    header = "x,mass" if m.grid.dim == 1 else "x,y,mass"
    lines = [header]
    for flat in m.support():
        coords = ",".join(f"{c:.17g}" for c in m.grid.points[flat])
        lines.append(f"{coords},{m.masses[flat]:.17g}")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
