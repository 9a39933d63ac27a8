"""Command-line front end.

Subcommands: ``barycenter`` (solve from measure CSVs), ``gaussians-demo``
(self-generating two-Gaussian study), ``dirac`` (analytic Dirac barycenter),
and ``verify`` (three-way equality check).  Flags can come from a flat
``key = value`` config file via --config; explicit flags win.

Exit codes: 0 success, 1 usage, 2 data/validation, 3 solver non-convergence
(or verification gaps above tolerance).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .barycenter import (
    BarycenterProblem,
    TensorBudgetError,
    dirac_barycenter,
    solve_smm,
    verify_equalities,
)
from .cost import GroundCostKind, WeightError
from .measure import (
    DiscreteMeasure,
    GridError,
    MeasureError,
    build_grid,
    gaussian_on_grid,
    read_measure_csv,
    total_mass,
    write_measure_csv,
)
from .solver import SolverConfig, SolverError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_SOLVER = 3

_DataError = (MeasureError, GridError, WeightError, SolverError, TensorBudgetError,
              ValueError, OSError)


@dataclass
class RunConfig:
    cost: str = "hk"
    grid_n: int = 200
    bounds: tuple = ((0.0, 1.0),)
    lambdas: list = field(default_factory=list)
    eps_start: float = 1e-1
    eps_final: float = 1e-3
    eps_factor: float = 0.5
    tol: float = 1e-9
    max_iter: int = 5000
    continuous_argmin: bool = False
    verify: bool = False
    out_dir: str = "."
    figures: bool = True
    # None means "run both costs" for the demo; set when --cost was explicit
    cost_explicit: bool = False

    def solver_config(self) -> SolverConfig:
        return SolverConfig(epsilon_start=self.eps_start, epsilon_final=self.eps_final,
                            epsilon_factor=self.eps_factor, max_iter=self.max_iter,
                            tol=self.tol)

    def cost_kind(self) -> GroundCostKind:
        return GroundCostKind.HK if self.cost == "hk" else GroundCostKind.QUADRATIC

    def grid(self):
        dim = len(self.bounds)
        return build_grid(dim, self.bounds, self.grid_n)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit with code 1, not argparse's 2
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _parse_bounds(text: str) -> tuple:
    vals = [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    if len(vals) == 2:
        return ((vals[0], vals[1]),)
    if len(vals) == 4:
        return ((vals[0], vals[1]), (vals[2], vals[3]))
    raise ValueError(f"bounds need 2 numbers (1D) or 4 (2D), got {len(vals)}")


def _parse_point(text: str) -> list:
    return [float(v) for v in text.split(",") if v.strip()]


_FLAG_KEYS = {
    "cost": str,
    "grid-n": int,
    "bounds": _parse_bounds,
    "lambda": None,  # list, handled separately
    "eps-start": float,
    "eps-final": float,
    "eps-factor": float,
    "tol": float,
    "max-iter": int,
    "continuous-argmin": None,
    "verify": None,
    "out-dir": str,
    "figures": None,
}


def load_config_file(path) -> dict:
    """Flat ``key = value`` file, keys matching the flag names."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise MeasureError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("_", "-")
        if key not in _FLAG_KEYS:
            raise MeasureError(f"{path}:{lineno}: unknown config key {key!r}")
        out[key] = value
    return out


def _bool_from_text(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {value!r}")


def build_run_config(args) -> RunConfig:
    cfg = RunConfig()
    file_values = load_config_file(args.config) if getattr(args, "config", None) else {}
    for key, raw in file_values.items():
        if key == "lambda":
            cfg.lambdas = [float(v) for v in raw.replace(",", " ").split()]
        elif key in ("continuous-argmin", "verify", "figures"):
            setattr(cfg, key.replace("-", "_"), _bool_from_text(raw))
        elif key == "cost":
            cfg.cost = raw.strip().lower()
            cfg.cost_explicit = True
        else:
            setattr(cfg, key.replace("-", "_"), _FLAG_KEYS[key](raw))
    overrides = {
        "cost": "cost", "grid_n": "grid_n", "bounds": "bounds", "lambdas": "lambdas",
        "eps_start": "eps_start", "eps_final": "eps_final", "eps_factor": "eps_factor",
        "tol": "tol", "max_iter": "max_iter", "out_dir": "out_dir",
    }
    for attr, target in overrides.items():
        value = getattr(args, attr, None)
        if value is not None and value != []:
            setattr(cfg, target, value)
            if attr == "cost":
                cfg.cost_explicit = True
    if getattr(args, "continuous_argmin", False):
        cfg.continuous_argmin = True
    if getattr(args, "verify", False):
        cfg.verify = True
    if getattr(args, "no_figures", False):
        cfg.figures = False
    if cfg.cost not in ("hk", "quadratic"):
        raise ValueError(f"cost must be 'hk' or 'quadratic', got {cfg.cost!r}")
    return cfg


def _add_shared_flags(sub):
    sub.add_argument("--config", help="flat key = value config file; flags override it")
    sub.add_argument("--cost", choices=["hk", "quadratic"], default=None)
    sub.add_argument("--grid-n", dest="grid_n", type=int, default=None)
    sub.add_argument("--bounds", type=_parse_bounds, default=None,
                     help="lo,hi (1D) or lo,hi,lo,hi (2D)")
    sub.add_argument("--lambda", dest="lambdas", type=float, action="append", default=None,
                     help="barycentric weight, repeatable")
    sub.add_argument("--eps-start", dest="eps_start", type=float, default=None)
    sub.add_argument("--eps-final", dest="eps_final", type=float, default=None)
    sub.add_argument("--eps-factor", dest="eps_factor", type=float, default=None)
    sub.add_argument("--tol", type=float, default=None)
    sub.add_argument("--max-iter", dest="max_iter", type=int, default=None)
    sub.add_argument("--continuous-argmin", dest="continuous_argmin", action="store_true")
    sub.add_argument("--verify", action="store_true")
    sub.add_argument("--out-dir", dest="out_dir", default=None)
    sub.add_argument("--no-figures", dest="no_figures", action="store_true",
                     help="skip PNG rendering next to the CSV outputs")


def _float_or_none(x):
    return None if x is None else (None if isinstance(x, float) and math.isnan(x) else x)


def _report_payload(values=None, gaps=None, residuals=None, iterations=None,
                    epsilon_final=None, converged=None) -> dict:
    values = values or {}
    gaps = gaps or {}
    return {
        "values": {k: _float_or_none(values.get(k)) for k in ("smm", "extended", "cc2m", "conic")},
        "gaps": {k: _float_or_none(gaps.get(k)) for k in ("extended", "cc2m", "conic")},
        "residuals": residuals if residuals is not None else [],
        "iterations": iterations,
        "epsilon_final": epsilon_final,
        "converged": converged,
    }


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_measures(cfg: RunConfig, paths):
    grid = cfg.grid()
    return grid, [read_measure_csv(p, grid) for p in paths]


def _weights_for(cfg: RunConfig, n: int) -> np.ndarray:
    if cfg.lambdas:
        lam = np.asarray(cfg.lambdas, dtype=float)
        if lam.shape != (n,):
            raise ValueError(f"got {lam.size} weights for {n} measures")
        return lam
    return np.full(n, 1.0 / n)


def cmd_barycenter(cfg: RunConfig, inputs) -> int:
    if len(inputs) < 2:
        raise ValueError("barycenter needs at least 2 input measures")
    grid, measures = _load_measures(cfg, inputs)
    weights = _weights_for(cfg, len(measures))
    problem = BarycenterProblem(measures, weights, cfg.cost_kind(), grid,
                                cfg.solver_config(), continuous_argmin=cfg.continuous_argmin)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    if cfg.verify:
        report = verify_equalities(problem)
        sol = report.solution
        values, gaps = report.values, report.gaps
    else:
        sol = solve_smm(problem)
        values, gaps = {"smm": sol.value}, {}

    write_measure_csv(sol.barycenter, out / "barycenter.csv")
    if sol.barycenter_atoms is not None:
        _write_atoms_csv(out / "barycenter_atoms.csv", sol.barycenter_atoms, grid.dim)
    for i in range(len(measures)):
        marg = np.zeros(measures[i].grid.n_points)
        if sol.plan.axis_indices is not None:
            np.add.at(marg, sol.plan.axis_indices[i], sol.plan.marginal(i))
        write_measure_csv(DiscreteMeasure(measures[i].grid, marg),
                          out / f"plan_marginal_{i + 1}.csv")
    payload = _report_payload(values=values, gaps=gaps, residuals=sol.report.residuals,
                              iterations=sol.report.iterations, epsilon_final=cfg.eps_final,
                              converged=sol.report.converged)
    _write_json(out / "report.json", payload)

    if cfg.figures:
        _render_barycenter_figure(out / "barycenter.png", measures, sol)
    print(f"barycenter mass {total_mass(sol.barycenter):.12g}, objective {sol.value:.12g}, "
          f"{sol.report.iterations} iterations")
    return EXIT_OK if sol.report.converged else EXIT_SOLVER


def _write_atoms_csv(path, atoms, dim: int) -> None:
    """Refined off-grid pivot atoms from the continuous extraction mode."""
    header = "x,mass" if dim == 1 else "x,y,mass"
    lines = [header]
    for point, mass in atoms:
        coords = ",".join(f"{c:.17g}" for c in np.atleast_1d(point))
        lines.append(f"{coords},{mass:.17g}")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _render_barycenter_figure(path, measures, sol) -> None:
    from . import plotting

    grid = sol.barycenter.grid
    if grid.dim == 1:
        layers = {f"mu{i + 1}": m.masses for i, m in enumerate(measures)}
        layers["barycenter"] = sol.barycenter.masses
        plotting.render_measures_1d(path, grid.points, layers, title="barycenter")
    else:
        layers = [(f"mu{i + 1}", m.grid.points[m.support()], m.masses[m.support()])
                  for i, m in enumerate(measures)]
        sup = sol.barycenter.support()
        layers.append(("barycenter", grid.points[sup], sol.barycenter.masses[sup]))
        plotting.render_scatter(path, layers, title="barycenter")


def cmd_gaussians_demo(cfg: RunConfig) -> int:
    """Two truncated Gaussians (mass 1 and 2) on [0, 1]; sweep weights and costs."""
    grid = cfg.grid()
    if grid.dim != 1:
        raise ValueError("the demo is one-dimensional")
    mu1 = gaussian_on_grid(grid, 0.2, 0.05, 1.0)
    mu2 = gaussian_on_grid(grid, 0.8, 0.08, 2.0)
    lam1_values = cfg.lambdas if cfg.lambdas else [0.25, 0.5, 0.75]
    costs = [cfg.cost_kind()] if cfg.cost_explicit else [GroundCostKind.QUADRATIC,
                                                         GroundCostKind.HK]
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = {}
    status = EXIT_OK
    for kind in costs:
        for lam1 in lam1_values:
            problem = BarycenterProblem([mu1, mu2], [lam1, 1.0 - lam1], kind, grid,
                                        cfg.solver_config())
            sol = solve_smm(problem)
            case = f"{kind.value}_lambda_{lam1:g}"
            columns = _demo_columns(grid, mu1, mu2, sol)
            _write_demo_csv(out / f"gaussians_{case}.csv", columns)
            if cfg.figures:
                from . import plotting

                plotting.render_curves(out / f"gaussians_{case}.png", grid.points.ravel(),
                                       columns_without_x(columns),
                                       title=f"{kind.value}, lambda1 = {lam1:g}")
            summary[case] = {
                "value": sol.value,
                "barycenter_mass": total_mass(sol.barycenter),
                "iterations": sol.report.iterations,
                "converged": sol.report.converged,
            }
            if not sol.report.converged:
                print(f"warning: case {case} did not reach the fixed-point tolerance",
                      file=sys.stderr)
            print(f"{case}: mass {total_mass(sol.barycenter):.6g}, value {sol.value:.6g}")
    _write_json(out / "demo_report.json", summary)
    return status


def _demo_columns(grid, mu1, mu2, sol) -> dict:
    marg = []
    for i in range(2):
        dense = np.zeros(grid.n_points)
        if sol.plan.axis_indices is not None:
            np.add.at(dense, sol.plan.axis_indices[i], sol.plan.marginal(i))
        marg.append(dense)
    return {
        "x": grid.points.ravel(),
        "mu1": mu1.masses,
        "mu2": mu2.masses,
        "gamma_marg1": marg[0],
        "gamma_marg2": marg[1],
        "barycenter": sol.barycenter.masses,
    }


def columns_without_x(columns: dict) -> dict:
    return {k: v for k, v in columns.items() if k != "x"}


def _write_demo_csv(path, columns: dict) -> None:
    keys = list(columns.keys())
    n = len(columns["x"])
    lines = [",".join(keys)]
    for r in range(n):
        lines.append(",".join(f"{columns[k][r]:.17g}" for k in keys))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def cmd_dirac(cfg: RunConfig, points, masses) -> int:
    lam = _weights_for(cfg, len(points))
    result = dirac_barycenter(points, masses, lam, cfg.cost_kind())
    payload = {
        "zero": result.is_zero,
        "point": None if result.is_zero else [float(c) for c in result.point],
        "mass": result.mass,
    }
    print(json.dumps(payload, sort_keys=True))
    return EXIT_OK


def cmd_verify(cfg: RunConfig, inputs) -> int:
    if len(inputs) < 2:
        raise ValueError("verify needs at least 2 input measures")
    grid, measures = _load_measures(cfg, inputs)
    weights = _weights_for(cfg, len(measures))
    problem = BarycenterProblem(measures, weights, cfg.cost_kind(), grid,
                                cfg.solver_config())
    report = verify_equalities(problem)
    for name in ("smm", "extended", "cc2m", "conic"):
        print(f"{name:9s} {report.values[name]:.10g}")
    for name, gap in report.gaps.items():
        print(f"gap {name:9s} {gap:.3e} (tolerance {report.tolerance:.3e})")
    print("PASS" if report.passed else "FAIL")
    return EXIT_OK if report.passed else EXIT_SOLVER


def make_parser() -> _Parser:
    parser = _Parser(prog="hkbary",
                     description="Constrained Hellinger-Kantorovich barycenters on grids")
    sub = parser.add_subparsers(dest="command", required=True)

    p_bary = sub.add_parser("barycenter", help="solve a barycenter from measure CSVs")
    p_bary.add_argument("inputs", nargs="+", help="measure CSV files (>= 2)")
    _add_shared_flags(p_bary)

    p_demo = sub.add_parser("gaussians-demo", help="two-Gaussian barycenter study")
    _add_shared_flags(p_demo)

    p_dirac = sub.add_parser("dirac", help="analytic barycenter of Dirac masses")
    p_dirac.add_argument("--point", dest="points", type=_parse_point, action="append",
                         required=True, help="atom location, e.g. 0.5 or 0.5,0.25")
    p_dirac.add_argument("--mass", dest="masses", type=float, action="append",
                         required=True)
    _add_shared_flags(p_dirac)

    p_verify = sub.add_parser("verify", help="three-way equality check on inputs")
    p_verify.add_argument("inputs", nargs="+", help="measure CSV files (>= 2)")
    _add_shared_flags(p_verify)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        cfg = build_run_config(args)
        if args.command == "barycenter":
            return cmd_barycenter(cfg, args.inputs)
        if args.command == "gaussians-demo":
            return cmd_gaussians_demo(cfg)
        if args.command == "dirac":
            if len(args.points) != len(args.masses):
                raise ValueError("need as many --mass flags as --point flags")
            return cmd_dirac(cfg, args.points, args.masses)
        if args.command == "verify":
            return cmd_verify(cfg, args.inputs)
        raise ValueError(f"unknown command {args.command!r}")
    except _DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
