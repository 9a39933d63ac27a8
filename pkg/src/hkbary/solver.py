"""Entropic scaling solver for multi-marginal transport with mixed penalties.

Each axis carries a Soft (KL, weighted), Hard (exact marginal), or Free
(unpenalized) constraint.  Everything runs in the log domain: potentials are
stored as logs, kernel contractions use shifted log-sum-exp, and potentials
whose magnitude exceeds the stabilization threshold get absorbed into the
kernel exponent.  Soft axes use the damped update with exponent w / (w + eps);
Hard axes project their marginal exactly; Free axes keep a zero potential.

The solver normalizes the total target mass internally and rescales the plan
and objectives on return, so scaling every target by k scales the output by
exactly k (the entropic reference term alone is not jointly 1-homogeneous).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .entropy import HARD_EQUALITY_ATOL, hard_gap, kl_divergence


class SolverError(ValueError):
    """Raised for invalid solver inputs."""


@dataclass(frozen=True)
class MarginalPenalty:
    """Marginal treatment for one axis: Soft(weight), Hard, or Free."""

    kind: str  # "soft" | "hard" | "free"
    weight: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("soft", "hard", "free"):
            raise SolverError(f"unknown penalty kind {self.kind!r}")
        if self.kind == "soft" and not (self.weight is not None and self.weight > 0):
            raise SolverError(f"soft penalty needs a positive weight, got {self.weight}")

    @classmethod
    def soft(cls, weight: float) -> "MarginalPenalty":
        return cls("soft", float(weight))

    @classmethod
    def hard(cls) -> "MarginalPenalty":
        return cls("hard")

    @classmethod
    def free(cls) -> "MarginalPenalty":
        return cls("free")


@dataclass(frozen=True)
class SolverConfig:
    epsilon_start: float = 1e-1
    epsilon_final: float = 1e-3
    epsilon_factor: float = 0.5
    max_iter: int = 5000  # per epsilon stage
    tol: float = 1e-9  # sup-norm change of log-potentials per cycle
    stabilization: float = 50.0  # absorb threshold on |log potential|

    def __post_init__(self):
        if not (0 < self.epsilon_final <= self.epsilon_start):
            raise SolverError(
                f"need 0 < epsilon_final <= epsilon_start, got {self.epsilon_final}, {self.epsilon_start}"
            )
        if not (0 < self.epsilon_factor < 1):
            raise SolverError(f"epsilon_factor must lie in (0, 1), got {self.epsilon_factor}")
        if self.tol <= 0:
            raise SolverError(f"tol must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise SolverError(f"max_iter must be at least 1, got {self.max_iter}")

    def schedule(self) -> list:
        """Geometric epsilon ladder, last stage clamped to epsilon_final."""
        eps = [self.epsilon_start]
        while eps[-1] > self.epsilon_final * (1 + 1e-12):
            eps.append(max(eps[-1] * self.epsilon_factor, self.epsilon_final))
        return eps


@dataclass
class SolverReport:
    regularized_objective: float
    unregularized_objective: float
    residuals: list
    iterations: int
    converged: bool
    epsilon: float
    infeasible: bool = False
    stage_objectives: Optional[list] = None


@dataclass(eq=False)
class TransportPlan:
    """Nonnegative N-way mass tensor over per-axis support points."""

    values: np.ndarray
    axis_points: list  # per-axis (n_i, dim) coordinate arrays
    axis_indices: Optional[list] = None  # per-axis flat indices into source grids

    @property
    def ndim(self) -> int:
        return self.values.ndim

    def marginal(self, axis: int) -> np.ndarray:
        other = tuple(a for a in range(self.values.ndim) if a != axis)
        return self.values.sum(axis=other)

    def total_mass(self) -> float:
        return float(self.values.sum())


def _reshape_to_axis(vec: np.ndarray, axis: int, ndim: int) -> np.ndarray:
    return vec.reshape((1,) * axis + (len(vec),) + (1,) * (ndim - 1 - axis))


def _lse_to_axis(arr: np.ndarray, axis: int) -> np.ndarray:
    """Shifted log-sum-exp over every axis except ``axis``."""
    other = tuple(a for a in range(arr.ndim) if a != axis)
    m = np.max(arr, axis=other, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.exp(arr - m_safe).sum(axis=other)) + m_safe.ravel()
    return out


def _validate(cost, targets, penalties, epsilon):
    cost = np.asarray(cost, dtype=float)
    if np.any(np.isnan(cost)) or np.any(cost == -np.inf):
        raise SolverError("cost tensor must be free of NaN/-inf (+inf entries are allowed)")
    if np.any(cost[np.isfinite(cost)] < 0):
        raise SolverError("cost tensor must be nonnegative")
    n = cost.ndim
    if len(targets) != n or len(penalties) != n:
        raise SolverError(f"cost has {n} axes but {len(targets)} targets / {len(penalties)} penalties")
    if all(p.kind == "free" for p in penalties):
        raise SolverError("at least one axis must carry a Soft or Hard penalty")
    if not (epsilon > 0 and math.isfinite(epsilon)):
        raise SolverError(f"epsilon must be positive and finite, got {epsilon}")
    tg = []
    for i, t in enumerate(targets):
        t = np.asarray(t, dtype=float)
        if t.shape != (cost.shape[i],):
            raise SolverError(f"target {i} has shape {t.shape}, expected ({cost.shape[i]},)")
        if not np.all(np.isfinite(t)) or np.any(t < 0):
            raise SolverError(f"target {i} must be finite and nonnegative")
        tg.append(t)
    return cost, tg


def _zero_report(cost, targets, penalties, epsilon, infeasible):
    plan = np.zeros(cost.shape)
    return plan, SolverReport(
        regularized_objective=unregularized_objective(plan, cost, targets, penalties),
        unregularized_objective=unregularized_objective(plan, cost, targets, penalties),
        residuals=marginal_residuals(plan, targets, penalties),
        iterations=0,
        converged=True,
        epsilon=epsilon,
        infeasible=infeasible,
    )


def sinkhorn_general(cost, targets: Sequence, penalties: Sequence[MarginalPenalty],
                     epsilon: float, config: Optional[SolverConfig] = None,
                     potentials: Optional[list] = None):
    """Single-epsilon scaling solve.  Returns ``(TransportPlan, SolverReport)``."""
    plan, report, _ = _sinkhorn(cost, targets, penalties, epsilon, config, potentials)
    return TransportPlan(plan, axis_points=[None] * plan.ndim), report


def _sinkhorn(cost, targets, penalties, epsilon, config, potentials):
    config = config or SolverConfig()
    cost, targets = _validate(cost, targets, penalties, epsilon)
    n_axes = cost.ndim
    active = [i for i in range(n_axes) if penalties[i].kind != "free"]

    totals = np.array([targets[i].sum() for i in range(n_axes)])
    # normalize to the penalty-weighted mean mass: unit-mass fixed points stay
    # exact, and the solve is 1-homogeneous in the targets by construction
    pen_w = np.array([penalties[i].weight if penalties[i].kind == "soft" else 1.0
                      for i in active])
    scale = float(np.dot(pen_w, totals[active]) / pen_w.sum())
    if scale <= 0.0:
        plan, report = _zero_report(cost, targets, penalties, epsilon, infeasible=False)
        return plan, report, None
    if any(totals[i] == 0.0 for i in active):
        # some penalized marginal is forced to vanish, so the plan must too
        infeasible = any(
            penalties[i].kind == "hard" and totals[i] == 0.0 and any(totals[j] > 0 for j in active if j != i)
            for i in active
        )
        plan, report = _zero_report(cost, targets, penalties, epsilon, infeasible=infeasible)
        return plan, report, None

    refs = []
    for i in range(n_axes):
        if penalties[i].kind == "free":
            # counting measure: a concentrated pivot then carries no mass bias
            refs.append(np.ones(cost.shape[i]))
        else:
            refs.append(targets[i] / scale)

    targets_n = [targets[i] / scale if penalties[i].kind != "free" else None
                 for i in range(n_axes)]
    with np.errstate(divide="ignore"):
        log_refs = [np.log(r) for r in refs]
        log_mu = [np.log(targets_n[i]) if targets_n[i] is not None else None
                  for i in range(n_axes)]
    base = -cost / epsilon
    for j in range(n_axes):
        base = base + _reshape_to_axis(log_refs[j], j, n_axes)

    if not np.any(np.isfinite(base)):
        infeasible = any(penalties[i].kind == "hard" and totals[i] > 0 for i in active)
        plan, report = _zero_report(cost, targets, penalties, epsilon, infeasible=infeasible)
        return plan, report, None

    kappa = {}
    for i in active:
        if penalties[i].kind == "soft":
            w = penalties[i].weight
            kappa[i] = w / (w + epsilon)
    f = []
    for i in range(n_axes):
        if potentials is not None and potentials[i] is not None:
            f.append(np.asarray(potentials[i], dtype=float) / epsilon)
        else:
            f.append(np.zeros(cost.shape[i]))
    absorbed = [np.zeros(cost.shape[i]) for i in range(n_axes)]
    dead = [None] * n_axes

    soft_axes = [i for i in active if penalties[i].kind == "soft"]
    hard_axes = [i for i in active if penalties[i].kind == "hard"]
    absorbed_any = [False] * n_axes
    converged = False
    infeasible = False
    iterations = 0
    for it in range(1, config.max_iter + 1):
        prev = [absorbed[i] + f[i] for i in active]
        tmp = None
        for i in active:
            tmp = base - _reshape_to_axis(absorbed[i], i, n_axes) if absorbed_any[i] else base
            for j in active:
                if j != i:
                    tmp = tmp + _reshape_to_axis(f[j], j, n_axes)
            q = _lse_to_axis(tmp, i)
            if dead[i] is None:
                dead[i] = ~np.isfinite(q)
                if penalties[i].kind == "hard" and np.any(dead[i] & (targets[i] > 0)):
                    infeasible = True
                    break
                if not np.any(dead[i]):
                    dead[i] = False
            scale_i = kappa[i] if penalties[i].kind == "soft" else 1.0
            g_new = scale_i * (log_mu[i] - q)
            if dead[i] is not False:
                g_new = np.where(dead[i], 0.0, g_new)
            f[i] = g_new - absorbed[i]
        iterations = it
        if infeasible:
            break
        # tmp still lacks the last updated axis' contribution; complete it to
        # the current log-plan for the translation's kernel-mass evaluation
        i_last = active[-1]
        log_plan = tmp + _reshape_to_axis(f[i_last] + (absorbed[i_last] if absorbed_any[i_last] else 0.0),
                                          i_last, n_axes)
        _translate(log_plan, f, absorbed, penalties, log_mu, targets_n, dead, epsilon,
                   soft_axes, hard_axes)
        delta = 0.0
        for k, i in enumerate(active):
            step = np.max(np.abs(absorbed[i] + f[i] - prev[k]))
            delta = max(delta, float(step))
        if delta < config.tol:
            converged = True
            break
        for i in active:
            if np.max(np.abs(f[i])) > config.stabilization:
                absorbed[i] = absorbed[i] + f[i]
                base = base + _reshape_to_axis(f[i], i, n_axes)
                f[i] = np.zeros_like(f[i])
                absorbed_any[i] = True

    if infeasible:
        plan, report = _zero_report(cost, targets, penalties, epsilon, infeasible=True)
        report.iterations = iterations
        return plan, report, None

    log_plan = base
    for j in range(n_axes):
        log_plan = log_plan + _reshape_to_axis(f[j], j, n_axes)
    plan_n = np.exp(log_plan)
    plan = plan_n * scale

    reg = _regularized_objective(plan_n, cost, [t / scale for t in targets], penalties, refs, epsilon)
    report = SolverReport(
        regularized_objective=reg * scale,
        unregularized_objective=unregularized_objective(plan, cost, targets, penalties),
        residuals=marginal_residuals(plan, targets, penalties),
        iterations=iterations,
        converged=converged,
        epsilon=epsilon,
        infeasible=False,
    )
    out_potentials = [epsilon * (absorbed[i] + f[i]) for i in range(n_axes)]
    return plan, report, out_potentials


def _log_sum(values: np.ndarray) -> float:
    m = float(np.max(values))
    if not math.isfinite(m):
        return m
    return m + math.log(float(np.exp(values - m).sum()))


def _translate(log_plan, f, absorbed, penalties, log_mu, targets_n, dead, epsilon,
               soft_axes, hard_axes) -> None:
    """Shift each penalized potential by its closed-form optimal constant.

    Constant shifts leave the coordinate updates' geometry untouched but
    carry the slowly-converging total-mass mode; maximizing the dual over
    them has a closed form (soft axes contribute w <mu, exp(-u/w)>, hard
    axes are linear, the kernel mass scales exponentially in the shift sum).
    """
    log_kernel_mass = _log_sum(log_plan)
    if not math.isfinite(log_kernel_mass):
        return
    log_a = {}
    for i in soft_axes:
        w = penalties[i].weight
        v = log_mu[i] - epsilon * (absorbed[i] + f[i]) / w
        if dead[i] is not None and dead[i] is not False and np.any(dead[i]):
            v = v[~dead[i]]
        la = _log_sum(v)
        if not math.isfinite(la):
            return
        log_a[i] = la
    w_sum = sum(penalties[i].weight for i in soft_axes)
    if hard_axes:
        log_mstar = math.log(float(targets_n[hard_axes[0]].sum()))
    else:
        log_mstar = (epsilon * log_kernel_mass
                     + sum(penalties[i].weight * log_a[i] for i in soft_axes)) \
            / (epsilon + w_sum)
    shifts = {i: penalties[i].weight * (log_a[i] - log_mstar) for i in soft_axes}
    if hard_axes:
        leftover = epsilon * (log_mstar - log_kernel_mass) - sum(shifts.values())
        for i in hard_axes:
            shifts[i] = leftover / len(hard_axes)
    for i, delta in shifts.items():
        if dead[i] is not None and dead[i] is not False and np.any(dead[i]):
            f[i] = np.where(dead[i], f[i], f[i] + delta / epsilon)
        else:
            f[i] = f[i] + delta / epsilon


def anneal(cost, targets: Sequence, penalties: Sequence[MarginalPenalty],
           config: Optional[SolverConfig] = None):
    """Run the epsilon ladder with warm-started potentials.

    Returns ``(TransportPlan, SolverReport)``; the report carries the final
    stage's convergence data, total iteration count, and the per-stage
    unregularized objectives.
    """
    config = config or SolverConfig()
    potentials = None
    total_iterations = 0
    stage_objectives = []
    plan = report = None
    for eps in config.schedule():
        plan, report, potentials = _sinkhorn(cost, targets, penalties, eps, config, potentials)
        total_iterations += report.iterations
        stage_objectives.append(report.unregularized_objective)
        if report.infeasible or potentials is None:
            break
    report.iterations = total_iterations
    report.stage_objectives = stage_objectives
    return TransportPlan(plan, axis_points=[None] * plan.ndim), report


def unregularized_objective(plan, cost, targets: Sequence,
                            penalties: Sequence[MarginalPenalty]) -> float:
    """Cost integral plus penalized marginal divergences, with inf * 0 = 0."""
    p = plan.values if isinstance(plan, TransportPlan) else np.asarray(plan, dtype=float)
    cost = np.asarray(cost, dtype=float)
    total = float(np.sum(np.where(p > 0, cost, 0.0) * p))
    for i, pen in enumerate(penalties):
        if pen.kind == "free":
            continue
        other = tuple(a for a in range(p.ndim) if a != i)
        marg = p.sum(axis=other)
        target = np.asarray(targets[i], dtype=float)
        if pen.kind == "soft":
            total += pen.weight * kl_divergence(marg, target)
        else:
            total += 0.0 if hard_gap(marg, target) <= HARD_EQUALITY_ATOL else math.inf
    return total


def marginal_residuals(plan, targets: Sequence, penalties: Sequence[MarginalPenalty]) -> list:
    """Per-axis KL (Soft) or sup-norm gap (Hard) of plan marginals; Free -> 0."""
    p = plan.values if isinstance(plan, TransportPlan) else np.asarray(plan, dtype=float)
    out = []
    for i, pen in enumerate(penalties):
        if pen.kind == "free":
            out.append(0.0)
            continue
        other = tuple(a for a in range(p.ndim) if a != i)
        marg = p.sum(axis=other)
        target = np.asarray(targets[i], dtype=float)
        out.append(kl_divergence(marg, target) if pen.kind == "soft" else hard_gap(marg, target))
    return out


def _regularized_objective(plan_n, cost, targets_n, penalties, refs, epsilon) -> float:
    value = unregularized_objective(plan_n, cost, targets_n, penalties)
    if math.isinf(value):
        return value
    ref_mass = 1.0
    for r in refs:
        ref_mass *= float(np.sum(r))
    pos = plan_n > 0
    log_ref = np.zeros(plan_n.shape)
    for j in range(plan_n.ndim):
        with np.errstate(divide="ignore"):
            log_ref = log_ref + _reshape_to_axis(np.log(refs[j]), j, plan_n.ndim)
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = np.where(pos, plan_n * (np.log(plan_n) - log_ref), 0.0)
    kl = float(ent.sum() - plan_n.sum() + ref_mass)
    return value + epsilon * kl
