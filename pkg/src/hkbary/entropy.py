"""Scalar entropy functions, their Legendre conjugates, and measure divergences.

The forward entropy is the relative-entropy integrand s log s - s + 1; the
reverse entropy s - log s - 1 arises from it by the perspective identity
R(s) = s * F(1/s).  Keep the two slope constants apart: the recession slope
of F is +inf, while the reverse recession slope R_INF_SLOPE = F(0) = 1.
"""

from __future__ import annotations

import enum
import math

import numpy as np
from scipy.special import xlogy

from .measure import SUPPORT_RTOL, DiscreteMeasure, GridError

# Recession slope of the forward entropy: lim F(s)/s as s -> inf.
F_INF_SLOPE = math.inf

# Reverse recession slope, R_inf' = F(0) = 1.  Used for singular mass terms.
R_INF_SLOPE = 1.0

# Per-point absolute tolerance deciding hard marginal equality.
HARD_EQUALITY_ATOL = 1e-12


class EntropyKind(enum.Enum):
    KL = "kl"
    HARD_EQUALITY = "hard_equality"


def f_entropy(s: float) -> float:
    """Forward entropy s log s - s + 1, with the limit value 1 at s = 0."""
    if s < 0:
        raise ValueError(f"f_entropy requires s >= 0, got {s}")
    if s == 0.0:
        return 1.0
    return s * math.log(s) - s + 1.0


def r_entropy(s: float) -> float:
    """Reverse entropy s - log s - 1; +inf at s = 0 (the forward slope)."""
    if s < 0:
        raise ValueError(f"r_entropy requires s >= 0, got {s}")
    if s == 0.0:
        return math.inf
    return s - math.log(s) - 1.0


def f_conjugate(phi: float) -> float:
    """Legendre conjugate of the forward entropy: exp(phi) - 1."""
    try:
        return math.exp(phi) - 1.0
    except OverflowError:
        return math.inf


def r_conjugate(psi: float) -> float:
    """Legendre conjugate of the reverse entropy: -log(1 - psi) for psi < 1."""
    if psi >= 1.0:
        return math.inf
    return -math.log1p(-psi)


def kl_divergence(marginal: np.ndarray, reference: np.ndarray) -> float:
    """Entropy functional of ``marginal`` against ``reference`` (array level).

    Sum of F(sigma) * reference over the reference support plus +inf times
    any marginal mass escaping it.  kl_divergence(0, mu) = mu.sum() exactly.
    """
    g = np.asarray(marginal, dtype=float)
    r = np.asarray(reference, dtype=float)
    r_tot = float(r.sum())
    g_tot = float(g.sum())
    r_supp = r > SUPPORT_RTOL * r_tot if r_tot > 0 else np.zeros_like(r, dtype=bool)
    escaped = float(g[~r_supp].sum())
    if escaped > SUPPORT_RTOL * max(g_tot, r_tot):
        return math.inf
    gs, rs = g[r_supp], r[r_supp]
    # xlogy handles the g = 0 points (F(0) * r = r) without warnings
    return float(np.sum(xlogy(gs, gs / rs) - gs + rs))


def hard_gap(marginal: np.ndarray, reference: np.ndarray) -> float:
    """Sup-norm gap between two mass vectors."""
    g = np.asarray(marginal, dtype=float)
    r = np.asarray(reference, dtype=float)
    if g.size == 0 and r.size == 0:
        return 0.0
    return float(np.max(np.abs(g - r)))


def divergence(marginal: DiscreteMeasure, reference: DiscreteMeasure, kind: EntropyKind) -> float:
    """Measure-level divergence: KL-type entropy functional or hard equality."""
    if marginal.grid != reference.grid:
        raise GridError("divergence requires measures on the same grid")
    if kind is EntropyKind.KL:
        return kl_divergence(marginal.masses, reference.masses)
    if kind is EntropyKind.HARD_EQUALITY:
        return 0.0 if hard_gap(marginal.masses, reference.masses) <= HARD_EQUALITY_ATOL else math.inf
    raise ValueError(f"unknown entropy kind {kind!r}")
