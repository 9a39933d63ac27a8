"""Scaling solver: fixed points, penalties, annealing, objective evaluation."""

import math

import numpy as np
import pytest

from hkbary import (
    GroundCostKind,
    MarginalPenalty,
    SolverConfig,
    SolverError,
    anneal,
    build_grid,
    least_cost_table,
    marginal_residuals,
    sinkhorn_general,
    unregularized_objective,
)

SOFT_HALF = [MarginalPenalty.soft(0.5), MarginalPenalty.soft(0.5)]

# least cost of the Dirac pair (0, 0.5) with equal weights on a fine grid,
# frozen from the refined pivot search in test_cost.py
CTILDE_MID = 0.06316210249493931


def dirac_pair_cost():
    g = build_grid(1, (0.0, 1.0), 401)
    tab = least_cost_table([np.array([0.0]), np.array([0.5])], g, [0.5, 0.5],
                           GroundCostKind.HK)
    return tab.values


class TestSinkhornGeneral:
    def test_identity_coupling_on_zero_diagonal(self):
        n = 6
        cost = np.full((n, n), 2.0)
        np.fill_diagonal(cost, 0.0)
        t = np.full(n, 1.0 / n)
        plan, report = sinkhorn_general(cost, [t, t], SOFT_HALF, 1e-2)
        assert report.unregularized_objective <= 1e-3
        off_diag = plan.values - np.diag(np.diag(plan.values))
        assert off_diag.sum() < 0.05 * plan.values.sum()

    def test_dirac_pair_mass_approaches_gibbs_factor(self):
        cost = dirac_pair_cost()
        cfg = SolverConfig(epsilon_final=1e-4)
        plan, report = anneal(cost, [np.array([1.0]), np.array([1.0])], SOFT_HALF, cfg)
        # one-atom optimum: t* = exp(-ctilde) = cos^2(0.25)
        assert plan.values[0, 0] == pytest.approx(math.exp(-CTILDE_MID), rel=1e-3)

    def test_all_infinite_cost_returns_zero_plan(self):
        cost = np.array([[math.inf]])
        plan, report = sinkhorn_general(cost, [np.array([1.0]), np.array([2.0])],
                                        SOFT_HALF, 1e-2)
        assert plan.values[0, 0] == 0.0
        assert report.unregularized_objective == pytest.approx(0.5 * 1.0 + 0.5 * 2.0)

    def test_rejects_nan_cost(self):
        with pytest.raises(SolverError):
            sinkhorn_general(np.array([[math.nan]]), [np.array([1.0]), np.array([1.0])],
                             SOFT_HALF, 1e-2)

    def test_rejects_all_free(self):
        with pytest.raises(SolverError):
            sinkhorn_general(np.zeros((2, 2)), [np.ones(2), np.ones(2)],
                             [MarginalPenalty.free(), MarginalPenalty.free()], 1e-2)

    def test_zero_mass_hard_target_with_counterpart_infeasible(self):
        plan, report = sinkhorn_general(
            np.zeros((2, 2)), [np.ones(2), np.zeros(2)],
            [MarginalPenalty.soft(1.0), MarginalPenalty.hard()], 1e-2)
        assert report.infeasible
        assert plan.values.sum() == 0.0

    def test_hard_axis_matches_exactly(self):
        rng = np.random.default_rng(0)
        cost = rng.uniform(0.0, 1.0, (5, 4))
        a, b = rng.uniform(0.2, 1.0, 5), rng.uniform(0.2, 1.0, 4)
        plan, report = sinkhorn_general(cost, [a, b],
                                        [MarginalPenalty.soft(1.0), MarginalPenalty.hard()],
                                        1e-2)
        gap = np.max(np.abs(plan.values.sum(axis=0) - b))
        assert gap <= 1e-12 * max(1.0, b.max())

    def test_infinite_cost_entries_carry_no_mass(self):
        cost = np.array([[0.0, math.inf], [math.inf, 0.0]])
        t = np.array([0.7, 0.3])
        plan, _ = sinkhorn_general(cost, [t, t], SOFT_HALF, 1e-2)
        assert plan.values[0, 1] == 0.0
        assert plan.values[1, 0] == 0.0

    def test_mass_homogeneity(self):
        rng = np.random.default_rng(1)
        cost = rng.uniform(0.0, 1.0, (4, 3))
        a, b = rng.uniform(0.2, 1.0, 4), rng.uniform(0.2, 1.0, 3)
        k = 3.0
        plan1, rep1 = sinkhorn_general(cost, [a, b], SOFT_HALF, 1e-2)
        plank, repk = sinkhorn_general(cost, [k * a, k * b], SOFT_HALF, 1e-2)
        assert np.allclose(plank.values, k * plan1.values, rtol=1e-6)
        assert repk.unregularized_objective == pytest.approx(
            k * rep1.unregularized_objective, rel=1e-6)

    def test_converged_flag_reflects_tolerance(self):
        cost = np.zeros((2, 2))
        t = np.array([0.5, 0.5])
        _, report = sinkhorn_general(cost, [t, t], SOFT_HALF, 1e-1)
        assert report.converged
        assert report.iterations < SolverConfig().max_iter

    def test_free_axis_keeps_zero_potential(self):
        rng = np.random.default_rng(2)
        cost = rng.uniform(0.0, 1.0, (3, 3, 5))
        targets = [rng.uniform(0.5, 1.0, 3), rng.uniform(0.5, 1.0, 3), np.full(5, 0.2)]
        pens = [MarginalPenalty.soft(0.5), MarginalPenalty.soft(0.5), MarginalPenalty.free()]
        plan, report = sinkhorn_general(cost, targets, pens, 1e-2)
        assert report.converged
        assert report.residuals[2] == 0.0


class TestAnneal:
    def test_single_stage_equals_direct_call(self):
        rng = np.random.default_rng(3)
        cost = rng.uniform(0.0, 1.0, (4, 4))
        t = rng.uniform(0.3, 1.0, 4)
        cfg = SolverConfig(epsilon_start=1e-2, epsilon_final=1e-2)
        plan_a, rep_a = anneal(cost, [t, t], SOFT_HALF, cfg)
        plan_d, rep_d = sinkhorn_general(cost, [t, t], SOFT_HALF, 1e-2, cfg)
        assert np.array_equal(plan_a.values, plan_d.values)
        assert rep_a.iterations == rep_d.iterations

    def test_dirac_pair_within_one_percent(self):
        cost = dirac_pair_cost()
        cfg = SolverConfig(epsilon_start=1e-1, epsilon_final=1e-3, epsilon_factor=0.5)
        plan, _ = anneal(cost, [np.array([1.0]), np.array([1.0])], SOFT_HALF, cfg)
        assert plan.values[0, 0] == pytest.approx(math.exp(-CTILDE_MID), rel=1e-2)

    def test_infeasible_zero_plan_every_stage(self):
        cost = np.full((2, 2), math.inf)
        cfg = SolverConfig()
        plan, report = anneal(cost, [np.ones(2), np.ones(2)], SOFT_HALF, cfg)
        assert plan.values.sum() == 0.0
        assert all(v == report.stage_objectives[0] for v in report.stage_objectives)

    def test_monotone_stage_objectives(self):
        rng = np.random.default_rng(4)
        cost = rng.uniform(0.0, 1.0, (5, 5))
        a, b = rng.uniform(0.3, 1.0, 5), rng.uniform(0.3, 1.0, 5)
        cfg = SolverConfig(epsilon_start=1e-1, epsilon_final=1e-3, epsilon_factor=0.5)
        _, report = anneal(cost, [a, b], SOFT_HALF, cfg)
        so = report.stage_objectives
        assert all(so[i + 1] <= so[i] + 1e-6 for i in range(len(so) - 1))

    def test_schedule_clamps_final_epsilon(self):
        cfg = SolverConfig(epsilon_start=1e-1, epsilon_final=1e-3, epsilon_factor=0.5)
        sched = cfg.schedule()
        assert sched[0] == 1e-1
        assert sched[-1] == 1e-3
        assert all(s2 < s1 for s1, s2 in zip(sched, sched[1:]))


class TestObjectiveAndResiduals:
    def test_zero_plan_objective_is_weighted_mass(self):
        cost = np.zeros((2, 3))
        targets = [np.array([1.0, 1.0]), np.array([0.5, 0.5, 0.5])]
        pens = [MarginalPenalty.soft(0.25), MarginalPenalty.soft(0.75)]
        v = unregularized_objective(np.zeros((2, 3)), cost, targets, pens)
        assert v == pytest.approx(0.25 * 2.0 + 0.75 * 1.5, rel=1e-14)

    def test_identity_plan_zero_cost_vanishes(self):
        t = np.array([0.4, 0.6])
        plan = np.diag(t)
        v = unregularized_objective(plan, np.zeros((2, 2)), [t, t], SOFT_HALF)
        assert v == pytest.approx(0.0, abs=1e-14)

    def test_dirac_pair_objective_matches_perspective(self):
        # one-atom plan with the optimal mass t* = sqrt(m1 m2) exp(-ctilde)
        cost = dirac_pair_cost()
        m1, m2 = 1.0, 2.0
        t_star = math.sqrt(m1 * m2) * math.exp(-CTILDE_MID)
        plan = np.array([[t_star]])
        v = unregularized_objective(plan, cost, [np.array([m1]), np.array([m2])], SOFT_HALF)
        assert v == pytest.approx((m1 + m2) / 2 - t_star, abs=1e-7)

    def test_infinite_cost_times_zero_mass_ignored(self):
        cost = np.array([[math.inf, 0.0]])
        plan = np.array([[0.0, 0.3]])
        v = unregularized_objective(plan, cost, [np.array([0.3]), np.array([0.2, 0.3])],
                                    [MarginalPenalty.soft(1.0), MarginalPenalty.soft(1.0)])
        assert math.isfinite(v)

    def test_residuals_identity_plan(self):
        t = np.array([0.4, 0.6])
        res = marginal_residuals(np.diag(t), [t, t], SOFT_HALF)
        assert res == pytest.approx([0.0, 0.0], abs=1e-14)

    def test_residuals_zero_plan_unit_masses(self):
        res = marginal_residuals(np.zeros((2, 2)), [np.array([0.5, 0.5])] * 2, SOFT_HALF)
        assert res == pytest.approx([1.0, 1.0], rel=1e-14)

    def test_residuals_hard_axis_after_projection(self):
        rng = np.random.default_rng(5)
        cost = rng.uniform(0.0, 1.0, (4, 4))
        a, b = rng.uniform(0.2, 1.0, 4), rng.uniform(0.2, 1.0, 4)
        pens = [MarginalPenalty.soft(1.0), MarginalPenalty.hard()]
        plan, _ = sinkhorn_general(cost, [a, b], pens, 1e-2)
        res = marginal_residuals(plan.values, [a, b], pens)
        assert res[1] <= 1e-12


class TestPenaltyAndConfigValidation:
    def test_soft_needs_positive_weight(self):
        with pytest.raises(SolverError):
            MarginalPenalty.soft(0.0)

    def test_config_epsilon_ordering(self):
        with pytest.raises(SolverError):
            SolverConfig(epsilon_start=1e-3, epsilon_final=1e-1)

    def test_config_factor_range(self):
        with pytest.raises(SolverError):
            SolverConfig(epsilon_factor=1.0)
