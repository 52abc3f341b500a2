import itertools
import unittest

import numpy as np

from vranlab.baselines import (
    DiscretizationGrid,
    DynamicOraclePolicy,
    StaticPolicy,
    normalized_cost,
    run_policy_episode,
    solve_dyno_stage,
    solve_stao,
)
from vranlab.cost_model import SPLITS, CostCoefficients, StageOutcome, total_cost_and_reward, xhaul_load
from vranlab.environment import (
    Action,
    TrafficTrace,
    UtilizationModel,
    VranEnvironment,
    check_constraints,
    generate_traffic,
    TrafficProfile,
)
from vranlab.errors import ConfigError, InfeasibleAllocationError


def brute_force_stage(model, demand, prev, step, coeff):
    """Exhaustive (split, x, x_hat) search through the scalar cost path"""
    _, prev_vdu, prev_vcu = prev
    xs = np.arange(0.0, model.vdu_capacity + 1e-9, step)
    xhs = np.arange(0.0, model.vcu_capacity + 1e-9, step)
    best, best_cost = None, np.inf
    for split, x, xh in itertools.product(SPLITS, xs, xhs):
        vdu_used, vcu_used = model.utilization(split, demand)
        action = Action(split, split, float(x), float(xh))
        outcome = StageOutcome(float(x), float(xh), vdu_used, vcu_used, prev_vdu, prev_vcu, split, split,
                               xhaul_load(split, demand), tuple(check_constraints(action, demand, model)))
        cost = total_cost_and_reward(outcome, coeff).total
        if cost < best_cost:
            best, best_cost = (split, float(x), float(xh)), cost
    return best, best_cost


def brute_force_stao(model, trace, step, coeff, xhaul_capacity=3000.0):
    """Exhaustive static (split, x, x_hat) search through the scalar cost path"""
    demands = [trace.stage_mean(n) for n in range(1, trace.num_stages + 1)]
    xs = np.arange(0.0, model.vdu_capacity + 1e-9, step)
    xhs = np.arange(0.0, model.vcu_capacity + 1e-9, step)
    best, best_cost = None, np.inf
    for split, x, xh in itertools.product(SPLITS, xs, xhs):
        if any(xhaul_load(split, d) > xhaul_capacity for d in demands):
            continue
        usage = [model.utilization(split, d) for d in demands]
        if x < max(u[0] for u in usage) or xh < max(u[1] for u in usage):
            continue
        cost = 0.0
        for d, (vdu_used, vcu_used) in zip(demands, usage):
            outcome = StageOutcome(float(x), float(xh), vdu_used, vcu_used, float(x), float(xh), 0, split,
                                   xhaul_load(split, d), (False, False, False))
            cost += total_cost_and_reward(outcome, coeff).total
        if cost < best_cost:
            best, best_cost = (split, float(x), float(xh)), cost
    return best, best_cost


class TestGrid(unittest.TestCase):
    def test_values_include_capacity(self):
        """Test the grid spans 0..cap and always ends at the capacity"""
        values = DiscretizationGrid(0.5).values(50.0)
        self.assertEqual(len(values), 101)
        self.assertEqual((values[0], values[-1]), (0.0, 50.0))
        self.assertEqual(DiscretizationGrid(3.0).values(50.0)[-2:].tolist(), [48.0, 50.0])

    def test_invalid_step(self):
        """Test non-positive steps are refused"""
        with self.assertRaises(ConfigError):
            DiscretizationGrid(0.0)


class TestDyno(unittest.TestCase):
    def setUp(self):
        self.model = UtilizationModel()
        self.coeff = CostCoefficients()

    def test_matches_exhaustive_enumeration(self):
        """Test the vectorized stage search against a scalar brute force"""
        grid = DiscretizationGrid(5.0)
        for demand in (3.0, 12.5, 30.0):
            for prev in ((1, 50.0, 50.0), (3, 10.0, 2.0), (4, 0.0, 15.0)):
                decision = solve_dyno_stage(self.model, demand, prev, grid, self.coeff)
                best, best_cost = brute_force_stage(self.model, demand, prev, 5.0, self.coeff)
                a = decision.action
                self.assertEqual((a.split, a.vdu_alloc, a.vcu_alloc), best)
                self.assertAlmostEqual(decision.breakdown.total, best_cost, places=9)

    def test_finer_grid_never_worse(self):
        """Test refining the grid cannot raise the stage cost"""
        prev = (1, 50.0, 50.0)
        for demand in (4.0, 17.0, 33.0):
            coarse = solve_dyno_stage(self.model, demand, prev, DiscretizationGrid(0.5), self.coeff)
            fine = solve_dyno_stage(self.model, demand, prev, DiscretizationGrid(0.25), self.coeff)
            self.assertLessEqual(fine.breakdown.total, coarse.breakdown.total + 1e-12)

    def test_reconfigures_every_stage(self):
        """Test DYNO always issues a split configuration"""
        trace = TrafficTrace(np.array([[5.0, 7.0], [20.0, 20.0], [33.0, 31.0]]))
        env = VranEnvironment(trace, self.model, self.coeff)
        run = run_policy_episode(DynamicOraclePolicy(self.model, DiscretizationGrid(0.5), self.coeff), env)
        self.assertEqual(run.reconfigurations, 3)
        self.assertEqual(len(run.records), 3)

    def test_oracle_ignores_noise(self):
        """Test DYNO plans with the noise-free model"""
        noisy = UtilizationModel(noise=0.05)
        policy = DynamicOraclePolicy(noisy, DiscretizationGrid(1.0), self.coeff)
        self.assertEqual(policy.model.noise, 0.0)


class TestStao(unittest.TestCase):
    def setUp(self):
        self.model = UtilizationModel()
        self.coeff = CostCoefficients()
        self.trace = TrafficTrace(np.array([[5.0, 7.0], [20.0, 20.0], [33.0, 31.0]]))

    def test_matches_exhaustive_enumeration(self):
        """Test STAO agrees with a scalar enumeration of every static configuration on a 5 RC grid"""
        diurnal = generate_traffic(9, TrafficProfile(kind="diurnal", num_stages=12, seconds_per_stage=20))
        traces = [self.trace, diurnal]
        coefficient_sets = [self.coeff, CostCoefficients(xhaul=0.01), CostCoefficients(overprovisioning=0.1)]
        for trace, coeff in itertools.product(traces, coefficient_sets):
            solution = solve_stao(self.model, trace, DiscretizationGrid(5.0), coeff)
            expected, cost = brute_force_stao(self.model, trace, 5.0, coeff)
            self.assertEqual((solution.split, solution.vdu_alloc, solution.vcu_alloc), expected)
            self.assertAlmostEqual(solution.episode_cost.total, cost, places=9)

    def test_covers_peak(self):
        """Test the static allocation covers every stage's utilization"""
        solution = solve_stao(self.model, self.trace, DiscretizationGrid(0.5), self.coeff)
        for n in range(1, 4):
            vdu, vcu = self.model.utilization(solution.split, self.trace.stage_mean(n))
            self.assertGreaterEqual(solution.vdu_alloc, vdu)
            self.assertGreaterEqual(solution.vcu_alloc, vcu)

    def test_replay_costs(self):
        """Test STAO pays neither declined demand nor reconfiguration when replayed"""
        solution = solve_stao(self.model, self.trace, DiscretizationGrid(0.5), self.coeff)
        run = run_policy_episode(StaticPolicy(solution), VranEnvironment(self.trace, self.model, self.coeff))
        total = run.total
        self.assertEqual(total.declined, 0.0)
        self.assertEqual(total.instantiation, 0.0)
        self.assertEqual(total.reconfiguration, 0.0)
        self.assertEqual(run.reconfigurations, 0)
        self.assertAlmostEqual(total.total, solution.episode_cost.total, places=9)

    def test_dyno_beats_stao_without_switching_costs(self):
        """Test DYNO is no worse than STAO when instantiation and reconfiguration are free"""
        coeff = CostCoefficients(instantiation=0.0, reconfiguration=0.0)
        trace = generate_traffic(5, TrafficProfile(kind="diurnal", num_stages=24, seconds_per_stage=30))
        grid = DiscretizationGrid(0.5)
        stao = run_policy_episode(StaticPolicy(solve_stao(self.model, trace, grid, coeff)),
                                  VranEnvironment(trace, self.model, coeff))
        dyno = run_policy_episode(DynamicOraclePolicy(self.model, grid, coeff),
                                  VranEnvironment(trace, self.model, coeff))
        self.assertLessEqual(dyno.total.total, stao.total.total + 1e-9)

    def test_infeasible(self):
        """Test STAO fails when no split fits the xHaul capacity"""
        with self.assertRaises(InfeasibleAllocationError):
            solve_stao(self.model, self.trace, DiscretizationGrid(0.5), self.coeff, xhaul_capacity=1.0)


class TestNormalizedCost(unittest.TestCase):
    def test_ratios(self):
        """Test normalization against the reference policy"""
        self.assertEqual(normalized_cost(12.5, 12.5), 1.0)
        self.assertEqual(normalized_cost(5.0, 10.0), 0.5)
        self.assertEqual(normalized_cost(0.0, 0.0), 1.0)
        self.assertTrue(np.isnan(normalized_cost(1.0, 0.0)))


if __name__ == "__main__":
    unittest.main()
