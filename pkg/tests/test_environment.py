import tempfile
import unittest
from pathlib import Path

import numpy as np

from vranlab.cost_model import CostCoefficients, StageOutcome, total_cost_and_reward, xhaul_load
from vranlab.environment import (
    Action,
    NetworkState,
    TrafficProfile,
    TrafficTrace,
    UtilizationModel,
    UtilizationSamples,
    VranEnvironment,
    build_state,
    check_constraints,
    classify_reconfiguration,
    generate_traffic,
    window_stats,
    write_samples_csv,
)
from vranlab.errors import ConfigError, ContractViolation, EpisodeExhaustedError, UnknownSplitError


def flat_trace(demand, stages=4, seconds=6):
    return TrafficTrace(np.full((stages, seconds), float(demand)))


class TestTraffic(unittest.TestCase):
    def test_zero_rate_gives_zero_trace(self):
        """Test a constant profile at 0 Mbps generates no traffic"""
        trace = generate_traffic(1, TrafficProfile(kind="constant", rate_mbps=0.0, num_stages=5))
        self.assertEqual(trace.demands.shape, (5, 60))
        self.assertFalse(trace.demands.any())

    def test_seed_reproducibility(self):
        """Test the same seed regenerates a bit-identical trace"""
        profile = TrafficProfile(num_stages=10)
        np.testing.assert_array_equal(generate_traffic(7, profile).demands, generate_traffic(7, profile).demands)
        self.assertFalse(np.array_equal(generate_traffic(7, profile).demands, generate_traffic(8, profile).demands))

    def test_long_run_mean(self):
        """Test the empirical mean demand is within 5% of the profile rate"""
        trace = generate_traffic(3, TrafficProfile(kind="constant", rate_mbps=20.0, num_stages=120))
        self.assertLess(abs(trace.demands.mean() - 20.0), 0.05 * 20.0)
        self.assertTrue(np.all(trace.demands >= 0))

    def test_profiles_stay_within_peak(self):
        """Test diurnal and ramp means lie in [0, peak]"""
        rng = np.random.default_rng(0)
        for kind in ("diurnal", "ramp"):
            means = TrafficProfile(kind=kind, num_stages=50).means(rng)
            self.assertEqual(len(means), 50)
            self.assertTrue(np.all((means >= 0) & (means <= 35.0)))
        ramp = TrafficProfile(kind="ramp", num_stages=5, stage_jitter=0.0).means(rng)
        np.testing.assert_allclose(ramp, [5.0, 12.5, 20.0, 27.5, 35.0])

    def test_invalid_profiles(self):
        """Test negative rates and unknown kinds are configuration errors"""
        with self.assertRaises(ConfigError):
            generate_traffic(0, TrafficProfile(kind="constant", rate_mbps=-1.0))
        with self.assertRaises(ConfigError):
            generate_traffic(0, TrafficProfile(kind="weekly"))
        with self.assertRaises(ConfigError):
            generate_traffic(0, TrafficProfile(kind="custom", num_stages=3, stage_means=(1.0, 2.0)))

    def test_trace_csv_round_trip(self):
        """Test a trace survives writing and reading its CSV"""
        trace = generate_traffic(5, TrafficProfile(num_stages=3, seconds_per_stage=4))
        with tempfile.TemporaryDirectory() as tmp:
            path = trace.to_csv(Path(tmp) / "trace.csv")
            self.assertEqual(path.read_text().splitlines()[0], "stage,second,demand_mbps")
            np.testing.assert_array_equal(TrafficTrace.from_csv(path).demands, trace.demands)

    def test_trace_csv_rejects_incomplete_grids(self):
        """Test zero indices, duplicates and holes in a trace CSV are errors"""
        bad = {
            "zero stage": "0,1,5.0\n2,1,7.0\n",
            "zero second": "1,0,5.0\n1,1,7.0\n",
            "duplicate": "1,1,5.0\n1,1,6.0\n",
            "hole": "1,1,5.0\n2,2,7.0\n1,2,1.0\n",
            "malformed": "1,1,fast\n",
        }
        with tempfile.TemporaryDirectory() as tmp:
            for label, body in bad.items():
                path = Path(tmp) / f"{label.replace(' ', '_')}.csv"
                path.write_text("stage,second,demand_mbps\n" + body)
                with self.assertRaises(ContractViolation, msg=label):
                    TrafficTrace.from_csv(path)

    def test_trace_csv_accepts_shuffled_rows(self):
        """Test row order does not matter when the grid is complete"""
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "trace.csv"
            path.write_text("stage,second,demand_mbps\n2,2,4.0\n1,1,1.0\n2,1,3.0\n1,2,2.0\n")
            np.testing.assert_array_equal(TrafficTrace.from_csv(path).demands, [[1.0, 2.0], [3.0, 4.0]])

    def test_trace_rejects_negative_demand(self):
        """Test traces must be non-negative"""
        with self.assertRaises(ContractViolation):
            TrafficTrace(np.array([[1.0, -0.5]]))

    def test_stage_out_of_range(self):
        """Test stage indices are 1-based and bounded"""
        trace = flat_trace(3.0, stages=2)
        with self.assertRaises(ContractViolation):
            trace.stage(0)
        with self.assertRaises(ContractViolation):
            trace.stage(3)


class TestUtilization(unittest.TestCase):
    def setUp(self):
        self.model = UtilizationModel()
        self.demands = np.linspace(0.0, 35.0, 3501)

    def test_envelope(self):
        """Test S1 vDU stays under 25 RC and S4 vCU under 13 RC without noise"""
        s1 = [self.model.utilization(1, d)[0] for d in self.demands]
        s4 = [self.model.utilization(4, d)[1] for d in self.demands]
        self.assertLessEqual(max(s1), 25.0)
        self.assertLessEqual(max(s4), 13.0)

    def test_non_monotonic(self):
        """Test the base curve both rises and falls on [0, 35]"""
        slopes = np.diff(self.model.base_curve(self.demands))
        self.assertTrue(np.any(slopes > 0))
        self.assertTrue(np.any(slopes < 0))

    def test_split_extremes(self):
        """Test S4 leaves the vDU idle and S1 the vCU"""
        for demand in (0.0, 12.3, 35.0):
            self.assertEqual(self.model.utilization(4, demand)[0], 0.0)
            self.assertEqual(self.model.utilization(1, demand)[1], 0.0)

    def test_noise_is_bounded_and_optional(self):
        """Test noise stays within 2% and is off without an rng"""
        rng = np.random.default_rng(0)
        clean = self.model.utilization(2, 20.0)
        self.assertEqual(clean, self.model.utilization(2, 20.0))
        for _ in range(200):
            noisy = self.model.utilization(2, 20.0, rng)
            for a, b in zip(noisy, clean):
                self.assertLessEqual(abs(a - b), 0.02 * b + 1e-12)

    def test_invalid_inputs(self):
        """Test unknown splits, negative demand and bad scales"""
        with self.assertRaises(UnknownSplitError):
            self.model.utilization(0, 10.0)
        with self.assertRaises(ContractViolation):
            self.model.utilization(1, -1.0)
        with self.assertRaises(ConfigError):
            UtilizationModel(rho_du=(1.0, 0.8, 0.9, 0.0))

    def test_measured_samples_replace_curve(self):
        """Test utilization interpolates measured samples per split"""
        rows = [(s, d, 10.0 * s + d, d / 2) for s in (1, 2, 3, 4) for d in (0.0, 10.0, 20.0)]
        model = UtilizationModel(samples=UtilizationSamples.from_rows(rows))
        self.assertEqual(model.utilization(3, 10.0), (40.0, 5.0))
        self.assertAlmostEqual(model.utilization(2, 15.0)[0], 35.0)
        self.assertAlmostEqual(model.utilization(2, 15.0)[1], 7.5)

    def test_samples_need_every_split(self):
        """Test a sample table missing a split is rejected"""
        with self.assertRaises(ContractViolation):
            UtilizationSamples.from_rows([(1, 0.0, 1.0, 0.0), (2, 0.0, 1.0, 0.0)])

    def test_samples_csv_round_trip(self):
        """Test the sample table written to CSV reproduces the model"""
        rows = self.model.sample_table(np.linspace(0.0, 35.0, 8))
        with tempfile.TemporaryDirectory() as tmp:
            path = write_samples_csv(Path(tmp) / "samples.csv", rows)
            loaded = UtilizationSamples.from_csv(path)
        self.assertEqual(loaded.rows(), rows)


class TestStateAndConstraints(unittest.TestCase):
    def setUp(self):
        self.model = UtilizationModel()

    def test_constant_window(self):
        """Test constant per-second demand has zero variance"""
        self.assertEqual(window_stats(flat_trace(4.0), 1), (4.0, 0.0))

    def test_alternating_window(self):
        """Test demands alternating 0 and 2c give mean c and variance c^2"""
        trace = TrafficTrace(np.array([[0.0, 6.0] * 3, [1.0] * 6]))
        mean, variance = window_stats(trace, 1)
        self.assertAlmostEqual(mean, 3.0)
        self.assertAlmostEqual(variance, 9.0)
        state = build_state(trace, 2, Action(2, 2, 8.0, 1.0), self.model)
        self.assertEqual(state, NetworkState(1.0, 3.0, 9.0, 8.0, 1.0, 2))

    def test_initial_state(self):
        """Test stage 1 starts from S1 at full capacity with empty window statistics"""
        state = build_state(flat_trace(12.0), 1, None, self.model)
        np.testing.assert_array_equal(state.as_vector(), [12.0, 0.0, 0.0, 50.0, 50.0, 1.0])

    def test_constraints(self):
        """Test capacity and transport checks"""
        self.assertEqual(tuple(check_constraints(Action(1, 1, 20.0, 0.0), 30.0, self.model)), (False, False, False))
        self.assertTrue(check_constraints(Action(1, 1, 51.0, 0.0), 10.0, self.model).vdu_over_capacity)
        self.assertTrue(check_constraints(Action(2, 2, 5.0, 50.5), 10.0, self.model).vcu_over_capacity)
        v = check_constraints(Action(4, 4, 0.0, 10.0), 10.0, self.model, xhaul_capacity=1000.0)
        self.assertTrue(v.xhaul_over_capacity)

    def test_action_invariants(self):
        """Test configuration i must deploy split i"""
        with self.assertRaises(ContractViolation):
            Action(3, 1, 1.0, 1.0)
        with self.assertRaises(ContractViolation):
            Action(9, 1, 1.0, 1.0)
        with self.assertRaises(ContractViolation):
            Action(1, 1, -1.0, 1.0)

    def test_classification(self):
        """Test the reconfiguration taxonomy"""
        state = NetworkState(10.0, 10.0, 0.0, 8.0, 2.0, 2)
        self.assertEqual(classify_reconfiguration(state, Action.keep(state)), "keep")
        self.assertEqual(classify_reconfiguration(state, Action(3, 3, 8.0, 2.0)), "split_change")
        self.assertEqual(classify_reconfiguration(state, Action(2, 2, 9.0, 2.0)), "resize")
        self.assertEqual(classify_reconfiguration(state, Action(2, 2, 8.0, 2.0)), "reconfigure_noop")


class TestStep(unittest.TestCase):
    def setUp(self):
        self.model = UtilizationModel()
        self.coeff = CostCoefficients()
        self.trace = TrafficTrace(np.array([[5.0, 7.0], [20.0, 20.0], [33.0, 31.0]]))
        self.env = VranEnvironment(self.trace, self.model, self.coeff)

    def test_keep_at_capacity(self):
        """Test o = 0 every stage only pays overprovisioning and xHaul"""
        state = self.env.reset()
        while not self.env.done:
            state = self.env.step(Action.keep(state)).next_state
        total = self.env.episode_cost()
        self.assertEqual(total.declined, 0.0)
        self.assertEqual(total.instantiation, 0.0)
        self.assertEqual(total.reconfiguration, 0.0)
        self.assertGreater(total.overprovisioning, 0.0)
        self.assertAlmostEqual(total.xhaul, 0.0005 * (6.0 + 20.0 + 32.0))

    def test_exact_allocation(self):
        """Test allocating exactly the utilization avoids over- and underprovisioning"""
        state = self.env.reset()
        y, yh = self.model.utilization(3, state.demand)
        result = self.env.step(Action(3, 3, y, yh))
        self.assertEqual(result.breakdown.overprovisioning, 0.0)
        self.assertEqual(result.breakdown.declined, 0.0)

    def test_scripted_episode_matches_hand_replay(self):
        """Test the episode cost equals independently evaluated stage costs"""
        script = [Action(2, 2, 9.0, 1.0), None, Action(4, 4, 0.0, 12.0)]
        state = self.env.reset()
        expected = 0.0
        prev = (1, 50.0, 50.0)
        for n, planned in enumerate(script, start=1):
            action = planned or Action(0, prev[0], prev[1], prev[2])
            demand = self.trace.stage_mean(n)
            y, yh = self.model.utilization(action.split, demand)
            outcome = StageOutcome(action.vdu_alloc, action.vcu_alloc, y, yh, prev[1], prev[2], action.config,
                                   action.split, xhaul_load(action.split, demand),
                                   tuple(check_constraints(action, demand, self.model)))
            expected += total_cost_and_reward(outcome, self.coeff).total
            state = self.env.step(action).next_state
            prev = (action.split, action.vdu_alloc, action.vcu_alloc)
        self.assertAlmostEqual(self.env.episode_cost().total, expected, places=9)
        self.assertEqual([r.kind for r in self.env.history], ["split_change", "keep", "split_change"])

    def test_next_state_and_terminal(self):
        """Test the next state carries the executed action and the finished window"""
        state = self.env.reset()
        result = self.env.step(Action(2, 2, 9.0, 1.0))
        self.assertFalse(result.done)
        self.assertEqual(result.next_state, NetworkState(20.0, 6.0, 1.0, 9.0, 1.0, 2))
        state = self.env.step(Action.keep(result.next_state)).next_state
        last = self.env.step(Action.keep(state))
        self.assertTrue(last.done)
        self.assertEqual(last.next_state.demand, 32.0)
        self.assertEqual(last.next_state.mean_demand, 32.0)
        self.assertEqual(last.next_state.demand_variance, 1.0)

    def test_exhausted_episode(self):
        """Test stepping past the last stage raises"""
        state = self.env.reset()
        for _ in range(3):
            state = self.env.step(Action.keep(state)).next_state
        with self.assertRaises(EpisodeExhaustedError):
            self.env.step(Action.keep(state))

    def test_keep_must_match_previous(self):
        """Test o = 0 with altered allocations is refused"""
        self.env.reset()
        with self.assertRaises(ContractViolation):
            self.env.step(Action(0, 1, 10.0, 50.0))

    def test_state_vectors_are_finite(self):
        """Test every observed state has six finite entries"""
        env = VranEnvironment(generate_traffic(2, TrafficProfile(num_stages=20)), self.model, self.coeff,
                              rng=np.random.default_rng(0))
        state = env.reset()
        rng = np.random.default_rng(1)
        while not env.done:
            self.assertEqual(state.as_vector().shape, (6,))
            self.assertTrue(np.all(np.isfinite(state.as_vector())))
            split = int(rng.integers(1, 5))
            state = env.step(Action(split, split, 10.0, 5.0)).next_state


if __name__ == "__main__":
    unittest.main()
