import tempfile
import unittest
from pathlib import Path

import numpy as np

from vranlab.environment import UtilizationModel
from vranlab.errors import ConfigError, EmptyDatasetError, UnknownSplitError
from vranlab.nn_core import MLP
from vranlab.resource_orchestrator import (
    AlphaLossConfig,
    OmegaDataset,
    OmegaModel,
    alpha_omc_gradient,
    alpha_omc_loss,
    evaluate_omega,
    predict,
    sample_dataset,
    train_omega,
)


def constant_omega(value, safety_margin=0.0):
    """Omega whose regressor always outputs ``value``"""
    regressor = MLP((1, 1), [np.zeros((1, 1))], [np.array([value])])
    return OmegaModel(regressor, safety_margin=safety_margin)


class TestAlphaLoss(unittest.TestCase):
    def setUp(self):
        self.cfg = AlphaLossConfig()

    def test_midpoint(self):
        """Test zero error costs exactly alpha / 2"""
        self.assertEqual(alpha_omc_loss(7.0, 7.0, self.cfg), 1.0)

    def test_overprovisioning_branch(self):
        """Test large positive error costs about the error itself"""
        cfg = AlphaLossConfig(alpha=0.6, width=0.25)
        self.assertAlmostEqual(alpha_omc_loss(15.0, 5.0, cfg), 10.0, places=6)

    def test_underprovisioning_branch(self):
        """Test large negative error saturates near alpha"""
        loss = alpha_omc_loss(0.0, 10.0, self.cfg)
        self.assertAlmostEqual(loss, 2.0 + 0.01 * 10.0, places=6)
        self.assertLess(abs(loss - 2.0), 0.05 * 2.0)

    def test_non_negative_and_biased_upward(self):
        """Test the loss is non-negative and minimized at a small positive error"""
        e = np.linspace(-5.0, 5.0, 10001)
        loss = alpha_omc_loss(e, np.zeros_like(e), self.cfg)
        self.assertTrue(np.all(loss >= 0))
        best = e[np.argmin(loss)]
        self.assertGreater(best, 0.0)
        self.assertLess(best, 1.0)

    def test_minimum_positive_at_edge_of_allowed_range(self):
        """Test alpha just above twice the width still puts the minimum at positive error"""
        e = np.linspace(-10.0, 10.0, 40001)
        for width, slope in ((1.0, 0.01), (0.25, 0.01), (1.0, 0.0)):
            cfg = AlphaLossConfig(alpha=2.01 * width, width=width, underprovision_slope=slope)
            loss = alpha_omc_loss(e, np.zeros_like(e), cfg)
            self.assertGreater(e[np.argmin(loss)], 0.0, f"width {width} slope {slope}")
            self.assertTrue(np.all(np.diff(loss[e <= 0.0]) < 0.0))
            self.assertLess(alpha_omc_gradient(0.0, 0.0, cfg), 0.0)

    def test_gradient_matches_finite_differences(self):
        """Test the analytic derivative against central differences"""
        rng = np.random.default_rng(0)
        h = 1e-6
        for _ in range(25):
            cfg = AlphaLossConfig(alpha=rng.uniform(0.6, 4.0), width=rng.uniform(0.05, 0.25))
            pred, actual = rng.uniform(0, 20), rng.uniform(0, 20)
            numeric = (alpha_omc_loss(pred + h, actual, cfg) - alpha_omc_loss(pred - h, actual, cfg)) / (2 * h)
            analytic = alpha_omc_gradient(pred, actual, cfg)
            self.assertLess(abs(analytic - numeric), 1e-4 * max(1.0, abs(numeric)))

    def test_invalid_config(self):
        """Test non-positive parameters and alpha not above twice the width"""
        with self.assertRaises(ConfigError):
            AlphaLossConfig(alpha=0.0)
        with self.assertRaises(ConfigError):
            AlphaLossConfig(width=-1.0)
        with self.assertRaises(ConfigError):
            AlphaLossConfig(alpha=0.1, width=0.25)
        with self.assertRaises(ConfigError):
            AlphaLossConfig(alpha=0.5, width=0.25)
        with self.assertRaises(ConfigError):
            AlphaLossConfig(alpha=1.0, width=1.0)


class TestPredict(unittest.TestCase):
    def test_keep_returns_previous(self):
        """Test configuration 0 passes the previous allocation through"""
        self.assertEqual(predict(constant_omega(9.0), 20.0, 0, (7.0, 3.0)), (7.0, 3.0))

    def test_full_centralization_idles_vdu(self):
        """Test configuration 4 allocates nothing at the vDU"""
        for demand in (0.0, 15.0, 35.0):
            self.assertEqual(predict(constant_omega(9.0), demand, 4, (1.0, 1.0))[0], 0.0)

    def test_scaling_with_margin(self):
        """Test split 1 gets base * (1 + margin) at the vDU and nothing at the vCU"""
        vdu, vcu = predict(constant_omega(10.0, safety_margin=0.1), 12.0, 1, (0.0, 0.0))
        self.assertAlmostEqual(vdu, 11.0)
        self.assertEqual(vcu, 0.0)

    def test_ratio_follows_scales(self):
        """Test the vDU/vCU ratio equals rho_du / rho_cu"""
        vdu, vcu = predict(constant_omega(10.0), 12.0, 2, (0.0, 0.0))
        self.assertAlmostEqual(vdu / vcu, 0.8 / 0.1)

    def test_negative_output_clamped_and_capped(self):
        """Test allocations are clamped to [0, capacity]"""
        self.assertEqual(predict(constant_omega(-3.0), 5.0, 1, (0.0, 0.0)), (0.0, 0.0))
        self.assertEqual(predict(constant_omega(80.0), 5.0, 1, (0.0, 0.0))[0], 50.0)

    def test_unknown_configuration(self):
        """Test configurations outside 0..4 are rejected"""
        with self.assertRaises(UnknownSplitError):
            predict(constant_omega(1.0), 5.0, 7, (0.0, 0.0))

    def test_checkpoint_reload(self):
        """Test a reloaded model predicts identically"""
        model = OmegaModel.create(np.random.default_rng(4), safety_margin=0.05)
        with tempfile.TemporaryDirectory() as tmp:
            path = model.save(Path(tmp) / "omega.npz")
            loaded = OmegaModel.load(path)
        for demand in (0.0, 3.3, 17.5, 35.0):
            for config in (1, 2, 3, 4):
                self.assertEqual(predict(model, demand, config, (0.0, 0.0)),
                                 predict(loaded, demand, config, (0.0, 0.0)))
        self.assertEqual(loaded.safety_margin, 0.05)


class TestDataset(unittest.TestCase):
    def test_base_targets_undo_split_scaling(self):
        """Test vDU usage is divided by rho_du, and vCU usage for full centralization"""
        data = OmegaDataset.from_rows([(1, 10.0, 8.0, 0.0), (2, 10.0, 8.0, 1.0), (4, 10.0, 0.0, 4.0)])
        np.testing.assert_allclose(data.base_targets((1.0, 0.8, 0.65, 0.0), (0.0, 0.1, 0.175, 0.5)),
                                   [8.0, 10.0, 8.0])

    def test_sampled_dataset(self):
        """Test sampled demands, splits and noise-free targets"""
        model = UtilizationModel()
        data = sample_dataset(model, 500, np.random.default_rng(0), noise=False)
        self.assertEqual(len(data), 500)
        self.assertTrue(np.all((data.demands >= 0) & (data.demands <= 35.0)))
        self.assertEqual(set(data.splits.tolist()), {1, 2, 3, 4})
        np.testing.assert_allclose(data.base_targets(model.rho_du, model.rho_cu), model.base_curve(data.demands))

    def test_empty_dataset(self):
        """Test training without samples raises"""
        model = OmegaModel.create(np.random.default_rng(0))
        with self.assertRaises(EmptyDatasetError):
            train_omega(model, OmegaDataset.from_rows([]), AlphaLossConfig(), 1, 8, 1e-3, np.random.default_rng(0))


class TestTraining(unittest.TestCase):
    def test_constant_target(self):
        """Test identical samples drive the regressor to just above the target"""
        truth = UtilizationModel()
        target = float(truth.base_curve(10.0))
        data = OmegaDataset.from_rows([(1, 10.0, target, 0.0)] * 256)
        model = OmegaModel.create(np.random.default_rng(1), hidden=(16, 16))
        result = train_omega(model, data, AlphaLossConfig(width=0.1), epochs=300, batch_size=64,
                             learning_rate=1e-2, rng=np.random.default_rng(2))
        prediction = float(model.base([10.0])[0])
        self.assertGreater(prediction, target - 0.1)
        self.assertLess(prediction, target + 1.0)
        self.assertLess(result.loss_history[-1], result.loss_history[0])

    def test_fits_noiseless_curve(self):
        """Test held-out error under 5% of the curve range, biased towards overprovisioning"""
        truth = UtilizationModel()
        rng = np.random.default_rng(3)
        data = sample_dataset(truth, 1024, rng, noise=False)
        model = OmegaModel.create(rng)
        train_omega(model, data, AlphaLossConfig(width=0.1), epochs=500, batch_size=32,
                    learning_rate=3e-3, rng=rng)
        report = evaluate_omega(model, truth, np.linspace(0.0, 35.0, 351))
        self.assertLess(report.relative_error, 0.05)
        self.assertLess(report.underprovision_rate, report.overprovision_rate)

    def test_larger_penalty_underprovisions_no_more(self):
        """Test doubling alpha does not raise the held-out underprovisioning rate"""
        truth = UtilizationModel()
        data = sample_dataset(truth, 1024, np.random.default_rng(3), noise=False)
        demands = np.linspace(0.0, 35.0, 351)
        rates = []
        for alpha in (0.3, 0.6):
            model = OmegaModel.create(np.random.default_rng(4))
            train_omega(model, data, AlphaLossConfig(alpha=alpha, width=0.1), epochs=400, batch_size=32,
                        learning_rate=3e-3, rng=np.random.default_rng(5))
            rates.append(evaluate_omega(model, truth, demands).underprovision_rate)
        self.assertLessEqual(rates[1], rates[0])


if __name__ == "__main__":
    unittest.main()
