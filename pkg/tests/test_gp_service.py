import math
import tempfile
import unittest
from pathlib import Path

import numpy as np

from app.errors import InvalidArgument
from services.check_service import explicit_posterior
from services.gp_service import (
    GpDataset,
    GpHyper,
    dataset_to_csv,
    fit,
    import_dataset_csv,
    kernel,
    mean_within_bounds,
    predict,
    predict_batch,
    predict_grad,
    prior_model,
    select_inducing,
    select_inducing_time,
)

FEATURES = (0.0, 0.25, 0.5, 0.75, 1.0)


def _dataset(inputs, targets, max_points: int = 0) -> GpDataset:
    dataset = GpDataset(max_points=max_points)
    for k, (z, y) in enumerate(zip(inputs, targets, strict=True)):
        dataset.append(k, float(z), float(y))
    return dataset


class KernelTest(unittest.TestCase):
    def test_kernel_examples(self) -> None:
        hyper = GpHyper()
        self.assertAlmostEqual(kernel(hyper, 0.4, 0.4), 0.33)
        self.assertAlmostEqual(kernel(hyper, 0.0, 0.3), 0.33 * math.exp(-0.5), places=12)
        self.assertAlmostEqual(kernel(hyper, 0.0, 0.3), 0.20016, places=5)
        self.assertLess(kernel(hyper, 0.0, 3.0), 1e-12)

    def test_invalid_hyperparameters(self) -> None:
        with self.assertRaises(InvalidArgument):
            GpHyper(sigma_f2=0.0)
        with self.assertRaises(InvalidArgument):
            GpHyper(length_scale=-1.0)
        with self.assertRaises(InvalidArgument):
            GpHyper(sigma_v2=-1e-3)


class PosteriorTest(unittest.TestCase):
    def test_prior_predictions(self) -> None:
        model = prior_model(GpHyper())
        for z in (-2.0, 0.0, 0.7):
            self.assertEqual(predict_grad(model, z), (0.0, 0.33, 0.0, 0.0))
        self.assertTrue(fit(GpDataset(), GpHyper()).is_prior)

    def test_noise_free_interpolation(self) -> None:
        mean, variance = predict(fit(_dataset([0.5], [0.2]), GpHyper()), 0.5)
        self.assertAlmostEqual(mean, 0.2, delta=1e-6)
        self.assertLessEqual(variance, 1e-6)

    def test_far_query_reverts_to_prior(self) -> None:
        y = np.array([0.3, -0.2, 0.5, 0.1, -0.4])
        model = fit(_dataset(FEATURES, y), GpHyper())
        mean, variance = predict(model, 4.0)
        self.assertLessEqual(abs(mean), 1e-9 * np.linalg.norm(y))
        self.assertGreaterEqual(variance, 0.33 - 1e-9)

    def test_matches_explicit_inverse(self) -> None:
        rng = np.random.default_rng(7)
        hyper = GpHyper(sigma_f2=0.5, length_scale=0.3)
        z = np.array(FEATURES)
        y = rng.normal(0.0, 0.5, z.size)
        query = rng.uniform(-0.5, 1.5, 40)
        mean, variance, _, _ = predict_batch(fit(_dataset(z, y), hyper), query)
        oracle_mean, oracle_var = explicit_posterior(hyper, z, y, query)
        np.testing.assert_allclose(mean, oracle_mean, atol=1e-9)
        np.testing.assert_allclose(variance, oracle_var, atol=1e-9)

    def test_variance_is_bounded_by_signal_variance(self) -> None:
        rng = np.random.default_rng(11)
        model = fit(_dataset(FEATURES, rng.normal(size=5)), GpHyper())
        _, variance, _, _ = predict_batch(model, np.linspace(-3.0, 4.0, 300))
        self.assertTrue(np.all(variance >= 0.0))
        self.assertTrue(np.all(variance <= 0.33 + 1e-12))

    def test_more_data_never_increases_variance(self) -> None:
        hyper = GpHyper()
        query = np.linspace(-0.5, 1.5, 50)
        _, before, _, _ = predict_batch(fit(_dataset([0.0, 0.5], [0.1, 0.2]), hyper), query)
        _, after, _, _ = predict_batch(fit(_dataset([0.0, 0.5, 1.0], [0.1, 0.2, 0.0]), hyper), query)
        self.assertTrue(np.all(after <= before + 1e-12))

    def test_permutation_invariance(self) -> None:
        y = [0.3, -0.2, 0.5, 0.1, -0.4]
        order = [3, 0, 4, 1, 2]
        query = np.linspace(-0.2, 1.2, 25)
        first = predict_batch(fit(_dataset(FEATURES, y), GpHyper()), query)
        second = predict_batch(fit(_dataset([FEATURES[i] for i in order], [y[i] for i in order]), GpHyper()), query)
        for a, b in zip(first, second, strict=True):
            np.testing.assert_allclose(a, b, atol=1e-10)

    def test_derivatives_match_finite_differences(self) -> None:
        rng = np.random.default_rng(5)
        model = fit(_dataset(FEATURES, rng.normal(0.0, 0.3, 5)), GpHyper())
        h = 1e-5
        for z in rng.uniform(-0.3, 1.3, 10):
            _, _, d_mean, d_var = predict_grad(model, float(z))
            up_mean, up_var = predict(model, float(z) + h)
            dn_mean, dn_var = predict(model, float(z) - h)
            fd_mean = (up_mean - dn_mean) / (2 * h)
            fd_var = (up_var - dn_var) / (2 * h)
            self.assertLessEqual(abs(d_mean - fd_mean), 1e-6 * max(1.0, abs(fd_mean)))
            self.assertLessEqual(abs(d_var - fd_var), 1e-6 * max(1.0, abs(fd_var)))

    def test_variance_is_stationary_at_training_point(self) -> None:
        _, _, _, d_var = predict_grad(fit(_dataset([0.5], [0.2]), GpHyper()), 0.5)
        self.assertAlmostEqual(d_var, 0.0, places=9)

    def test_unknown_mode(self) -> None:
        with self.assertRaises(InvalidArgument):
            fit(_dataset([0.5], [0.2]), GpHyper(), mode="dense")


class SparseTest(unittest.TestCase):
    def test_fitc_collapses_to_exact(self) -> None:
        rng = np.random.default_rng(2)
        z = np.array([0.0, 0.4, 0.9, 1.4, 2.0])
        dataset = _dataset(z, rng.normal(0.0, 0.5, z.size))
        query = rng.uniform(-0.5, 2.1, 100)
        exact = predict_batch(fit(dataset, GpHyper()), query)
        sparse = predict_batch(fit(dataset, GpHyper(), mode="sparse", inducing=z), query)
        np.testing.assert_allclose(sparse[0], exact[0], atol=1e-6)
        np.testing.assert_allclose(sparse[1], exact[1], atol=1e-6)

    def test_sparse_model_uses_inducing_basis(self) -> None:
        inducing = select_inducing(FEATURES, 3)
        model = fit(_dataset(FEATURES, [0.1] * 5), GpHyper(), mode="sparse", inducing=inducing)
        self.assertEqual(model.basis.size, 3)
        self.assertEqual(model.size, 5)

    def test_sparse_requires_inducing_inputs(self) -> None:
        with self.assertRaises(InvalidArgument):
            fit(_dataset([0.5], [0.2]), GpHyper(), mode="sparse")


class InducingSelectionTest(unittest.TestCase):
    def test_linear_spacing(self) -> None:
        np.testing.assert_allclose(select_inducing(np.linspace(0.0, 1.0, 11), 4), [0.0, 1 / 3, 2 / 3, 1.0])

    def test_single_point_is_midpoint(self) -> None:
        np.testing.assert_allclose(select_inducing([0.2, 0.9, 0.4], 1), [0.55])

    def test_degenerate_range_spans_length_scale(self) -> None:
        np.testing.assert_allclose(select_inducing([0.5] * 6, 3, length_scale=0.3), [0.35, 0.5, 0.65])

    def test_time_rule_picks_evenly_spaced_samples(self) -> None:
        np.testing.assert_allclose(select_inducing_time([0.0, 0.1, 0.2, 0.3, 0.4], 3), [0.0, 0.2, 0.4])

    def test_invalid_requests(self) -> None:
        with self.assertRaises(InvalidArgument):
            select_inducing([0.1], 0)
        with self.assertRaises(InvalidArgument):
            select_inducing([], 2)


class DatasetTest(unittest.TestCase):
    def test_duplicate_features_are_skipped(self) -> None:
        dataset = GpDataset()
        self.assertTrue(dataset.append(0, 0.5, 0.1))
        self.assertFalse(dataset.append(1, 0.5 + 1e-9, 0.2))
        self.assertEqual(len(dataset), 1)
        self.assertEqual(dataset.targets, [0.1])

    def test_capacity_drops_oldest_sample(self) -> None:
        dataset = _dataset([0.1, 0.2, 0.3], [1.0, 2.0, 3.0], max_points=2)
        self.assertEqual(dataset.inputs, [0.2, 0.3])
        self.assertEqual(dataset.steps, [1, 2])

    def test_csv_export_and_import(self) -> None:
        dataset = _dataset([0.1, 0.35, 0.8], [0.002, -0.001, 0.017])
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "dataset.csv"
            path.write_text(dataset_to_csv(dataset), encoding="utf-8")
            self.assertTrue(path.read_text(encoding="utf-8").startswith("k,z,y"))
            loaded = import_dataset_csv(path)
        self.assertEqual(loaded.inputs, dataset.inputs)
        self.assertEqual(loaded.targets, dataset.targets)
        self.assertEqual(loaded.steps, dataset.steps)

    def test_import_rejects_unknown_columns(self) -> None:
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "bad.csv"
            path.write_text("step,input\n0,0.1\n", encoding="utf-8")
            with self.assertRaises(InvalidArgument):
                import_dataset_csv(path)


class ResidualBoundTest(unittest.TestCase):
    def test_prior_mean_respects_bound(self) -> None:
        self.assertTrue(mean_within_bounds(prior_model(GpHyper()), -0.033, 0.033, np.linspace(-0.1, 1.1, 50)))

    def test_large_targets_break_bound(self) -> None:
        model = fit(_dataset([0.5], [0.5]), GpHyper())
        self.assertFalse(mean_within_bounds(model, -0.033, 0.033, np.linspace(-0.1, 1.1, 50)))


if __name__ == "__main__":
    unittest.main()
