import numpy as np
import pytest

from gpuq.metrics import (MetricReport, accuracy, confidence_levels, ece_classification, evaluate, interval_z, mae,
                          nll_classification, nll_regression, regression_calibration, reliability_csv,
                          reliability_curve)
from gpuq.predictive import Categorical, GaussianMarginals, GaussianMixture


def _calibrated_classifier(n, rng, k=3):
    logits = rng.standard_normal((n, k)) * 2
    p = np.exp(logits) / np.exp(logits).sum(1, keepdims=True)
    labels = (rng.random(n)[:, None] > np.cumsum(p, 1)).sum(1)
    return p, np.minimum(labels, k - 1)


class TestNLL:
    def test_perfect_classifier(self):
        assert nll_classification(np.array([[1.0, 0.0], [0.0, 1.0]]), [0, 1]) == 0.0

    def test_half(self):
        assert nll_classification(np.full((4, 2), 0.5), [0, 1, 1, 0]) == pytest.approx(0.69315, abs=1e-5)

    def test_zero_probability_is_finite(self):
        assert np.isfinite(nll_classification(np.array([[1.0, 0.0]]), [1]))

    def test_row_order_invariant(self, rng):
        p, y = _calibrated_classifier(50, rng)
        perm = rng.permutation(50)
        assert nll_classification(p, y) == pytest.approx(nll_classification(p[perm], y[perm]), rel=1e-14)

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            nll_classification(np.full((1, 2), 0.5), [2])

    def test_regression_special_variance(self):
        pred = GaussianMarginals(np.array([1.0, -2.0]), np.full(2, 1 / (2 * np.pi)))
        assert nll_regression(pred, [1.0, -2.0]) == pytest.approx(0.0, abs=1e-15)

    def test_regression_mixture_direct_density(self, rng):
        m, v, w = rng.standard_normal((3, 4)), rng.uniform(0.2, 1.5, (3, 4)), np.array([0.1, 0.2, 0.3, 0.4])
        y = rng.standard_normal(3)
        dens = (w * np.exp(-0.5 * (y[:, None] - m) ** 2 / v) / np.sqrt(2 * np.pi * v)).sum(1)
        assert nll_regression(GaussianMixture(m, v, w), y) == pytest.approx(-np.log(dens).mean(), abs=1e-10)

    def test_regression_rejects_zero_variance(self):
        with pytest.raises(ValueError):
            nll_regression(GaussianMarginals(np.zeros(2), np.zeros(2)), [0.0, 0.0])


class TestECE:
    def test_confident_and_correct(self):
        ece, _ = ece_classification(np.tile([[1.0, 0.0]], (10, 1)), np.zeros(10, int))
        assert ece == 0.0

    def test_confident_half_correct(self):
        ece, bins = ece_classification(np.tile([[1.0, 0.0]], (10, 1)), np.repeat([0, 1], 5))
        assert ece == pytest.approx(0.5)
        assert bins[-1].count == 10

    def test_calibrated_oracle(self, rng):
        p, y = _calibrated_classifier(100_000, rng)
        ece, bins = ece_classification(p, y, 10)
        assert ece <= 0.01
        assert sum(b.count for b in bins) == 100_000

    def test_bin_boundaries(self):
        # confidence exactly 0.6 belongs to (0.5, 0.6]
        _, bins = ece_classification(np.array([[0.6, 0.4]]), [0], 10)
        assert bins[5].count == 1

    def test_bad_bins(self):
        with pytest.raises(ValueError):
            ece_classification(np.full((2, 2), 0.5), [0, 1], 0)


class TestRegressionCalibration:
    def test_z_at_95(self):
        assert interval_z(0.95) == pytest.approx(1.95996, abs=1e-4)

    def test_levels(self):
        np.testing.assert_allclose(confidence_levels(4), [0.2, 0.4, 0.6, 0.8])

    def test_exact_predictions(self, rng):
        mu = rng.standard_normal(20)
        ce, table = regression_calibration(mu, np.ones(20), mu, 10)
        assert ce == pytest.approx(np.mean(1 - confidence_levels(10)))
        assert all(r["coverage"] == 1.0 for r in table)

    def test_calibrated_gaussian(self, rng):
        mu, sd = rng.standard_normal(100_000), rng.uniform(0.5, 2, 100_000)
        ce, _ = regression_calibration(mu, sd, mu + sd * rng.standard_normal(100_000))
        assert ce <= 0.02


class TestSimpleMetrics:
    def test_mae(self):
        assert mae([1.0, 2.0], [1.0, 2.0]) == 0.0
        assert mae([2.0, 3.0], [1.0, 2.0]) == 1.0

    def test_mae_length(self):
        with pytest.raises(ValueError):
            mae([1.0], [1.0, 2.0])

    def test_tie_breaks_to_lowest_class(self):
        assert accuracy(np.array([[0.5, 0.5]]), [0]) == 1.0


class TestReliability:
    def test_calibrated_rows_near_diagonal(self, rng):
        # binary oracle: p(class 1) ~ U(0, 1) and labels drawn from it, so every occupied bin holds ~20k points
        p1 = rng.random(100_000)
        y = (rng.random(100_000) < p1).astype(int)
        rows = reliability_curve(Categorical(np.column_stack([1 - p1, p1])), y, 10)
        assert max(abs(r["accuracy"] - r["confidence"]) for r in rows) <= 0.02

    def test_sorted_and_bounded(self, rng):
        p, y = _calibrated_classifier(500, rng)
        rows = reliability_curve(Categorical(p), y, 10)
        conf = [r["confidence"] for r in rows]
        assert conf == sorted(conf) and len(rows) <= 10

    def test_regression_rows(self, rng):
        mu = rng.standard_normal(1000)
        rows = reliability_curve(GaussianMarginals(mu, np.ones(1000)), mu + rng.standard_normal(1000), 5)
        assert len(rows) == 5 and rows[0]["confidence"] == pytest.approx(1 / 6)

    def test_csv(self):
        text = reliability_csv([{"bin": 1, "confidence": 0.25, "accuracy": 0.5, "count": 3}])
        assert text.splitlines() == ["bin,confidence,accuracy,count", "1,0.25,0.5,3"]


class TestEvaluate:
    def test_classification_omits_mae(self, rng):
        p, y = _calibrated_classifier(200, rng)
        d = evaluate(Categorical(p), y).to_dict()
        assert "mae" not in d and 0 <= d["acc"] <= 1

    def test_regression_omits_acc(self, rng):
        mu = rng.standard_normal(50)
        d = evaluate(GaussianMarginals(mu, np.ones(50)), mu).to_dict()
        assert "acc" not in d and d["mae"] == 0.0

    def test_report_fields(self):
        r = MetricReport(nll=1.0, ece=0.1, acc=0.9, metadata={"seed": 1})
        assert set(r.to_dict()) == {"nll", "ece", "acc", "reliability", "metadata"}
