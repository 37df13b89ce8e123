import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.core.errors import MetricError
from src.features.metrics import (ACCURACY, AUC, NMSE, MetricReport, accuracy, auc, explained_variance, mse, nmse,
                                  report_metric, selection_metric)


class TestAuc:
    def test_perfect_ranking(self):
        assert auc([0.9, 0.8, 0.3, 0.1], [1, 1, -1, -1]) == 1.0

    def test_reversed_ranking(self):
        assert auc([0.1, 0.3, 0.8, 0.9], [1, 1, -1, -1]) == 0.0

    def test_all_tied(self):
        assert auc([0.5] * 4, [1, -1, 1, -1]) == 0.5

    def test_rank_symmetry(self, rng):
        scores = np.round(rng.normal(size=40), 1)
        labels = np.where(rng.uniform(size=40) < 0.5, 1.0, -1.0)
        labels[:2] = [1.0, -1.0]
        assert auc(scores, labels) + auc(-scores, labels) == pytest.approx(1.0, abs=1e-15)

    def test_monotone_transform(self, rng):
        scores = rng.normal(size=30)
        labels = np.tile([1.0, -1.0], 15)
        assert auc(np.exp(3 * scores), labels) == auc(scores, labels)

    def test_single_class(self):
        with pytest.raises(MetricError):
            auc([0.1, 0.2], [1, 1])

    def test_length_mismatch(self):
        with pytest.raises(MetricError):
            auc([0.1, 0.2], [1, -1, 1])


class TestRegressionMetrics:
    def test_exact_prediction(self):
        truth = np.array([1.0, 2.0, 4.0])
        assert mse(truth, truth) == 0.0
        assert nmse(truth, truth) == 0.0
        assert explained_variance(truth, truth) == 1.0

    def test_mean_prediction(self):
        truth = np.array([1.0, 2.0, 6.0])
        pred = np.full(3, truth.mean())
        assert nmse(pred, truth) == pytest.approx(1.0)
        assert explained_variance(pred, truth) == pytest.approx(0.0)

    def test_direct_arithmetic(self):
        assert mse([0.0, 0.0], [1.0, -1.0]) == 1.0
        assert nmse([0.0, 0.0], [1.0, -1.0]) == 1.0

    def test_shift_invariance(self, rng):
        pred, truth = rng.normal(size=10), rng.normal(size=10)
        assert nmse(pred + 7.5, truth + 7.5) == pytest.approx(nmse(pred, truth))

    def test_constant_truth(self):
        with pytest.raises(MetricError):
            nmse([1.0, 2.0], [3.0, 3.0])
        with pytest.raises(MetricError):
            explained_variance([1.0, 2.0], [3.0, 3.0])

    def test_too_short(self):
        with pytest.raises(MetricError):
            mse([1.0], [1.0])


def test_accuracy_sign_threshold():
    assert accuracy([0.5, -0.2, 0.0, -1.0], [1, -1, -1, -1]) == 0.75


def test_metric_choice():
    assert report_metric("classification") == AUC
    assert report_metric("classification", "object_recognition") == ACCURACY
    assert report_metric("regression") == NMSE
    assert selection_metric("classification") == AUC
    assert selection_metric("regression") == "explained_variance"


class TestMetricReport:
    def test_single_run_has_zero_std(self):
        report = MetricReport.from_runs([[0.7, 0.8, 0.9]], AUC)
        assert report.std_over_runs == 0.0
        assert report.mean == pytest.approx(0.8)

    def test_mean_of_run_means(self):
        report = MetricReport.from_runs([[0.6, 0.8], [0.9, 0.9]], AUC)
        assert_allclose(report.per_run, [0.7, 0.9])
        assert report.mean == pytest.approx(0.8)
        assert report.std_over_runs == pytest.approx(0.1)
        assert_allclose(report.per_task, [0.75, 0.85])

    def test_errors(self):
        with pytest.raises(MetricError):
            MetricReport.from_runs([], AUC)
        with pytest.raises(MetricError):
            MetricReport.from_runs([[0.5]], "f1")
