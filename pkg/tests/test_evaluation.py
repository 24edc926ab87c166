"""Tests for closed-set accuracy, ROC/AUC and report assembly."""

import logging

import numpy as np
import pytest
from scipy.special import softmax
from sklearn.metrics import roc_auc_score

from evaluation import (
    REFERENCE_FULL_SCALE, closed_accuracy, confusion, evaluate_predictions, per_class_accuracy,
    rank_statistic_auc, roc_auc, threshold_at_tpr,
)
from exceptions import ConfigurationError, UsageError
from model import Predictions


def make_predictions(logits, labels, masks=None, num_classes=3):
    logits = np.asarray(logits, dtype=np.float64).reshape(len(labels), num_classes)
    return Predictions(logits, softmax(logits, axis=1), masks, np.asarray(labels))


class TestClosedAccuracy:

    def test_examples(self):
        assert closed_accuracy([0, 1, 2], [0, 1, 2]) == 1.0
        assert closed_accuracy([0, 1, 0, 1], [0, 1, 1, 0]) == 0.5

    def test_matches_count(self):
        rng = np.random.default_rng(0)
        predicted, labels = rng.integers(0, 4, 100), rng.integers(0, 4, 100)
        assert closed_accuracy(predicted, labels) == sum(int(p == y) for p, y in zip(predicted, labels)) / 100

    def test_length_mismatch(self):
        with pytest.raises(ConfigurationError, match='Length mismatch'):
            closed_accuracy([0, 1], [0])

    def test_empty(self):
        with pytest.raises(ConfigurationError):
            closed_accuracy([], [])

    def test_confusion_rows_and_trace(self):
        rng = np.random.default_rng(1)
        predicted, labels = rng.integers(0, 3, 60), rng.integers(0, 3, 60)
        matrix = confusion(predicted, labels, 3)
        assert matrix.sum(axis=1).tolist() == np.bincount(labels, minlength=3).tolist()
        assert np.trace(matrix) / matrix.sum() == pytest.approx(closed_accuracy(predicted, labels))

    def test_per_class_accuracy_without_samples(self):
        assert per_class_accuracy([[2, 0], [0, 0]]) == [1.0, None]


class TestRocAuc:

    @pytest.mark.parametrize('in_scores, out_scores, expected', [
        ([0.9, 0.8], [0.1, 0.2], 1.0),
        ([0.5], [0.5], 0.5),
        ([0.9, 0.4], [0.6, 0.1], 0.75),
    ])
    def test_examples(self, in_scores, out_scores, expected):
        assert roc_auc(in_scores, out_scores).auc == pytest.approx(expected)

    @pytest.mark.parametrize('n_in, n_out', [(37, 11), (3, 1000), (49, 7)])
    def test_perfect_separation_is_exactly_one(self, n_in, n_out):
        rng = np.random.default_rng(n_in)
        in_scores = -rng.uniform(0.0, 1e-3, n_in)
        out_scores = -rng.uniform(0.5, 1.0, n_out)
        assert roc_auc(in_scores, out_scores).auc == 1.0
        assert roc_auc(out_scores, in_scores).auc == 0.0

    def test_curve_shape(self):
        curve = roc_auc([0.9, 0.4, 0.4], [0.6, 0.1])
        assert np.all(np.diff(curve.thresholds) < 0)
        assert np.all(np.diff(curve.tpr) >= 0) and np.all(np.diff(curve.fpr) >= 0)
        assert curve.points[0][1:] == (0.0, 0.0)
        assert curve.points[-1][1:] == (1.0, 1.0)
        assert curve.thresholds[-1] == -np.inf

    @pytest.mark.parametrize('seed', range(100))
    def test_trapezoid_equals_rank_statistic(self, seed):
        rng = np.random.default_rng(seed)
        # coarse rounding forces ties between and within the two sets
        in_scores = np.round(rng.normal(0.5, 1.0, rng.integers(1, 40)), 1)
        out_scores = np.round(rng.normal(0.0, 1.0, rng.integers(1, 40)), 1)

        auc = roc_auc(in_scores, out_scores).auc
        assert auc == pytest.approx(rank_statistic_auc(in_scores, out_scores), abs=1e-9)

        wins = (in_scores[:, None] > out_scores[None, :]).mean() + 0.5 * (in_scores[:, None] == out_scores[None, :]).mean()
        assert auc == pytest.approx(wins, abs=1e-9)

        labels = np.r_[np.ones(len(in_scores)), np.zeros(len(out_scores))]
        assert auc == pytest.approx(roc_auc_score(labels, np.r_[in_scores, out_scores]), abs=1e-9)

    def test_swapping_sets_complements_auc(self):
        rng = np.random.default_rng(3)
        a, b = rng.normal(size=30), rng.normal(0.4, size=25)
        assert roc_auc(a, b).auc + roc_auc(b, a).auc == pytest.approx(1.0)

    def test_monotone_transform_keeps_auc(self):
        rng = np.random.default_rng(4)
        a, b = rng.normal(size=30), rng.normal(0.4, size=25)
        assert roc_auc(np.exp(a), np.exp(b)).auc == pytest.approx(roc_auc(a, b).auc)

    def test_empty_scores(self):
        with pytest.raises(ConfigurationError):
            roc_auc([], [0.1])
        with pytest.raises(ConfigurationError):
            roc_auc([0.1], [])


class TestThresholdAtTpr:

    def test_95_percent(self):
        assert threshold_at_tpr(np.arange(1, 101), 0.95) == 5.0

    def test_full_tpr_is_just_below_minimum(self):
        th = threshold_at_tpr(np.arange(1, 101), 1.0)
        assert th < 1.0
        assert th == np.nextafter(1.0, -np.inf)

    @pytest.mark.parametrize('target', [0.0, 1.5])
    def test_target_out_of_range(self, target):
        with pytest.raises(ConfigurationError):
            threshold_at_tpr([1.0, 2.0], target)


class TestEvaluatePredictions:

    def setup_method(self):
        self.closed = make_predictions(
            [[5.0, 0.0, 0.0], [0.0, 4.0, 0.0], [0.0, 0.0, 6.0], [3.0, 0.0, 0.0]], [0, 1, 2, 1],
        )
        self.open_ = make_predictions([[1.0, 1.0, 0.5], [0.2, 0.9, 0.8]], [-1, -1])

    def test_report(self):
        report = evaluate_predictions(self.closed, self.open_, ['msp', 'mls'], split_name='G0',
                                      class_names=['a', 'b', 'c'])
        assert report.closed_accuracy == 0.75
        assert report.per_class_accuracy == [1.0, 0.5, 1.0]
        assert report.confusion[1] == [1, 1, 0]
        assert report.auc_by_strategy == {'msp': 1.0, 'mls': 1.0}
        assert report.num_closed_test == 4 and report.num_open_test == 2
        assert report.reference['split'] == REFERENCE_FULL_SCALE['G0']
        assert set(report.to_dict()) >= {'split_name', 'auc_by_strategy', 'confusion', 'reference'}
        assert 'roc_curves' not in report.to_dict()

    def test_empty_open_set(self, caplog):
        empty = make_predictions([], [])
        assert empty.logits.shape == (0, 3)
        with caplog.at_level(logging.WARNING, logger='evaluation'):
            report = evaluate_predictions(self.closed, empty, ['msp', 'mls'])
        assert report.auc_by_strategy == {'msp': None, 'mls': None}
        assert report.roc_curves == {}
        assert report.num_open_test == 0
        assert report.closed_accuracy == 0.75
        assert 'undefined' in caplog.text

    def test_openmax_needs_model(self):
        with pytest.raises(UsageError):
            evaluate_predictions(self.closed, self.open_, ['openmax'])

    def test_localization_mse(self):
        masks = np.full((4, 2, 2), 0.25)
        closed = make_predictions(self.closed.logits, self.closed.labels, masks)
        report = evaluate_predictions(closed, self.open_, ['mls'], closed_masks=np.zeros((4, 2, 2)))
        assert report.localization_mse == pytest.approx(0.0625)
