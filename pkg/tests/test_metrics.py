"""Metric definition tests."""

import numpy as np
import pytest

from graphmoe import metrics
from graphmoe.errors import DataError


class TestAccuracyRmse:
    def test_perfect_predictions(self):
        y = np.array([0, 1, 2, 1])
        assert metrics.accuracy(y, y) == 1.0
        assert metrics.rmse(y.astype(float), y.astype(float)) == 0.0

    def test_half_right(self):
        assert metrics.accuracy(np.array([0, 0]), np.array([0, 1])) == 0.5

    def test_rmse_value(self):
        assert metrics.rmse(np.array([0.0, 2.0]), np.array([0.0, 0.0])) == pytest.approx(np.sqrt(2))


class TestRocAuc:
    def test_perfect_separation(self):
        scores = np.array([0.9, 0.8, 0.2, 0.1])
        labels = np.array([1, 1, 0, 0])
        assert metrics.roc_auc(scores, labels) == 1.0

    def test_random_scores_near_half(self):
        rng = np.random.default_rng(0)
        labels = np.array([0, 1] * 500)
        scores = rng.random(1000)
        assert metrics.roc_auc(scores, labels) == pytest.approx(0.5, abs=0.05)

    def test_tie_handling_midrank(self):
        # all scores equal: AUC is exactly 0.5 by the midrank convention
        assert metrics.roc_auc(np.ones(10), np.array([0, 1] * 5)) == pytest.approx(0.5)

    def test_single_class_rejected(self):
        with pytest.raises(DataError):
            metrics.roc_auc(np.array([0.1, 0.2]), np.array([1, 1]))

    def test_multilabel_mean_skips_degenerate_columns(self):
        scores = np.array([[0.9, 0.5], [0.1, 0.5]])
        labels = np.array([[1, 1], [0, 1]])  # second column degenerate
        assert metrics.multilabel_auc(scores, labels) == 1.0


class TestHits:
    def test_all_positives_above(self):
        assert metrics.hits_at_k(np.array([5.0, 4.0]), np.arange(10) / 10, 3) == 1.0

    def test_threshold_is_strict(self):
        neg = np.array([1.0, 2.0, 3.0])
        assert metrics.hits_at_k(np.array([3.0]), neg, 1) == 0.0  # ties do not count
        assert metrics.hits_at_k(np.array([3.5]), neg, 1) == 1.0

    def test_k_picks_kth_largest_negative(self):
        neg = np.array([1.0, 2.0, 3.0, 4.0])
        pos = np.array([2.5])
        assert metrics.hits_at_k(pos, neg, 1) == 0.0   # needs > 4
        assert metrics.hits_at_k(pos, neg, 3) == 1.0   # needs > 2

    def test_k_bounds(self):
        with pytest.raises(DataError):
            metrics.hits_at_k(np.array([1.0]), np.array([1.0]), 2)
