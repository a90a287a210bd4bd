"""Tests for Stage-1 training"""

import numpy as np
import pytest

from splatproto.core.config import TrainConfig
from splatproto.core.errors import DataError, FrozenStateError
from splatproto.core.trainer import (
    Adam, TrainReport, batch_gradients, cosine_lr, evaluate, freeze, predict_labels, train_stage1
)


class TestOptimizer:
    """Test Adam and the learning-rate schedule."""

    def test_first_step_is_lr_sign(self):
        deltas = Adam().deltas({"w": np.array([0.5, -2.0, 0.0])}, lr=0.1)
        np.testing.assert_allclose(deltas["w"], [0.1, -0.1, 0.0], atol=1e-6)

    def test_step_updates_params(self, params):
        before = params.W_cls.copy()
        Adam().step(params, {"cls.W": np.ones_like(before)}, lr=1e-3)
        np.testing.assert_allclose(params.W_cls, before - 1e-3, atol=1e-6)

    def test_frozen_step_rejected(self, params):
        with pytest.raises(FrozenStateError):
            Adam().step(freeze(params), {"cls.W": np.ones_like(params.W_cls)}, lr=1e-3)

    def test_cosine_schedule(self):
        assert cosine_lr(1e-3, 0, 60) == pytest.approx(1e-3)
        assert cosine_lr(1e-3, 30, 60) == pytest.approx(5e-4)
        assert cosine_lr(1e-3, 59, 60) < 1e-5
        assert cosine_lr(1e-3, 0, 1) == 1e-3


class TestGradients:
    """Test batch gradient reduction."""

    def test_thread_count_does_not_change_result(self, params, samples):
        serial, losses1 = batch_gradients(samples[:4], params, threads=1)
        parallel, losses4 = batch_gradients(samples[:4], params, threads=4)
        for name in serial:
            np.testing.assert_array_equal(serial[name], parallel[name])
        np.testing.assert_array_equal(losses1, losses4)

    def test_empty_batch(self, params):
        with pytest.raises(DataError):
            batch_gradients([], params)


class TestTraining:
    """Test the Stage-1 loop on a tiny dataset."""

    def test_short_run(self, dataset, hyper):
        config = TrainConfig(epochs=2, batch_size=2, lr=1e-3)
        params, report = train_stage1(dataset, hyper, config, seed=0)
        assert len(report.epochs) == 2
        assert report.best_epoch in (0, 1)
        assert report.test_accuracy is not None
        assert 0.0 <= report.test_accuracy <= 1.0
        assert report.n_parameters == params.n_parameters()
        assert all(np.isfinite(e.train_loss) for e in report.epochs)

    def test_deterministic(self, dataset, hyper):
        config = TrainConfig(epochs=1, batch_size=2)
        a, _ = train_stage1(dataset, hyper, config, seed=3)
        b, _ = train_stage1(dataset, hyper, config, seed=3, threads=2)
        assert a.hash() == b.hash()

    def test_zero_epochs_keeps_initialization(self, dataset, hyper):
        params, report = train_stage1(dataset, hyper, TrainConfig(epochs=0), seed=0)
        assert report.epochs == []
        assert report.best_epoch is None

    def test_report_round_trip(self, dataset, hyper):
        _, report = train_stage1(dataset, hyper, TrainConfig(epochs=1, batch_size=4), seed=0)
        data = report.to_dict()
        assert data["version"] == 1
        assert TrainReport.from_dict(data) == report

    def test_evaluate(self, params, samples):
        accuracy = evaluate(params, samples)
        predicted = predict_labels(params, samples)
        assert accuracy == pytest.approx(np.mean(predicted == [s.label for s in samples]))
        with pytest.raises(DataError):
            evaluate(params, [])
