"""Tests for faithfulness and prototype metrics"""

from dataclasses import replace

import numpy as np
import pytest

from splatproto.core.config import RunConfig
from splatproto.core.disentangler import Curriculum, DisentangleState, VoxelCache, train_stage2
from splatproto.core.errors import ConfigError, DataError, DegenerateMetricError
from splatproto.core.evalsuite import (
    ablation_run, decision_preservation, deletion_sweep, deletion_test, format_ablation,
    format_sweep, mean_activated_density, purity_gain, random_deletion_control, registry_purity,
    relative_degradation, top_voxels
)
from splatproto.core.trainer import freeze
from tests.conftest import TINY_WIDTHS, tiny_dataset


@pytest.fixture
def setup(params, samples):
    frozen = freeze(params)
    cache = VoxelCache.build(samples, frozen)
    state = train_stage2(frozen, cache, Curriculum(3, 2, 2, 1), epochs=2, lr=1e-2, batch_size=8)
    return frozen, state, cache


class TestDegradation:
    """Test the relative accuracy drop."""

    def test_formula(self):
        assert relative_degradation(0.8, 0.6) == pytest.approx(25.0)
        assert relative_degradation(0.5, 0.5) == 0.0
        assert relative_degradation(0.5, 0.75) == pytest.approx(-50.0)

    def test_zero_baseline(self):
        assert relative_degradation(0.0, 0.0) == 0.0


class TestDeletion:
    """Test top-k and random deletion."""

    def test_top_voxels_distinct(self, setup, samples):
        params, state, _ = setup
        voxels = top_voxels(samples[0], params, state, 4)
        assert len(voxels) == len(set(voxels.tolist()))
        assert 1 <= len(voxels) <= 4
        assert all(samples[0].voxel_counts[v] > 0 for v in voxels)

    def test_deleted_voxels_nested_in_k(self, setup, samples):
        params, state, _ = setup
        for sample in samples:
            previous = set()
            for k in range(1, params.hyper.channels + 1):
                current = set(top_voxels(sample, params, state, k).tolist())
                assert previous <= current, f"{sample.sample_id} k={k}"
                previous = current

    def test_report_fields(self, setup, samples):
        params, state, _ = setup
        report = deletion_test(params, state, samples, k=1)
        assert report.mode == "top"
        assert report.n_samples == len(samples)
        assert 0.0 <= report.perturbed_accuracy <= 1.0
        assert report.degradation == pytest.approx(
            relative_degradation(report.baseline_accuracy, report.perturbed_accuracy))

    def test_deleting_everything(self, setup, samples):
        params, state, _ = setup
        report = random_deletion_control(params, state, samples, k=params.hyper.n_voxels, seed=0)
        assert report.n_emptied == len(samples)
        assert report.perturbed_accuracy == 0.0

    def test_random_control_k_zero_matches_baseline(self, setup, samples):
        params, state, _ = setup
        report = random_deletion_control(params, state, samples, k=0, seed=0)
        assert report.perturbed_accuracy == report.baseline_accuracy
        assert report.degradation == 0.0

    def test_random_control_seeded(self, setup, samples):
        params, state, _ = setup
        a = random_deletion_control(params, state, samples, k=2, seed=5)
        b = random_deletion_control(params, state, samples, k=2, seed=5, threads=3)
        assert a == b

    def test_invalid_k(self, setup, samples):
        params, state, _ = setup
        with pytest.raises(ConfigError):
            deletion_test(params, state, samples, k=0)
        with pytest.raises(ConfigError):
            deletion_test(params, state, samples, k=params.hyper.channels + 1)

    def test_sweep(self, setup, samples):
        params, state, _ = setup
        rows = deletion_sweep(params, state, samples, max_k=2, control_seeds=3)
        assert [r.k for r in rows] == [1, 2]
        assert all(r.random_std_degradation >= 0 for r in rows)
        table = format_sweep(rows)
        assert "Degradation" in table
        assert table.count("\n") == 3


class TestDecisions:
    """Test decision preservation under compensation."""

    def test_preserved(self, setup, samples):
        params, state, _ = setup
        report = decision_preservation(params, state, samples)
        assert report.n_samples == len(samples)
        assert report.argmax_agreement == 1.0
        assert report.max_abs_deviation < 1e-4

    def test_empty_input(self, setup):
        params, state, _ = setup
        with pytest.raises(DataError):
            decision_preservation(params, state, [])


class TestPrototypeMetrics:
    """Test purity gain and activated density."""

    def test_identity_gain_is_zero(self, setup):
        params, state, cache = setup
        identity = DisentangleState.identity(params, state.registry, state.curriculum, state.eps)
        assert purity_gain(identity, identity, cache) == pytest.approx(0.0)

    def test_gain_matches_purities(self, setup):
        params, state, cache = setup
        identity = DisentangleState.identity(params, state.registry, state.curriculum, state.eps)
        before = registry_purity(state, cache, identity.U)
        after = registry_purity(state, cache, state.U)
        assert purity_gain(identity, state, cache) == pytest.approx(100 * (after - before) / before)

    def test_zero_baseline_purity(self, setup):
        params, state, cache = setup
        for entry in cache.entries.values():
            entry.H = np.zeros_like(entry.H)
        identity = DisentangleState.identity(params, state.registry, state.curriculum, state.eps)
        with pytest.raises(DegenerateMetricError):
            purity_gain(identity, state, cache)

    def test_density(self, setup):
        _, state, cache = setup
        density = mean_activated_density(state, cache)
        counts = [cache[e.sample_id].count_at(e.voxel) for _, e in state.registry.entries()]
        assert density == pytest.approx(np.mean(counts))
        assert density >= 1


class TestAblation:
    """Test the one-at-a-time sweep."""

    def test_rows_and_failures(self):
        dataset = tiny_dataset()
        base = RunConfig()
        base = replace(
            base,
            hyper=replace(base.hyper, grid_size=2, channels=8, k_init=2, k_final=1,
                          stn3_widths=list(TINY_WIDTHS), stn64_widths=list(TINY_WIDTHS)),
            train=replace(base.train, epochs=1, batch_size=4),
            disentangle=replace(base.disentangle, epochs=1, horizon=1, update_period=1, batch_size=8),
        )
        rows = ablation_run({"lambda_density": [0.0, -1.0], "grid_size": [2]}, base, dataset)
        assert [(r.parameter, r.value) for r in rows] == [
            ("lambda_density", 0.0), ("lambda_density", -1.0), ("grid_size", 2)]
        assert rows[0].error is None
        assert rows[0].accuracy is not None
        assert rows[1].error.startswith("ConfigError")
        table = format_ablation(rows)
        assert "Pur. Gain" in table
        assert "λ" in table

    def test_numeric_failures_recorded(self, monkeypatch):
        import splatproto.core.evalsuite as evalsuite
        outcomes = [FloatingPointError("overflow in exp"), ValueError("shapes differ"),
                    (0.5, 10.0, 3.0)]

        def fake_pipeline(dataset, config, threads=1):
            outcome = outcomes.pop(0)
            if isinstance(outcome, Exception):
                raise outcome
            return outcome

        monkeypatch.setattr(evalsuite, "run_pipeline", fake_pipeline)
        rows = ablation_run({"lambda_density": [0.0, 1.0, 3.5]}, RunConfig(), dataset=None)
        assert rows[0].error == "FloatingPointError: overflow in exp"
        assert rows[1].error == "ValueError: shapes differ"
        assert rows[2].error is None
        assert (rows[2].accuracy, rows[2].purity_gain, rows[2].density) == (0.5, 10.0, 3.0)
