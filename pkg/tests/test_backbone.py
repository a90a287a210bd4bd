"""Tests for the voxel-aggregated backbone"""

import numpy as np
import pytest

from splatproto.core.backbone import (
    BackboneParams, bind, canonical_order, density_distributions, forward, predict,
    stage1_loss, stn_forward
)
from splatproto.core import diffmath as dm
from splatproto.core.diffmath import Tape, backward
from splatproto.core.errors import ConfigError, FrozenStateError
from splatproto.core.splat_io import POINTCLOUD_MODE, generate_synthetic, make_sample
from tests.conftest import tiny_hyper


class TestParams:
    """Test parameter initialization and freezing."""

    def test_initialize_deterministic(self, hyper):
        a = BackboneParams.initialize(hyper, seed=1)
        b = BackboneParams.initialize(hyper, seed=1)
        c = BackboneParams.initialize(hyper, seed=2)
        assert a.hash() == b.hash()
        assert a.hash() != c.hash()

    def test_classifier_has_no_bias(self, params, hyper):
        assert params.W_cls.shape == (hyper.n_classes, hyper.channels)
        assert "cls.b" not in params.arrays

    def test_alignment_starts_at_identity(self, params):
        x = np.random.default_rng(0).normal(size=(3, 10)).astype(np.float32)
        T = stn_forward(x, bind(params), "stn3", 3)
        np.testing.assert_array_equal(T.data, np.eye(3, dtype=np.float32))

    def test_bad_shape_rejected(self, params):
        arrays = params.copy().arrays
        arrays["mlp2.conv1.W"] = np.zeros((3, 3), dtype=np.float32)
        with pytest.raises(ConfigError):
            BackboneParams(arrays, params.hyper)

    def test_frozen_rejects_updates(self, params):
        frozen = params.freeze()
        assert frozen.frozen
        with pytest.raises(FrozenStateError):
            frozen.apply_update("cls.W", np.ones_like(frozen.W_cls))
        with pytest.raises(ValueError):
            frozen.arrays["cls.W"][0, 0] = 1.0
        assert frozen.hash() == params.hash()

    def test_update_changes_hash(self, params):
        before = params.hash()
        params.apply_update("cls.W", np.full_like(params.W_cls, 0.1))
        assert params.hash() != before


class TestForward:
    """Test forward-pass shapes and invariants."""

    def test_shapes(self, params, samples, hyper):
        trace = forward(samples[0], params)
        assert trace.point_features.shape == (hyper.channels, len(samples[0]))
        assert trace.H.shape == (hyper.channels, hyper.n_voxels)
        assert trace.z.shape == (hyper.channels,)
        assert trace.logits.shape == (hyper.n_classes,)
        assert trace.p.shape == (hyper.n_voxels,)

    def test_voxel_features_nonnegative_and_empty_columns_zero(self, params):
        sample = generate_synthetic("torus", 64, seed=0, grid_size=4, label=0)
        hyper = tiny_hyper(grid_size=4)
        trace = forward(sample, BackboneParams.initialize(hyper, 0))
        H = trace.H.data
        assert (H >= 0).all()
        empty = sample.voxel_counts == 0
        assert empty.any()
        assert not H[:, empty].any()

    def test_z_is_mean_over_all_voxels(self, params, samples):
        trace = forward(samples[1], params)
        np.testing.assert_allclose(trace.z.data, trace.H.data.mean(axis=1), rtol=1e-6)

    def test_permutation_bit_identical(self, params):
        sample = generate_synthetic("sphere", 64, seed=3, grid_size=params.hyper.grid_size,
                                    label=0)
        logits = predict(sample, params)
        H = forward(sample, params).H.data
        for seed in range(50):
            perm = np.random.default_rng(seed).permutation(len(sample))
            shuffled = make_sample(sample.cloud.subset(perm), sample.label, sample.grid_size)
            assert np.array_equal(predict(shuffled, params), logits), f"permutation seed {seed}"
            assert np.array_equal(forward(shuffled, params).H.data, H), f"permutation seed {seed}"

    def test_voxel_ids_survive_alignment_changes(self, samples):
        hyper = tiny_hyper()
        sample = samples[0]
        fixed = BackboneParams.initialize(hyper, 0)
        moved = BackboneParams.initialize(hyper, 0)
        rng = np.random.default_rng(5)
        for name in moved:
            if name.startswith(("stn3", "stn64")):
                moved.apply_update(name, rng.normal(0.0, 0.5, moved[name].shape).astype(np.float32))

        before = forward(sample, fixed)
        after = forward(sample, moved)
        stored = sample.voxel_index[canonical_order(sample)]
        np.testing.assert_array_equal(before.voxel_index, stored)
        np.testing.assert_array_equal(after.voxel_index, stored)
        assert not np.array_equal(before.H.data, after.H.data)

        empty = sample.voxel_counts == 0
        assert not after.H.data[:, empty].any()
        f = after.point_features.data
        for v in np.unique(stored):
            np.testing.assert_array_equal(after.H.data[:, v], f[:, stored == v].max(axis=1))

    def test_canonical_order_is_permutation(self, samples):
        order = canonical_order(samples[0])
        assert sorted(order) == list(range(len(samples[0])))
        assert (np.diff(samples[0].voxel_index[order]) >= 0).all()

    def test_grid_mismatch(self, params):
        sample = generate_synthetic("box", 48, seed=0, grid_size=3, label=0)
        with pytest.raises(ConfigError):
            forward(sample, params)

    def test_single_primitive(self, params, samples):
        sub = samples[0].subset([0])
        trace = forward(sub, params)
        assert np.isfinite(trace.logits.data).all()

    def test_pointcloud_mode(self, params):
        sample = generate_synthetic("cylinder", 48, seed=1, grid_size=2, label=1,
                                    feature_mode=POINTCLOUD_MODE)
        assert np.isfinite(predict(sample, params)).all()


class TestDensityLoss:
    """Test the density distributions and the Stage-1 loss."""

    def test_distributions(self):
        H = np.array([[0.0, 3.0, 0.0], [0.0, 4.0, 1.0]])
        counts = np.array([0, 3, 1])
        a, p, q = density_distributions(H, counts, tau=1.0, beta=1.0, eps=1e-6)
        np.testing.assert_allclose(a.data, [0.0, 5.0, 1.0])
        assert p.data.sum() == pytest.approx(1.0)
        assert q.sum() == pytest.approx(1.0)
        assert q[0] > 0
        assert q[1] == pytest.approx(3 * q[2], rel=1e-5)

    def test_density_term_rewards_populated_voxels(self):
        counts = np.array([1, 9])
        on_sparse = np.array([[4.0, 0.0]])
        on_dense = np.array([[0.0, 4.0]])
        _, p_sparse, q = density_distributions(on_sparse, counts, tau=1.0, beta=1.0, eps=1e-6)
        _, p_dense, _ = density_distributions(on_dense, counts, tau=1.0, beta=1.0, eps=1e-6)
        assert dm.kl_divergence(p_dense, q).item() < dm.kl_divergence(p_sparse, q).item()

        # partial shift toward the denser voxel also lowers the loss
        halfway = np.array([[2.0, 2.0]])
        _, p_half, _ = density_distributions(halfway, counts, tau=1.0, beta=1.0, eps=1e-6)
        assert dm.kl_divergence(p_dense, q).item() < dm.kl_divergence(p_half, q).item() \
            < dm.kl_divergence(p_sparse, q).item()

    def test_lambda_zero_is_plain_cross_entropy(self, samples):
        params = BackboneParams.initialize(tiny_hyper(lambda_density=0.0), 0)
        terms = stage1_loss(forward(samples[0], params), samples[0].label, params.hyper)
        assert terms.total.item() == pytest.approx(terms.cls.item())
        assert terms.density.item() >= 0

    def test_loss_composition(self, params, samples):
        terms = stage1_loss(forward(samples[0], params), samples[0].label, params.hyper)
        expected = terms.cls.item() + params.hyper.lambda_density * terms.density.item()
        assert terms.total.item() == pytest.approx(expected, rel=1e-5)

    def test_gradients_cover_every_parameter(self, params, samples):
        tape = Tape(np.float32)
        trace = forward(samples[0], params, tape)
        grads = backward(tape, stage1_loss(trace, samples[0].label, params.hyper).total)
        assert set(grads) == set(params.arrays)
        assert np.abs(grads["cls.W"]).sum() > 0
        assert all(np.isfinite(g).all() for g in grads.values())
