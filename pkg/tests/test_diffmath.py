"""Tests for tape numerics"""

import numpy as np
import pytest
from scipy.linalg import expm

from splatproto.core import diffmath as dm
from splatproto.core.diffmath import Tape, Tensor, backward
from splatproto.core.errors import (ConfigError, DimensionError, DomainError, GroupIndexError,
                                    UsageError)
from splatproto.core.gradcheck import check_gradients, contract


class TestTape:
    """Test gradient recording and replay."""

    def test_constants_without_tape(self):
        """Ops on untracked inputs return constant tensors."""
        y = dm.relu(np.array([-1.0, 2.0]))
        assert isinstance(y, Tensor)
        assert y.tape is None
        assert not y.requires_grad
        np.testing.assert_array_equal(y.data, [0.0, 2.0])

    def test_backward_simple_chain(self):
        """d/dx sum(W x) = W^T 1."""
        tape = Tape(np.float64)
        x = tape.watch(np.array([1.0, 2.0]), "x")
        W = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        y = dm.matmul(W, x)
        loss = dm.matmul(dm.reshape(y, (1, 3)), np.ones(3))
        grads = backward(tape, loss)
        np.testing.assert_allclose(grads["x"], W.sum(axis=0))

    def test_unused_leaf_gets_zero_gradient(self):
        tape = Tape(np.float64)
        x = tape.watch(np.ones(3), "x")
        tape.watch(np.ones(2), "unused")
        grads = backward(tape, dm.l2_norm(x))
        np.testing.assert_array_equal(grads["unused"], np.zeros(2))

    def test_non_scalar_root_raises(self):
        tape = Tape(np.float64)
        x = tape.watch(np.ones(3), "x")
        with pytest.raises(UsageError):
            backward(tape, dm.relu(x))

    def test_double_backward_requires_reset(self):
        tape = Tape(np.float64)
        x = tape.watch(np.array([3.0, 4.0]), "x")
        loss = dm.l2_norm(x)
        backward(tape, loss)
        with pytest.raises(UsageError):
            backward(tape, loss)
        tape.reset()
        grads = backward(tape, loss)
        np.testing.assert_allclose(grads["x"], [0.6, 0.8])

    def test_mixed_tapes_rejected(self):
        a = Tape().watch(np.ones(2))
        b = Tape().watch(np.ones(2))
        with pytest.raises(UsageError):
            dm.add(a, b)

    def test_single_precision_tape(self):
        tape = Tape(np.float32)
        x = tape.watch(np.ones((2, 2)), "x")
        y = dm.scale(x, 2.0)
        assert y.data.dtype == np.float32


class TestPrimitives:
    """Test forward values and shape checks."""

    def test_linear_matrix_and_vector(self):
        W = np.array([[1.0, 0.0], [0.0, 2.0]])
        b = np.array([1.0, -1.0])
        np.testing.assert_allclose(dm.linear(np.array([[1.0, 2.0], [3.0, 4.0]]), W, b).data,
                                   [[2.0, 3.0], [5.0, 7.0]])
        np.testing.assert_allclose(dm.linear(np.array([1.0, 3.0]), W, b).data, [2.0, 5.0])

    def test_linear_dimension_mismatch(self):
        with pytest.raises(DimensionError) as exc:
            dm.linear(np.ones((3, 5)), np.ones((2, 4)))
        assert "(3, 5)" in str(exc.value)
        assert "(2, 4)" in str(exc.value)

    def test_elementwise_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            dm.add(np.ones(3), np.ones(4))

    def test_masked_max_pool_values(self):
        features = np.array([[1.0, 5.0, 3.0, 2.0],
                             [4.0, 0.0, 6.0, 1.0]])
        out = dm.masked_max_pool(features, [0, 0, 2, 2], 3).data
        np.testing.assert_array_equal(out, [[5.0, 0.0, 3.0],
                                            [4.0, 0.0, 6.0]])

    def test_masked_max_pool_tie_goes_to_lowest_member(self):
        tape = Tape(np.float64)
        x = tape.watch(np.array([[2.0, 2.0, 1.0]]), "x")
        out = dm.masked_max_pool(x, [0, 0, 0], 1)
        grads = backward(tape, dm.take(dm.reshape(out, (1,)), 0))
        np.testing.assert_array_equal(grads["x"], [[1.0, 0.0, 0.0]])

    def test_masked_max_pool_bad_group(self):
        with pytest.raises(GroupIndexError):
            dm.masked_max_pool(np.ones((2, 3)), [0, 1, 3], 3)
        with pytest.raises(GroupIndexError):
            dm.masked_max_pool(np.ones((2, 3)), [0, -1, 1], 3)

    def test_masked_max_pool_empty_input(self):
        out = dm.masked_max_pool(np.zeros((4, 0)), np.zeros(0, dtype=int), 5)
        assert out.shape == (4, 5)
        assert not out.data.any()

    def test_softmax_cross_entropy_stable(self):
        loss = dm.softmax_cross_entropy(np.array([1000.0, 0.0, -1000.0]), 0)
        assert np.isfinite(loss.item())
        assert loss.item() == pytest.approx(0.0, abs=1e-12)
        with pytest.raises(DomainError):
            dm.softmax_cross_entropy(np.zeros(3), 3)

    def test_temp_softmax_ignores_negative_inputs(self):
        p = dm.temp_softmax(np.array([-5.0, 0.0, -1.0]), 1.0).data
        np.testing.assert_allclose(p, np.full(3, 1 / 3))
        assert p.sum() == pytest.approx(1.0)
        with pytest.raises(ConfigError):
            dm.temp_softmax(np.ones(3), 0.0)

    def test_kl_divergence(self):
        p = np.array([0.5, 0.5, 0.0])
        q = np.array([0.25, 0.25, 0.5])
        assert dm.kl_divergence(p, q).item() == pytest.approx(np.log(2.0))
        assert dm.kl_divergence(q, q).item() == pytest.approx(0.0, abs=1e-15)
        with pytest.raises(DomainError):
            dm.kl_divergence(np.array([-0.1, 1.1]), np.array([0.5, 0.5]))

    def test_l2_norm_zero_gradient(self):
        tape = Tape(np.float64)
        x = tape.watch(np.zeros(3), "x")
        grads = backward(tape, dm.l2_norm(x))
        np.testing.assert_array_equal(grads["x"], np.zeros(3))


class TestMatrixExponential:
    """Test exp(P - P^T) against an independent oracle."""

    @pytest.mark.parametrize("scale", [0.0, 0.1, 1.0, 5.0])
    def test_matches_scipy(self, scale):
        rng = np.random.default_rng(3)
        P = rng.normal(size=(6, 6)) * scale
        U = dm.matrix_exp_skew(P).data
        np.testing.assert_allclose(U, expm(P - P.T), atol=1e-10)

    def test_orthogonal(self):
        rng = np.random.default_rng(4)
        U = dm.matrix_exp_skew(rng.normal(size=(16, 16))).data
        assert dm.orthogonality_error(U) < 1e-10
        assert np.linalg.det(U) == pytest.approx(1.0)

    def test_zero_generator_is_identity(self):
        np.testing.assert_array_equal(dm.matrix_exp_skew(np.zeros((4, 4))).data, np.eye(4))

    def test_non_square_rejected(self):
        with pytest.raises(DimensionError):
            dm.matrix_exp_skew(np.zeros((3, 4)))


class TestGradients:
    """Finite-difference checks of selected composites."""

    def test_composite_network(self):
        rng = np.random.default_rng(5)
        groups = np.array([0, 1, 1, 2, 2, 2])
        Wy = rng.normal(size=3)

        def loss(tape, v):
            h = dm.relu(dm.linear(v["x"], v["W"], v["b"]))
            pooled = dm.masked_max_pool(h, groups, 3)
            z = dm.mean_pool(pooled, axis=1)
            return contract(z, Wy)

        errors = check_gradients(loss, {"x": rng.normal(size=(4, 6)),
                                        "W": rng.normal(size=(3, 4)),
                                        "b": rng.normal(size=3)})
        assert max(errors.values()) < 1e-4

    def test_purity_style_ratio(self):
        rng = np.random.default_rng(6)
        column = rng.normal(size=5)

        def loss(tape, v):
            y = dm.matmul(dm.matrix_exp_skew(v["P"]), column)
            return dm.div(dm.take(y, 1), dm.add(dm.l2_norm(y), 1e-6))

        errors = check_gradients(loss, {"P": rng.normal(0, 0.3, size=(5, 5))})
        assert errors["P"] < 1e-4
