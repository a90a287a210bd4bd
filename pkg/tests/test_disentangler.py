"""Tests for orthogonal disentanglement and the prototype registry"""

import numpy as np
import pytest

from splatproto.core.diffmath import Tape, backward, matrix_exp_skew, orthogonality_error
from splatproto.core.disentangler import (
    CachedSample, Curriculum, DisentangleState, PrototypeEntry, PrototypeRegistry, VoxelCache,
    channel_activation, compensate_classifier, curriculum_k, discover_prototypes,
    locate_channels, mean_registry_purity, purity, purity_loss, train_stage2, transform_voxels
)
from splatproto.core.errors import (ConfigError, DataError, DimensionError, FrozenStateError,
                                    RegistryError, TrainingError, UsageError)
from splatproto.core.trainer import freeze


def _cache(n_samples=6, channels=5, seed=0):
    rng = np.random.default_rng(seed)
    entries = {}
    for i in range(n_samples):
        n_vox = int(rng.integers(2, 6))
        voxels = np.sort(rng.choice(27, size=n_vox, replace=False))
        entries[f"s{i}"] = CachedSample(
            sample_id=f"s{i}", label=i % 2, voxels=voxels,
            counts=rng.integers(1, 20, size=n_vox),
            H=np.abs(rng.normal(size=(channels, n_vox))),
            z=np.zeros(channels), logits=np.zeros(2),
        )
    return VoxelCache(entries, "")


class TestCurriculum:
    """Test the shrinking registry size."""

    def test_endpoints_and_floor(self):
        assert curriculum_k(0, 50, 10, 3) == 10
        assert curriculum_k(50, 50, 10, 3) == 3
        assert curriculum_k(25, 50, 10, 3) == 6
        assert curriculum_k(1, 50, 10, 3) == 9

    def test_monotone(self):
        ks = [curriculum_k(t, 50, 10, 3) for t in range(51)]
        assert all(a >= b for a, b in zip(ks, ks[1:]))

    def test_constant_when_equal(self):
        assert {curriculum_k(t, 10, 4, 4) for t in range(11)} == {4}

    def test_invalid(self):
        with pytest.raises(ConfigError):
            curriculum_k(0, 50, 2, 3)
        with pytest.raises(ConfigError):
            curriculum_k(51, 50, 10, 3)

    def test_clamped_after_horizon(self):
        assert Curriculum(10, 3, 50, 5).k_at(80) == 3


class TestVoxelOps:
    """Test rotation, activation and purity."""

    def test_transform_identity(self):
        H = np.arange(6.0).reshape(2, 3)
        np.testing.assert_array_equal(transform_voxels(H, np.eye(2)), H)
        with pytest.raises(DimensionError):
            transform_voxels(H, np.eye(3))

    def test_activation_skips_empty_voxels(self):
        Ht = np.array([[1.0, 9.0, 2.0], [3.0, -1.0, 0.5]])
        counts = np.array([1, 0, 2])
        np.testing.assert_array_equal(channel_activation(Ht, counts), [2.0, 3.0])
        _, voxels = locate_channels(Ht, counts)
        np.testing.assert_array_equal(voxels, [2, 0])

    def test_locate_tie_lowest_voxel(self):
        _, voxels = locate_channels(np.array([[4.0, 4.0, 1.0]]), np.ones(3))
        assert voxels[0] == 0

    def test_no_occupied_voxel(self):
        with pytest.raises(DataError):
            channel_activation(np.ones((2, 3)), np.zeros(3))

    def test_purity_bounds(self):
        Ht = np.array([[3.0, 0.0], [4.0, 1.0]])
        record = purity(Ht, 0, np.ones(2), eps=0.0)
        assert record.voxel == 0
        assert record.purity == pytest.approx(0.6)
        one_hot = purity(np.array([[2.0], [0.0]]), 0, np.ones(1), eps=1e-6)
        assert one_hot.purity == pytest.approx(1.0, abs=1e-6)

    def test_compensation_preserves_logits(self):
        rng = np.random.default_rng(1)
        W = rng.normal(size=(4, 6))
        U = matrix_exp_skew(rng.normal(size=(6, 6))).data
        z = rng.normal(size=6)
        np.testing.assert_allclose(compensate_classifier(W, U) @ (U @ z), W @ z, atol=1e-10)
        with pytest.raises(DimensionError):
            compensate_classifier(W, np.eye(5))


class TestRegistry:
    """Test top-k bookkeeping."""

    def test_ordering_and_ties(self):
        registry = PrototypeRegistry(1, k=2)
        registry.offer(0, PrototypeEntry("b", 1.0, 0))
        registry.offer(0, PrototypeEntry("c", 2.0, 1))
        registry.offer(0, PrototypeEntry("a", 1.0, 2))
        assert [e.sample_id for e in registry[0]] == ["c", "a"]

    def test_missing_channel(self):
        with pytest.raises(RegistryError):
            PrototypeRegistry(3, k=1)[5]

    def test_dict_round_trip(self):
        registry = discover_prototypes(_cache(), np.eye(5), k=3)
        assert PrototypeRegistry.from_dict(registry.to_dict()) == registry

    def test_discovery_matches_brute_force(self):
        cache = _cache(seed=2)
        U = matrix_exp_skew(np.random.default_rng(3).normal(0, 0.5, size=(5, 5))).data
        registry = discover_prototypes(cache, U, k=2)
        for c in range(5):
            oracle = []
            for sid in cache.ids():
                row = (U @ cache[sid].H)[c]
                best = int(np.argmax(row))
                oracle.append((-row[best], sid, int(cache[sid].voxels[best])))
            oracle.sort()
            entries = registry[c]
            assert [e.sample_id for e in entries] == [sid for _, sid, _ in oracle[:2]]
            for entry, (neg, _, voxel) in zip(entries, oracle[:2]):
                assert entry.activation == pytest.approx(-neg, rel=1e-9)
                assert entry.voxel == voxel

    def test_voxels_are_global_ids(self):
        cache = _cache()
        registry = discover_prototypes(cache, np.eye(5), k=2)
        for _, entry in registry.entries():
            assert entry.voxel in cache[entry.sample_id].voxels

    def test_k_larger_than_pool(self):
        with pytest.raises(ConfigError):
            discover_prototypes(_cache(n_samples=2), np.eye(5), k=3)

    def test_discovery_thread_independent(self):
        cache = _cache(n_samples=10)
        assert discover_prototypes(cache, np.eye(5), 3, threads=1) == \
            discover_prototypes(cache, np.eye(5), 3, threads=4)


class TestPurityLoss:
    """Test the differentiable purity objective."""

    def test_identity_value(self):
        cache = _cache()
        pairs = [("s0", 1), ("s3", 2)]
        loss, U = purity_loss(pairs, np.zeros((5, 5)), cache, eps=1e-6)
        expected = -np.mean([purity(cache[s].H, c, np.ones(cache[s].H.shape[1])).purity
                             for s, c in pairs])
        assert loss.item() == pytest.approx(expected)
        np.testing.assert_array_equal(U.data, np.eye(5))

    def test_gradient_flows_to_generator(self):
        cache = _cache()
        tape = Tape(np.float64)
        P = tape.watch(np.random.default_rng(0).normal(0, 0.1, size=(5, 5)), "P")
        loss, _ = purity_loss([("s1", 0), ("s2", 4)], P, cache)
        grads = backward(tape, loss)
        assert np.abs(grads["P"]).sum() > 0

    def test_empty_batch(self):
        with pytest.raises(UsageError):
            purity_loss([], np.zeros((5, 5)), _cache())

    def test_pairs_checked_against_registry(self):
        cache = _cache()
        registry = discover_prototypes(cache, np.eye(5), k=1)
        outsider = next(sid for sid in cache.ids() if not registry.contains(sid, 0))
        with pytest.raises(RegistryError):
            purity_loss([(outsider, 0)], np.zeros((5, 5)), cache, registry=registry)

    def test_mean_registry_purity_in_range(self):
        cache = _cache()
        registry = discover_prototypes(cache, np.eye(5), k=2)
        value = mean_registry_purity(registry, cache, np.eye(5))
        assert 0.0 < value <= 1.0


class TestStage2:
    """Test the Stage-2 loop on a real (tiny) backbone."""

    @pytest.fixture
    def frozen(self, params):
        return freeze(params)

    @pytest.fixture
    def cache(self, frozen, samples):
        return VoxelCache.build(samples, frozen)

    def test_requires_frozen_backbone(self, params, samples):
        cache = VoxelCache.build(samples, params)
        with pytest.raises(FrozenStateError):
            train_stage2(params, cache, Curriculum(3, 2, 4, 2), epochs=1)

    def test_cache_from_other_backbone(self, frozen, samples, hyper):
        from splatproto.core.backbone import BackboneParams
        other = VoxelCache.build(samples, BackboneParams.initialize(hyper, 9).freeze())
        with pytest.raises(FrozenStateError):
            train_stage2(frozen, other, Curriculum(3, 2, 4, 2), epochs=1)

    def test_zero_epochs_is_identity(self, frozen, cache):
        state = train_stage2(frozen, cache, Curriculum(3, 2, 4, 2), epochs=0)
        np.testing.assert_array_equal(state.U, np.eye(frozen.hyper.channels))
        np.testing.assert_allclose(state.W_prime, frozen.W_cls)

    def test_zero_epochs_single_history_entry(self, frozen, cache):
        state = train_stage2(frozen, cache, Curriculum(3, 2, 4, 2), epochs=0)
        assert len(state.purity_history) == 1
        assert state.purity_history[0][0] == 0
        assert state.registry.k == 3

    def test_orthogonality_checked_every_step(self, frozen, cache, monkeypatch):
        import splatproto.core.disentangler as disentangler
        calls = []

        def counting(U):
            calls.append(U)
            return orthogonality_error(U)

        monkeypatch.setattr(disentangler, "orthogonality_error", counting)
        curriculum = Curriculum(k_init=3, k_final=2, horizon=4, update_period=2)
        n_pairs = len(discover_prototypes(cache, np.eye(frozen.hyper.channels), 3).pairs())
        train_stage2(frozen, cache, curriculum, epochs=2, lr=1e-2, batch_size=4)
        assert len(calls) == 2 * -(-n_pairs // 4)

    def test_orthogonality_failure_stops_first_step(self, frozen, cache, monkeypatch):
        import splatproto.core.disentangler as disentangler
        monkeypatch.setattr(disentangler, "ORTHOGONALITY_TOLERANCE", 0.0)
        with pytest.raises(TrainingError) as info:
            train_stage2(frozen, cache, Curriculum(3, 2, 4, 2), epochs=3, lr=1e-2, batch_size=4)
        assert info.value.epoch == 0

    def test_run(self, frozen, cache, samples):
        curriculum = Curriculum(k_init=4, k_final=2, horizon=4, update_period=2)
        before = frozen.hash()
        state = train_stage2(frozen, cache, curriculum, epochs=4, lr=1e-2, batch_size=8)
        assert frozen.hash() == before
        assert state.orthogonality_error() < 1e-5
        assert state.registry.k == 2
        assert [e for e, _ in state.purity_history] == [0, 2, 4]
        for entry in cache.entries.values():
            np.testing.assert_allclose(state.logits(entry.z), entry.logits, atol=1e-4)
            assert np.argmax(state.logits(entry.z)) == np.argmax(entry.logits)

    def test_identity_state(self, frozen, cache):
        registry = discover_prototypes(cache, np.eye(frozen.hyper.channels), 2)
        state = DisentangleState.identity(frozen, registry, Curriculum(), 1e-6)
        assert state.orthogonality_error() == 0.0
        assert state.backbone_hash == frozen.hash()
