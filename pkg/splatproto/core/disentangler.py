"""
Stage 2: orthogonal disentanglement of voxel features on a frozen backbone.

U = exp(P - P^T) is learned by maximizing prototype purity while a
shrinking top-k prototype registry is refreshed periodically. The classifier
is compensated with W' = W U^T so decisions do not change.
"""

import bisect
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import diffmath as dm
from .backbone import BackboneParams, forward
from .diffmath import Tape, Tensor, backward, matrix_exp_skew, orthogonality_error
from .errors import (ConfigError, DataError, DimensionError, FrozenStateError, RegistryError,
                     TrainingError, UsageError)
from .splat_io import LabeledSample
from .trainer import Adam
from ..utils.helpers import ordered_map, progress

logger = logging.getLogger(__name__)

ORTHOGONALITY_TOLERANCE = 1e-5


def curriculum_k(t: int, T: int, k_init: int, k_final: int) -> int:
    """floor(k_init - (t / T)(k_init - k_final)), evaluated in integers."""
    if not 1 <= k_final <= k_init:
        raise ConfigError(f"need k_init >= k_final >= 1, got {k_init}, {k_final}")
    if T < 1 or not 0 <= t <= T:
        raise ConfigError(f"curriculum step {t} outside [0, {T}]")
    return (k_init * T - t * (k_init - k_final)) // T


@dataclass
class Curriculum:
    k_init: int = 10
    k_final: int = 3
    horizon: int = 50
    update_period: int = 5

    def k_at(self, epoch: int) -> int:
        return curriculum_k(min(epoch, self.horizon), self.horizon, self.k_init, self.k_final)


# ---------------------------------------------------------------------------
# voxel-level operations


def transform_voxels(H: np.ndarray, U: np.ndarray) -> np.ndarray:
    """H~ = U H, column by column."""
    H, U = np.asarray(H), np.asarray(U)
    if U.ndim != 2 or U.shape[0] != U.shape[1] or H.ndim != 2 or U.shape[1] != H.shape[0]:
        raise DimensionError("transform_voxels", H.shape, U.shape)
    return U @ H


def _located(Ht: np.ndarray, counts: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    occupied = np.flatnonzero(np.asarray(counts) > 0)
    if occupied.size == 0:
        raise DataError("no occupied voxel")
    sub = Ht[:, occupied]
    best = np.argmax(sub, axis=1)
    return sub[np.arange(sub.shape[0]), best], occupied[best]


def channel_activation(Ht: np.ndarray, counts) -> np.ndarray:
    """a_c = max over occupied voxels of H~[c, v]."""
    return _located(np.asarray(Ht), counts)[0]


def locate_channels(Ht: np.ndarray, counts) -> Tuple[np.ndarray, np.ndarray]:
    """(a, v*) for every channel; ties go to the lowest voxel id."""
    return _located(np.asarray(Ht), counts)


@dataclass(frozen=True)
class PurityRecord:
    sample_id: str
    channel: int
    voxel: int
    purity: float


def purity(Ht: np.ndarray, c: int, counts, eps: float = 1e-6, sample_id: str = "") -> PurityRecord:
    """Share of the located voxel's feature norm carried by channel c."""
    Ht = np.asarray(Ht, dtype=np.float64)
    occupied = np.flatnonzero(np.asarray(counts) > 0)
    if occupied.size == 0:
        raise DataError("no occupied voxel")
    v = int(occupied[np.argmax(Ht[c, occupied])])
    column = Ht[:, v]
    value = column[c] / (np.linalg.norm(column) + eps)
    return PurityRecord(sample_id=sample_id, channel=int(c), voxel=v, purity=float(value))


def compensate_classifier(W_cls: np.ndarray, U: np.ndarray) -> np.ndarray:
    """W' = W U^T, so that W' (U z) = W z."""
    W_cls, U = np.asarray(W_cls, dtype=np.float64), np.asarray(U, dtype=np.float64)
    if U.shape != (W_cls.shape[1], W_cls.shape[1]):
        raise DimensionError("compensate_classifier", W_cls.shape, U.shape)
    return W_cls @ U.T


# ---------------------------------------------------------------------------
# voxel-feature cache


@dataclass
class CachedSample:
    """Frozen-backbone features of one sample restricted to occupied voxels."""

    sample_id: str
    label: int
    voxels: np.ndarray
    counts: np.ndarray
    H: np.ndarray
    z: np.ndarray
    logits: np.ndarray

    def count_at(self, voxel: int) -> int:
        i = int(np.searchsorted(self.voxels, voxel))
        if i >= len(self.voxels) or self.voxels[i] != voxel:
            return 0
        return int(self.counts[i])


class VoxelCache:
    """Per-sample occupied-voxel features, computed once per frozen backbone."""

    def __init__(self, entries: Dict[str, CachedSample], backbone_hash: str):
        self.entries = dict(sorted(entries.items()))
        self.backbone_hash = backbone_hash

    @classmethod
    def build(cls, samples: Sequence[LabeledSample], params: BackboneParams, threads: int = 1) -> "VoxelCache":
        def encode(sample: LabeledSample) -> CachedSample:
            trace = forward(sample, params)
            voxels = sample.occupied_voxels()
            return CachedSample(
                sample_id=sample.sample_id,
                label=sample.label,
                voxels=voxels,
                counts=sample.voxel_counts[voxels],
                H=np.ascontiguousarray(trace.H.data[:, voxels], dtype=np.float64),
                z=trace.z.data.astype(np.float64),
                logits=trace.logits.data.astype(np.float64),
            )

        cached = ordered_map(encode, list(samples), threads)
        return cls({c.sample_id: c for c in cached}, params.hash())

    def __getitem__(self, sample_id: str) -> CachedSample:
        try:
            return self.entries[sample_id]
        except KeyError:
            raise RegistryError(f"sample '{sample_id}' is not in the voxel cache")

    def __contains__(self, sample_id: str) -> bool:
        return sample_id in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def ids(self) -> List[str]:
        return list(self.entries)

    @property
    def channels(self) -> int:
        first = next(iter(self.entries.values()))
        return first.H.shape[0]


# ---------------------------------------------------------------------------
# prototype registry


@dataclass(frozen=True)
class PrototypeEntry:
    sample_id: str
    activation: float
    voxel: int


class PrototypeRegistry:
    """Per-channel top-k samples, ordered by activation desc then sample id asc."""

    def __init__(self, n_channels: int, k: int):
        if k < 1:
            raise ConfigError(f"registry size k must be >= 1, got {k}")
        self.k = k
        self._keys: List[List[Tuple[float, str]]] = [[] for _ in range(n_channels)]
        self._entries: List[List[PrototypeEntry]] = [[] for _ in range(n_channels)]

    @property
    def n_channels(self) -> int:
        return len(self._entries)

    def offer(self, channel: int, entry: PrototypeEntry) -> None:
        """Insert if the entry ranks within the top k of its channel."""
        keys, entries = self._keys[channel], self._entries[channel]
        key = (-entry.activation, entry.sample_id)
        i = bisect.bisect_left(keys, key)
        if i >= self.k:
            return
        keys.insert(i, key)
        entries.insert(i, entry)
        if len(keys) > self.k:
            keys.pop()
            entries.pop()

    def __getitem__(self, channel: int) -> List[PrototypeEntry]:
        if not 0 <= channel < self.n_channels:
            raise RegistryError(f"channel {channel} not in registry (0..{self.n_channels - 1})")
        return list(self._entries[channel])

    def __iter__(self):
        return iter(range(self.n_channels))

    def pairs(self) -> List[Tuple[str, int]]:
        """(sample id, channel) of every entry, channel-major."""
        return [(e.sample_id, c) for c in range(self.n_channels) for e in self._entries[c]]

    def entries(self) -> Iterable[Tuple[int, PrototypeEntry]]:
        for c in range(self.n_channels):
            for e in self._entries[c]:
                yield c, e

    def contains(self, sample_id: str, channel: int) -> bool:
        return any(e.sample_id == sample_id for e in self[channel])

    def __eq__(self, other):
        return isinstance(other, PrototypeRegistry) and self._entries == other._entries

    def to_dict(self) -> Dict:
        return {
            "k": self.k,
            "channels": [
                [{"sample_id": e.sample_id, "activation": e.activation, "voxel": e.voxel}
                 for e in entries]
                for entries in self._entries
            ],
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "PrototypeRegistry":
        registry = cls(len(data["channels"]), data["k"])
        for c, entries in enumerate(data["channels"]):
            for e in entries:
                registry.offer(c, PrototypeEntry(e["sample_id"], float(e["activation"]), int(e["voxel"])))
        return registry


def discover_prototypes(cache: VoxelCache, U: np.ndarray, k: int, threads: int = 1) -> PrototypeRegistry:
    """
    Top-k training samples per channel under the rotation U.

    Args:
        cache: voxel features of the candidate pool (the train split)
        U: C x C orthogonal matrix
        k: prototypes per channel

    Returns:
        PrototypeRegistry
    """
    if len(cache) == 0:
        raise DataError("prototype pool is empty")
    if k > len(cache):
        raise ConfigError(f"k = {k} exceeds the {len(cache)} available training samples")
    U = np.asarray(U, dtype=np.float64)

    def scan(entry: CachedSample):
        activation, local = _located(transform_voxels(entry.H, U), np.ones(len(entry.voxels)))
        return entry.sample_id, activation, entry.voxels[local]

    registry = PrototypeRegistry(U.shape[0], k)
    for sample_id, activation, voxels in ordered_map(scan, list(cache.entries.values()), threads):
        for c in range(U.shape[0]):
            registry.offer(c, PrototypeEntry(sample_id, float(activation[c]), int(voxels[c])))
    return registry


def mean_registry_purity(registry: PrototypeRegistry, cache: VoxelCache, U: np.ndarray,
                         eps: float = 1e-6) -> float:
    """Mean purity of every registry pair, voxels re-located under U."""
    U = np.asarray(U, dtype=np.float64)
    values = []
    rotated: Dict[str, np.ndarray] = {}
    for sample_id, c in registry.pairs():
        if sample_id not in rotated:
            rotated[sample_id] = transform_voxels(cache[sample_id].H, U)
        Ht = rotated[sample_id]
        values.append(purity(Ht, c, np.ones(Ht.shape[1]), eps).purity)
    if not values:
        raise DataError("registry is empty")
    return float(np.mean(values))


def purity_loss(
    pairs: Sequence[Tuple[str, int]],
    P,
    cache: VoxelCache,
    eps: float = 1e-6,
    registry: Optional[PrototypeRegistry] = None
) -> Tuple[Tensor, Tensor]:
    """
    Negative mean purity over (sample id, channel) pairs, differentiable in P.

    The located voxel is picked from the current U without gradient; only the
    purity of that column is differentiated.

    Returns:
        (loss, U)
    """
    if not pairs:
        raise UsageError("purity_loss needs a non-empty batch")
    U = matrix_exp_skew(P)
    Uv = np.asarray(U.data, dtype=np.float64)
    terms = []
    for sample_id, c in pairs:
        if registry is not None and not registry.contains(sample_id, c):
            raise RegistryError(f"sample '{sample_id}' is not a prototype of channel {c}")
        H = cache[sample_id].H
        v = int(np.argmax(Uv[c] @ H))
        column = dm.matmul(U, H[:, v])
        terms.append(dm.div(dm.take(column, c), dm.add(dm.l2_norm(column), eps)))
    loss = dm.scale(dm.add_n(terms), -1.0 / len(terms))
    return loss, U


# ---------------------------------------------------------------------------
# state and training


@dataclass
class DisentangleState:
    """Learned rotation, compensated classifier and prototype registry."""

    P: np.ndarray
    U: np.ndarray
    W_prime: np.ndarray
    registry: PrototypeRegistry
    curriculum: Curriculum
    eps: float = 1e-6
    backbone_hash: str = ""
    epochs_run: int = 0
    purity_history: List[Tuple[int, float]] = field(default_factory=list)

    @classmethod
    def identity(cls, params: BackboneParams, registry: PrototypeRegistry,
                 curriculum: Curriculum, eps: float = 1e-6) -> "DisentangleState":
        C = params.hyper.channels
        return cls(
            P=np.zeros((C, C)),
            U=np.eye(C),
            W_prime=np.asarray(params.W_cls, dtype=np.float64).copy(),
            registry=registry,
            curriculum=curriculum,
            eps=eps,
            backbone_hash=params.hash(),
        )

    def transformed(self, z: np.ndarray) -> np.ndarray:
        return self.U @ np.asarray(z, dtype=np.float64)

    def logits(self, z: np.ndarray) -> np.ndarray:
        """Compensated logits W' U z."""
        return self.W_prime @ self.transformed(z)

    def orthogonality_error(self) -> float:
        return orthogonality_error(self.U)


def train_stage2(
    params: BackboneParams,
    cache: VoxelCache,
    curriculum: Curriculum,
    epochs: int,
    lr: float = 1e-4,
    batch_size: int = 64,
    eps: float = 1e-6,
    seed: int = 0,
    threads: int = 1,
    show_progress: bool = False
) -> DisentangleState:
    """
    Learn U on the frozen backbone.

    P starts at zero (U = I). Every `update_period` epochs the registry is
    rediscovered with k from the curriculum; each epoch takes Adam steps on
    shuffled batches of registry (sample, channel) pairs.

    Raises:
        FrozenStateError: backbone not frozen, or modified during the run
    """
    if not params.frozen:
        raise FrozenStateError("Stage 2 requires a frozen backbone")
    start_hash = params.hash()
    if cache.backbone_hash != start_hash:
        raise FrozenStateError("voxel cache was built from a different backbone")

    C = params.hyper.channels
    P = np.zeros((C, C), dtype=np.float64)
    U = np.eye(C)
    optimizer = Adam()
    rng = np.random.default_rng(seed)

    registry = discover_prototypes(cache, U, curriculum.k_at(0), threads)
    history = [(0, mean_registry_purity(registry, cache, U, eps))]
    logger.info("Stage 2: C=%d, %d candidates, initial purity %.4f", C, len(cache), history[0][1])

    for epoch in progress(range(epochs), "stage 2", enabled=show_progress):
        if epoch > 0 and epoch % curriculum.update_period == 0:
            registry = discover_prototypes(cache, U, curriculum.k_at(epoch), threads)
            history.append((epoch, mean_registry_purity(registry, cache, U, eps)))
            logger.debug("epoch %d: registry k=%d purity %.4f", epoch, registry.k, history[-1][1])

        pairs = registry.pairs()
        order = rng.permutation(len(pairs))
        for i in range(0, len(order), batch_size):
            batch = [pairs[j] for j in order[i:i + batch_size]]
            tape = Tape(np.float64)
            loss, _ = purity_loss(batch, tape.watch(P, "P"), cache, eps)
            if not np.isfinite(loss.item()):
                raise TrainingError("purity loss is not finite", epoch=epoch)
            grads = backward(tape, loss)
            P = P - optimizer.deltas({"P": grads["P"]}, lr)["P"]
            U = matrix_exp_skew(P).data
            error = orthogonality_error(U)
            if error >= ORTHOGONALITY_TOLERANCE:
                raise TrainingError(f"U lost orthogonality ({error:.2e})", epoch=epoch)

    if epochs > 0:
        registry = discover_prototypes(cache, U, curriculum.k_at(epochs), threads)
        history.append((epochs, mean_registry_purity(registry, cache, U, eps)))

    if params.hash() != start_hash:
        raise FrozenStateError("backbone parameters changed during Stage 2")
    logger.info("Stage 2 done: purity %.4f -> %.4f", history[0][1], history[-1][1])
    return DisentangleState(
        P=P,
        U=U,
        W_prime=compensate_classifier(params.W_cls, U),
        registry=registry,
        curriculum=curriculum,
        eps=eps,
        backbone_hash=start_hash,
        epochs_run=epochs,
        purity_history=history,
    )
