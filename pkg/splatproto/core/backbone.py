"""
Voxel-aggregated point network.

Two alignment nets (3x3 on positions, 64x64 on features), shared per-point
layers, max pooling inside each input-space voxel, mean pooling over the
grid and a bias-free linear classifier. The same code runs as a constant
forward pass or on a tape for gradients.
"""

import hashlib
import json
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterator, List, NamedTuple, Optional, Tuple

import numpy as np

from . import diffmath as dm
from .diffmath import Tape, Tensor
from .errors import ConfigError, DataError, FrozenStateError
from .splat_io import EXTRA_FEATURES, LabeledSample

POINT_WIDTH = 3 + EXTRA_FEATURES
MLP1_WIDTHS = (64, 64)
FEATURE_STN_SIZE = 64
MLP2_HIDDEN = 128
DEFAULT_STN_WIDTHS = (64, 128, 1024, 512, 256)


@dataclass
class BackboneHyper:
    """Architecture and Stage-1 loss constants."""

    grid_size: int = 7
    channels: int = 256
    n_classes: int = 4
    tau: float = 1.0
    beta: float = 1.0
    eps: float = 1e-6
    lambda_density: float = 3.5
    stn3_widths: List[int] = field(default_factory=lambda: list(DEFAULT_STN_WIDTHS))
    stn64_widths: List[int] = field(default_factory=lambda: list(DEFAULT_STN_WIDTHS))

    @property
    def n_voxels(self) -> int:
        return self.grid_size ** 3

    @classmethod
    def from_config(cls, hyper, n_classes: int) -> "BackboneHyper":
        return cls(
            grid_size=hyper.grid_size,
            channels=hyper.channels,
            n_classes=n_classes,
            tau=hyper.tau,
            beta=hyper.beta,
            eps=hyper.eps,
            lambda_density=hyper.lambda_density,
            stn3_widths=list(hyper.stn3_widths),
            stn64_widths=list(hyper.stn64_widths),
        )


def _layer_shapes(hyper: BackboneHyper) -> List[Tuple[str, int, int, bool]]:
    """(prefix, fan_in, fan_out, has_bias) for every layer in execution order."""
    layers = []
    for prefix, size, widths in (("stn3", 3, hyper.stn3_widths),
                                 ("stn64", FEATURE_STN_SIZE, hyper.stn64_widths)):
        c0, c1, c2, f0, f1 = widths
        chain = [size, c0, c1, c2]
        for i in range(3):
            layers.append((f"{prefix}.conv{i}", chain[i], chain[i + 1], True))
        layers.append((f"{prefix}.fc0", c2, f0, True))
        layers.append((f"{prefix}.fc1", f0, f1, True))
        layers.append((f"{prefix}.out", f1, size * size, True))
    layers.append(("mlp1.conv0", POINT_WIDTH, MLP1_WIDTHS[0], True))
    layers.append(("mlp1.conv1", MLP1_WIDTHS[0], MLP1_WIDTHS[1], True))
    layers.append(("mlp2.conv0", MLP1_WIDTHS[1], MLP2_HIDDEN, True))
    layers.append(("mlp2.conv1", MLP2_HIDDEN, hyper.channels, True))
    layers.append(("cls", hyper.channels, hyper.n_classes, False))
    return layers


class BackboneParams:
    """Named Stage-1 weights plus the hyper block they were built for.

    Arrays are stored in execution order under names like "stn3.conv0.W".
    A frozen instance holds read-only arrays and rejects updates.
    """

    def __init__(
        self,
        arrays: "OrderedDict[str, np.ndarray]",
        hyper: BackboneHyper,
        seed: int = 0,
        frozen: bool = False
    ):
        self.arrays = arrays
        self.hyper = hyper
        self.seed = seed
        self.frozen = frozen
        self._check_shapes()

    @classmethod
    def initialize(cls, hyper: BackboneHyper, seed: int) -> "BackboneParams":
        """He-normal per-point and dense layers; alignment nets start at identity."""
        rng = np.random.default_rng(seed)
        arrays: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for prefix, fan_in, fan_out, has_bias in _layer_shapes(hyper):
            if prefix.endswith(".out"):
                size = int(round(np.sqrt(fan_out)))
                arrays[f"{prefix}.W"] = np.zeros((fan_out, fan_in), dtype=np.float32)
                arrays[f"{prefix}.b"] = np.eye(size, dtype=np.float32).reshape(-1)
                continue
            std = np.sqrt((1.0 if prefix == "cls" else 2.0) / fan_in)
            arrays[f"{prefix}.W"] = rng.normal(0.0, std, size=(fan_out, fan_in)).astype(np.float32)
            if has_bias:
                arrays[f"{prefix}.b"] = np.zeros(fan_out, dtype=np.float32)
        return cls(arrays, hyper, seed=seed)

    def _check_shapes(self) -> None:
        for prefix, fan_in, fan_out, has_bias in _layer_shapes(self.hyper):
            W = self.arrays.get(f"{prefix}.W")
            if W is None or W.shape != (fan_out, fan_in):
                raise ConfigError(
                    f"{prefix}.W: expected shape {(fan_out, fan_in)}, "
                    f"got {None if W is None else W.shape}"
                )
            if has_bias and self.arrays.get(f"{prefix}.b", np.empty(0)).shape != (fan_out,):
                raise ConfigError(f"{prefix}.b: expected shape {(fan_out,)}")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.arrays)

    def __len__(self) -> int:
        return len(self.arrays)

    @property
    def W_cls(self) -> np.ndarray:
        return self.arrays["cls.W"]

    def n_parameters(self) -> int:
        return int(sum(a.size for a in self.arrays.values()))

    def copy(self) -> "BackboneParams":
        arrays = OrderedDict((k, np.array(v, copy=True)) for k, v in self.arrays.items())
        return BackboneParams(arrays, self.hyper, seed=self.seed)

    def freeze(self) -> "BackboneParams":
        """Read-only copy; forward passes are unchanged, updates raise."""
        frozen = self.copy()
        for array in frozen.arrays.values():
            array.setflags(write=False)
        frozen.frozen = True
        return frozen

    def apply_update(self, name: str, delta: np.ndarray) -> None:
        if self.frozen:
            raise FrozenStateError(f"backbone is frozen; refusing to update '{name}'")
        self.arrays[name] -= delta.astype(self.arrays[name].dtype)

    def hash(self) -> str:
        """sha1 over names, shapes, bytes and the hyper block."""
        h = hashlib.sha1()
        for name, array in self.arrays.items():
            h.update(name.encode())
            h.update(str(array.shape).encode())
            h.update(np.ascontiguousarray(array, dtype=np.float32).tobytes())
        h.update(json.dumps(asdict(self.hyper), sort_keys=True).encode())
        return h.hexdigest()

    def __repr__(self):
        state = ", frozen" if self.frozen else ""
        return (f"BackboneParams(G={self.hyper.grid_size}, C={self.hyper.channels}, "
                f"K={self.hyper.n_classes}, n={self.n_parameters()}{state})")


@dataclass
class ForwardTrace:
    """Every intermediate a caller may need, in canonical point order."""

    point_features: Tensor
    voxel_features: Tensor
    z: Tensor
    logits: Tensor
    activation_norms: Tensor
    p: Tensor
    q: np.ndarray
    order: np.ndarray
    voxel_index: np.ndarray
    counts: np.ndarray

    @property
    def H(self) -> Tensor:
        return self.voxel_features

    def predicted(self) -> int:
        return int(np.argmax(self.logits.data))


class LossTerms(NamedTuple):
    total: Tensor
    cls: Tensor
    density: Tensor


def canonical_order(sample: LabeledSample) -> np.ndarray:
    """Sort points by voxel, then by their input values.

    Any permutation of the same primitives yields the same ordered arrays,
    so forward passes are bit-identical under reordering.
    """
    keys = [sample.attributes[:, j] for j in reversed(range(sample.attributes.shape[1]))]
    keys += [sample.normalized_positions[:, j] for j in (2, 1, 0)]
    keys.append(sample.voxel_index)
    return np.lexsort(keys)


def bind(params: BackboneParams, tape: Optional[Tape] = None, dtype=np.float32) -> Dict[str, Tensor]:
    """Wrap every parameter as a tape leaf (or a constant without a tape)."""
    if tape is not None:
        return OrderedDict((name, tape.watch(array, name)) for name, array in params.arrays.items())
    return OrderedDict((name, Tensor(np.asarray(array, dtype=dtype)))
                       for name, array in params.arrays.items())


def _dense(x, weights: Dict[str, Tensor], prefix: str, activate: bool = True) -> Tensor:
    y = dm.linear(x, weights[f"{prefix}.W"], weights.get(f"{prefix}.b"))
    return dm.relu(y) if activate else y


def stn_forward(inputs, weights: Dict[str, Tensor], prefix: str, size: int) -> Tensor:
    """
    Predict a size x size alignment matrix from per-point vectors.

    Args:
        inputs: channel-major size x N tensor
        weights: bound parameters
        prefix: "stn3" or "stn64"
        size: matrix side

    Returns:
        size x size transform (identity for a freshly initialized net)
    """
    x = dm.as_tensor(inputs)
    if x.shape[0] != size:
        raise ConfigError(f"{prefix}: expected {size}-wide points, got {x.shape[0]}")
    for i in range(3):
        x = _dense(x, weights, f"{prefix}.conv{i}")
    pooled = dm.reshape(dm.masked_max_pool(x, np.zeros(x.shape[1], dtype=np.int64), 1),
                        (x.shape[0],))
    h = _dense(pooled, weights, f"{prefix}.fc0")
    h = _dense(h, weights, f"{prefix}.fc1")
    out = _dense(h, weights, f"{prefix}.out", activate=False)
    return dm.reshape(out, (size, size))


def apply_transform(T: Tensor, points: Tensor) -> Tensor:
    """Right-multiply every point (row) vector by T, in channel-major layout."""
    return dm.matmul(dm.transpose(T), points)


def density_distributions(H, counts, tau: float, beta: float, eps: float) -> Tuple[Tensor, Tensor, np.ndarray]:
    """
    Activation and count distributions over all voxels.

    Returns:
        (a, p, q): column norms of H, temperature softmax of a, count target q
    """
    a = dm.column_norms(H)
    p = dm.temp_softmax(a, tau)
    weights = np.power(np.asarray(counts, dtype=np.float64), beta) + eps
    q = weights / weights.sum()
    return a, p, q


def forward(
    sample: LabeledSample,
    params: BackboneParams,
    tape: Optional[Tape] = None,
    weights: Optional[Dict[str, Tensor]] = None
) -> ForwardTrace:
    """
    Run the network on one sample.

    Voxel ids are the ones stored on the sample; they are never recomputed
    from aligned coordinates.

    Args:
        sample: voxelized sample (grid size must match params)
        params: backbone weights
        tape: record for gradients; parameters become leaves named as in params
        weights: pre-bound parameters (overrides tape binding)

    Returns:
        ForwardTrace
    """
    hyper = params.hyper
    if sample.grid_size != hyper.grid_size:
        raise ConfigError(
            f"sample '{sample.sample_id}' voxelized for G={sample.grid_size}, "
            f"backbone expects G={hyper.grid_size}"
        )
    if len(sample) == 0:
        raise DataError(f"sample '{sample.sample_id}' has no primitives")

    if weights is None:
        weights = bind(params, tape)
    dtype = tape.dtype if tape is not None else np.float32

    order = canonical_order(sample)
    positions, attributes = sample.network_inputs()
    positions = Tensor(np.ascontiguousarray(positions[:, order], dtype=dtype))
    attributes = Tensor(np.ascontiguousarray(attributes[:, order], dtype=dtype))
    voxel_index = sample.voxel_index[order]

    T3 = stn_forward(positions, weights, "stn3", 3)
    x = dm.concat_rows([apply_transform(T3, positions), attributes])
    x = _dense(x, weights, "mlp1.conv0")
    x = _dense(x, weights, "mlp1.conv1")
    T64 = stn_forward(x, weights, "stn64", FEATURE_STN_SIZE)
    x = apply_transform(T64, x)
    x = _dense(x, weights, "mlp2.conv0")
    f = _dense(x, weights, "mlp2.conv1")

    H = dm.masked_max_pool(f, voxel_index, hyper.n_voxels)
    z = dm.mean_pool(H, axis=1)
    logits = dm.matmul(weights["cls.W"], z)
    a, p, q = density_distributions(H, sample.voxel_counts, hyper.tau, hyper.beta, hyper.eps)

    return ForwardTrace(
        point_features=f,
        voxel_features=H,
        z=z,
        logits=logits,
        activation_norms=a,
        p=p,
        q=q.astype(dtype),
        order=order,
        voxel_index=voxel_index,
        counts=sample.voxel_counts,
    )


def stage1_loss(trace: ForwardTrace, label: int, hyper: BackboneHyper) -> LossTerms:
    """Cross-entropy plus lambda-weighted KL(p || q); the density term is always reported."""
    cls_loss = dm.softmax_cross_entropy(trace.logits, label)
    density = dm.kl_divergence(trace.p, trace.q)
    total = dm.add(cls_loss, dm.scale(density, hyper.lambda_density))
    return LossTerms(total=total, cls=cls_loss, density=density)


def predict(sample: LabeledSample, params: BackboneParams) -> np.ndarray:
    """Logits of a constant single-precision forward pass."""
    return forward(sample, params).logits.data
