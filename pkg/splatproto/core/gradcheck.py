"""
Central finite-difference checks of the tape gradients.

Every check runs in double precision. Inputs are drawn away from relu kinks
and max-pool ties so the numeric derivative is well defined.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from . import diffmath as dm
from .backbone import BackboneHyper, BackboneParams, forward, stage1_loss
from .diffmath import Tape, Tensor, backward
from .disentangler import CachedSample, VoxelCache, purity_loss
from .splat_io import SplatCloud, make_sample

logger = logging.getLogger(__name__)

STEP = 1e-5
TOLERANCE = 1e-4

LossFn = Callable[[Tape, Dict[str, Tensor]], Tensor]


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / max(||a||, ||n||), guarded for all-zero gradients."""
    diff = np.linalg.norm(analytic - numeric)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(diff / scale)


def _evaluate(fn: LossFn, inputs: Dict[str, np.ndarray]) -> float:
    tape = Tape(np.float64)
    tensors = {name: tape.watch(array, name) for name, array in inputs.items()}
    return fn(tape, tensors).item()


def check_gradients(
    fn: LossFn,
    inputs: Dict[str, np.ndarray],
    h: float = STEP,
    max_entries: Optional[int] = None,
    seed: int = 0
) -> Dict[str, float]:
    """
    Compare tape gradients with central differences.

    Args:
        fn: builds a scalar loss from tape-bound inputs
        inputs: named arrays (converted to float64)
        h: finite-difference step
        max_entries: check at most this many coordinates per input
        seed: picks the sampled coordinates

    Returns:
        relative error per input name
    """
    inputs = {name: np.array(a, dtype=np.float64) for name, a in inputs.items()}
    tape = Tape(np.float64)
    tensors = {name: tape.watch(array, name) for name, array in inputs.items()}
    grads = backward(tape, fn(tape, tensors))

    rng = np.random.default_rng(seed)
    errors = {}
    for name, array in inputs.items():
        flat = array.reshape(-1)
        coords = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            coords = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        numeric = np.empty(len(coords))
        for j, i in enumerate(coords):
            original = flat[i]
            flat[i] = original + h
            plus = _evaluate(fn, inputs)
            flat[i] = original - h
            minus = _evaluate(fn, inputs)
            flat[i] = original
            numeric[j] = (plus - minus) / (2 * h)
        errors[name] = relative_error(grads[name].reshape(-1)[coords], numeric)
    return errors


@dataclass
class GradcheckResult:
    name: str
    errors: Dict[str, float] = field(default_factory=dict)
    threshold: float = TOLERANCE

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error < self.threshold


def contract(t: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar <t, weights>, used to reduce a tensor output to a loss."""
    prod = dm.mul(t, weights.reshape(t.shape))
    return dm.matmul(dm.reshape(prod, (1, prod.data.size)), np.ones(prod.data.size))


def _away_from_zero(rng, shape, margin=0.1):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin, x)


def gradcheck_backbone(seed: int = 0, n_primitives: int = 16, channels: int = 8,
                       max_entries: Optional[int] = 12) -> Dict[str, float]:
    """Stage-1 loss gradient w.r.t. every backbone parameter on a small sample."""
    rng = np.random.default_rng(seed)
    rotations = rng.normal(size=(n_primitives, 4))
    cloud = SplatCloud(
        positions=rng.uniform(-1, 1, size=(n_primitives, 3)),
        scales=rng.uniform(0.01, 0.1, size=(n_primitives, 3)),
        rotations=rotations / np.linalg.norm(rotations, axis=1, keepdims=True),
        opacities=rng.uniform(0.5, 1.0, size=n_primitives),
    )
    sample = make_sample(cloud, label=1, grid_size=2, sample_id="gradcheck")
    small = [8, 8, 16, 16, 8]
    hyper = BackboneHyper(grid_size=2, channels=channels, n_classes=3,
                          stn3_widths=small, stn64_widths=small)
    params = BackboneParams.initialize(hyper, seed)
    for name in params:
        jitter = rng.normal(0, 0.05, size=params[name].shape)
        params.arrays[name] = params.arrays[name] + jitter.astype(np.float32)

    def loss(tape, tensors):
        trace = forward(sample, params, tape, weights=tensors)
        return stage1_loss(trace, sample.label, hyper).total

    return check_gradients(loss, dict(params.arrays), max_entries=max_entries, seed=seed)


def gradcheck_purity(seed: int = 0, channels: int = 8, n_samples: int = 5) -> Dict[str, float]:
    """Purity loss gradient w.r.t. the skew generator P."""
    rng = np.random.default_rng(seed)
    entries = {}
    for i in range(n_samples):
        n_vox = int(rng.integers(2, 6))
        entries[f"s{i}"] = CachedSample(
            sample_id=f"s{i}", label=0, voxels=np.arange(n_vox), counts=np.ones(n_vox, dtype=int),
            H=np.abs(rng.normal(size=(channels, n_vox))), z=np.zeros(channels), logits=np.zeros(1),
        )
    cache = VoxelCache(entries, "")
    pairs = [(f"s{i % n_samples}", c) for i, c in enumerate(range(channels))]

    def loss(tape, tensors):
        return purity_loss(pairs, tensors["P"], cache)[0]

    return check_gradients(loss, {"P": rng.normal(0, 0.3, size=(channels, channels))})


def _op_cases(rng) -> Dict[str, Callable[[], Dict[str, float]]]:
    def R(*shape):
        return rng.normal(size=shape)

    def linear():
        Wy = R(5, 3)
        return check_gradients(lambda t, v: contract(dm.linear(v["x"], v["W"], v["b"]), Wy),
                               {"x": R(4, 3), "W": R(5, 4), "b": R(5)})

    def relu():
        Wy = R(4, 6)
        return check_gradients(lambda t, v: contract(dm.relu(v["x"]), Wy),
                               {"x": _away_from_zero(rng, (4, 6))})

    def mean_pool():
        Wy = R(4)
        return check_gradients(lambda t, v: contract(dm.mean_pool(v["x"], 1), Wy), {"x": R(4, 5)})

    def l2_norm():
        return check_gradients(lambda t, v: dm.l2_norm(v["x"]), {"x": R(7)})

    def column_norms():
        Wy = R(5)
        return check_gradients(lambda t, v: contract(dm.column_norms(v["x"]), Wy), {"x": R(3, 5)})

    def masked_max_pool():
        values = rng.permutation(24).reshape(3, 8) * 0.37
        groups = np.array([0, 2, 2, 0, 3, 3, 3, 0])
        Wy = R(3, 4)
        return check_gradients(lambda t, v: contract(dm.masked_max_pool(v["x"], groups, 4), Wy),
                               {"x": values})

    def cross_entropy():
        return check_gradients(lambda t, v: dm.softmax_cross_entropy(v["logits"], 2), {"logits": R(5)})

    def temp_softmax():
        Wy = R(6)
        return check_gradients(lambda t, v: contract(dm.temp_softmax(v["a"], 0.7), Wy),
                               {"a": _away_from_zero(rng, 6)})

    def kl():
        p, q = rng.uniform(0.1, 1, 6), rng.uniform(0.1, 1, 6)
        return check_gradients(lambda t, v: dm.kl_divergence(v["p"], v["q"]),
                               {"p": p / p.sum(), "q": q / q.sum()})

    def matrix_exp():
        Wy = R(6, 6)
        return check_gradients(lambda t, v: contract(dm.matrix_exp_skew(v["P"]), Wy),
                               {"P": R(6, 6)})

    return {
        "linear": linear,
        "relu": relu,
        "mean_pool": mean_pool,
        "l2_norm": l2_norm,
        "column_norms": column_norms,
        "masked_max_pool": masked_max_pool,
        "softmax_cross_entropy": cross_entropy,
        "temp_softmax": temp_softmax,
        "kl_divergence": kl,
        "matrix_exp_skew": matrix_exp,
        "stage1_loss": lambda: gradcheck_backbone(int(rng.integers(1 << 30))),
        "purity_loss": lambda: gradcheck_purity(int(rng.integers(1 << 30))),
    }


def run_suite(seed: int = 0, threshold: float = TOLERANCE,
              only: Optional[List[str]] = None) -> List[GradcheckResult]:
    """Run every gradient check (or the named subset) and report the max relative errors."""
    rng = np.random.default_rng(seed)
    cases = _op_cases(rng)
    results = []
    for name, case in cases.items():
        if only and name not in only:
            continue
        result = GradcheckResult(name, case(), threshold)
        logger.debug("gradcheck %s: %.2e", name, result.max_error)
        results.append(result)
    return results


SUITE_NAMES = ("linear", "relu", "mean_pool", "l2_norm", "column_norms", "masked_max_pool",
               "softmax_cross_entropy", "temp_softmax", "kl_divergence", "matrix_exp_skew",
               "stage1_loss", "purity_loss")
