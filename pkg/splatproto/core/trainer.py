"""
Stage-1 optimization: cross-entropy plus density alignment, Adam with cosine
decay, best-validation checkpoint retention.
"""

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .backbone import BackboneHyper, BackboneParams, forward, stage1_loss
from .diffmath import Tape, backward
from .errors import DataError, FrozenStateError, TrainingError
from .splat_io import LabeledSample, SplatDataset
from ..utils.helpers import ordered_map, progress

logger = logging.getLogger(__name__)

REPORT_VERSION = 1


class Adam:
    """Adaptive-moment updates for a set of named arrays."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.steps = 0
        self._m: Dict[str, np.ndarray] = {}
        self._v: Dict[str, np.ndarray] = {}

    def deltas(self, grads: Dict[str, np.ndarray], lr: float) -> Dict[str, np.ndarray]:
        """Advance the moments by one step and return the parameter decrements."""
        self.steps += 1
        c1 = 1.0 - self.beta1 ** self.steps
        c2 = 1.0 - self.beta2 ** self.steps
        out = {}
        for name, g in grads.items():
            g = np.asarray(g, dtype=np.float64)
            m = self._m.get(name, np.zeros_like(g))
            v = self._v.get(name, np.zeros_like(g))
            m = self.beta1 * m + (1 - self.beta1) * g
            v = self.beta2 * v + (1 - self.beta2) * g * g
            self._m[name], self._v[name] = m, v
            out[name] = lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return out

    def step(self, params: BackboneParams, grads: Dict[str, np.ndarray], lr: float) -> None:
        if params.frozen:
            raise FrozenStateError("cannot take an optimizer step on a frozen backbone")
        for name, delta in self.deltas(grads, lr).items():
            params.apply_update(name, delta)


def cosine_lr(base_lr: float, epoch: int, total_epochs: int) -> float:
    if total_epochs <= 1:
        return base_lr
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * epoch / total_epochs))


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    cls_loss: float
    density_loss: float
    val_accuracy: Optional[float]


@dataclass
class TrainReport:
    """Per-epoch losses and accuracies of one Stage-1 run."""

    seed: int
    epochs: List[EpochRecord] = field(default_factory=list)
    best_epoch: Optional[int] = None
    best_val_accuracy: Optional[float] = None
    test_accuracy: Optional[float] = None
    wall_time: float = 0.0
    n_parameters: int = 0
    stopped_early: bool = False

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["version"] = REPORT_VERSION
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> "TrainReport":
        data = dict(data)
        data.pop("version", None)
        data["epochs"] = [EpochRecord(**e) for e in data.get("epochs", [])]
        return cls(**data)


def sample_gradients(
    sample: LabeledSample, params: BackboneParams
) -> Tuple[Dict[str, np.ndarray], Tuple[float, float, float]]:
    """Gradients of one sample's Stage-1 loss on its own single-precision tape."""
    tape = Tape(np.float32)
    trace = forward(sample, params, tape)
    terms = stage1_loss(trace, sample.label, params.hyper)
    grads = backward(tape, terms.total)
    return grads, (terms.total.item(), terms.cls.item(), terms.density.item())


def batch_gradients(
    batch: Sequence[LabeledSample],
    params: BackboneParams,
    threads: int = 1
) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
    """
    Mean gradient over a batch.

    Per-sample tapes may run in parallel; the reduction always runs in batch
    order so the result does not depend on the thread count.

    Returns:
        (gradients by parameter name, per-sample [total, cls, density] losses)
    """
    if not batch:
        raise DataError("empty batch")
    results = ordered_map(lambda s: sample_gradients(s, params), list(batch), threads)
    summed = {name: np.zeros(array.shape, dtype=np.float64) for name, array in params.arrays.items()}
    for grads, _ in results:
        for name, g in grads.items():
            summed[name] += g
    scale = 1.0 / len(batch)
    mean = {name: g * scale for name, g in summed.items()}
    return mean, np.array([losses for _, losses in results], dtype=np.float64)


def predict_labels(params: BackboneParams, samples: Sequence[LabeledSample], threads: int = 1) -> np.ndarray:
    return np.array(ordered_map(lambda s: forward(s, params).predicted(), list(samples), threads),
                    dtype=np.int64)


def evaluate(params: BackboneParams, samples: Sequence[LabeledSample], threads: int = 1) -> float:
    """Fraction of samples whose argmax logit equals the label."""
    if not samples:
        raise DataError("cannot evaluate on an empty split")
    predicted = predict_labels(params, samples, threads)
    labels = np.array([s.label for s in samples])
    return float(np.mean(predicted == labels))


def freeze(params: BackboneParams) -> BackboneParams:
    """Read-only handle for Stage 2."""
    return params.freeze()


def train_stage1(
    dataset: SplatDataset,
    hyper: BackboneHyper,
    train_config,
    seed: int,
    threads: int = 1,
    show_progress: bool = False
) -> Tuple[BackboneParams, TrainReport]:
    """
    Train the backbone and keep the checkpoint with the best validation accuracy.

    Args:
        dataset: labeled dataset (train split must be non-empty)
        hyper: architecture and loss constants
        train_config: epochs, batch_size, lr, cosine, patience
        seed: seeds both initialization and batch order
        threads: per-sample gradient workers

    Returns:
        (best params, TrainReport)
    """
    train = dataset.samples("train", hyper.grid_size)
    val = dataset.samples("val", hyper.grid_size)
    test = dataset.samples("test", hyper.grid_size)
    if not train:
        raise DataError("train split is empty")

    start = time.time()
    params = BackboneParams.initialize(hyper, seed)
    report = TrainReport(seed=seed, n_parameters=params.n_parameters())
    optimizer = Adam()
    rng = np.random.default_rng(seed)
    best = params.copy()
    stale = 0
    epochs = train_config.epochs
    logger.info("Stage 1: %d train / %d val samples, %d parameters",
                len(train), len(val), params.n_parameters())

    for epoch in progress(range(epochs), "stage 1", enabled=show_progress):
        lr = cosine_lr(train_config.lr, epoch, epochs) if train_config.cosine else train_config.lr
        order = rng.permutation(len(train))
        losses = []
        for start_idx in range(0, len(order), train_config.batch_size):
            batch = [train[i] for i in order[start_idx:start_idx + train_config.batch_size]]
            grads, batch_losses = batch_gradients(batch, params, threads)
            if not np.isfinite(batch_losses).all() or not all(np.isfinite(g).all() for g in grads.values()):
                raise TrainingError("loss diverged (non-finite value)", epoch=epoch)
            optimizer.step(params, grads, lr)
            losses.append(batch_losses)

        losses = np.concatenate(losses, axis=0).mean(axis=0)
        val_acc = evaluate(params, val, threads) if val else None
        report.epochs.append(EpochRecord(
            epoch=epoch, lr=lr, train_loss=float(losses[0]), cls_loss=float(losses[1]),
            density_loss=float(losses[2]), val_accuracy=val_acc,
        ))
        logger.debug("epoch %d: loss %.4f (cls %.4f, density %.4f) val %s",
                     epoch, losses[0], losses[1], losses[2], val_acc)

        if val_acc is None:
            best, report.best_epoch = params.copy(), epoch
            continue
        if report.best_val_accuracy is None or val_acc > report.best_val_accuracy:
            best, report.best_epoch, report.best_val_accuracy = params.copy(), epoch, val_acc
            stale = 0
        else:
            stale += 1
            if stale >= train_config.patience:
                logger.info("early stop at epoch %d (best %d)", epoch, report.best_epoch)
                report.stopped_early = True
                break

    if test:
        report.test_accuracy = evaluate(best, test, threads)
    report.wall_time = time.time() - start
    return best, report
