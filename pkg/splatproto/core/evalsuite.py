"""
Faithfulness and interpretability metrics: deletion tests with a random
control, decision preservation, purity gain, activated-voxel density and the
one-at-a-time hyperparameter ablation.
"""

import logging
import time
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .backbone import BackboneHyper, BackboneParams, forward
from .disentangler import (Curriculum, DisentangleState, VoxelCache, mean_registry_purity,
                           train_stage2, transform_voxels)
from .errors import ConfigError, DataError, DegenerateMetricError, SplatProtoError
from .explainer import channel_importance, localize, top_channels
from .splat_io import LabeledSample, SplatDataset
from .trainer import evaluate, train_stage1
from ..utils.helpers import format_percent, format_table, ordered_map, progress

logger = logging.getLogger(__name__)


@dataclass
class DeletionReport:
    """Accuracy before and after removing voxels from every sample."""

    k: int
    mode: str
    baseline_accuracy: float
    perturbed_accuracy: float
    degradation: float
    n_samples: int
    n_emptied: int = 0
    decision_mismatches: int = 0
    seed: Optional[int] = None


def relative_degradation(baseline: float, perturbed: float) -> float:
    """(baseline - perturbed) / baseline in percent; 0 with a warning when baseline is 0."""
    if baseline == 0:
        logger.warning("baseline accuracy is 0; reporting zero degradation")
        return 0.0
    return 100.0 * (baseline - perturbed) / baseline


@dataclass
class _Outcome:
    correct: bool
    emptied: bool = False
    mismatch: bool = False


def _compensated_prediction(sample: LabeledSample, params: BackboneParams,
                            state: DisentangleState) -> Tuple[int, bool, np.ndarray, np.ndarray]:
    """(W' U z prediction, agrees with W z, H~, z~)."""
    trace = forward(sample, params)
    Ht = transform_voxels(np.asarray(trace.H.data, dtype=np.float64), state.U)
    z_tilde = state.transformed(trace.z.data)
    predicted = int(np.argmax(state.W_prime @ z_tilde))
    return predicted, predicted == trace.predicted(), Ht, z_tilde


def _score_perturbed(sample: LabeledSample, removed_voxels: np.ndarray,
                     params: BackboneParams, state: DisentangleState) -> _Outcome:
    if removed_voxels.size == 0:
        predicted, agrees, _, _ = _compensated_prediction(sample, params, state)
        return _Outcome(predicted == sample.label, mismatch=not agrees)
    keep = ~np.isin(sample.voxel_index, removed_voxels)
    if not keep.any():
        logger.info("sample '%s' is empty after deletion; counted as misclassified", sample.sample_id)
        return _Outcome(False, emptied=True)
    predicted, agrees, _, _ = _compensated_prediction(sample.subset(keep), params, state)
    return _Outcome(predicted == sample.label, mismatch=not agrees)


def _baseline(samples: Sequence[LabeledSample], params, state, threads) -> float:
    if not samples:
        raise DataError("deletion tests need at least one sample")
    outcomes = ordered_map(
        lambda s: _compensated_prediction(s, params, state)[0] == s.label, list(samples), threads)
    return float(np.mean(outcomes))


def _report(k, mode, baseline, outcomes: List[_Outcome], seed=None) -> DeletionReport:
    perturbed = float(np.mean([o.correct for o in outcomes]))
    return DeletionReport(
        k=k,
        mode=mode,
        baseline_accuracy=baseline,
        perturbed_accuracy=perturbed,
        degradation=relative_degradation(baseline, perturbed),
        n_samples=len(outcomes),
        n_emptied=sum(o.emptied for o in outcomes),
        decision_mismatches=sum(o.mismatch for o in outcomes),
        seed=seed,
    )


def top_voxels(sample: LabeledSample, params: BackboneParams, state: DisentangleState, k: int) -> np.ndarray:
    """Distinct located voxels of the k most important channels, in channel rank order."""
    predicted, _, Ht, z_tilde = _compensated_prediction(sample, params, state)
    scores = channel_importance(z_tilde, state.W_prime, predicted)
    voxels: List[int] = []
    for c in top_channels(scores, k):
        v = localize(Ht, int(c), sample.voxel_counts)
        if v not in voxels:
            voxels.append(v)
    return np.array(voxels, dtype=np.int64)


def deletion_test(
    params: BackboneParams,
    state: DisentangleState,
    samples: Sequence[LabeledSample],
    k: int,
    threads: int = 1,
    baseline: Optional[float] = None
) -> DeletionReport:
    """Remove every primitive in the located voxels of the top-k channels and re-score."""
    if k < 1 or k > params.hyper.channels:
        raise ConfigError(f"k must lie in [1, {params.hyper.channels}], got {k}")
    if baseline is None:
        baseline = _baseline(samples, params, state, threads)
    outcomes = ordered_map(
        lambda s: _score_perturbed(s, top_voxels(s, params, state, k), params, state),
        list(samples), threads)
    return _report(k, "top", baseline, outcomes)


def random_deletion_control(
    params: BackboneParams,
    state: DisentangleState,
    samples: Sequence[LabeledSample],
    k: int,
    seed: int,
    threads: int = 1,
    baseline: Optional[float] = None
) -> DeletionReport:
    """As deletion_test, with k voxels drawn uniformly from each sample's occupied voxels."""
    if k < 0:
        raise ConfigError(f"k must be >= 0, got {k}")
    if baseline is None:
        baseline = _baseline(samples, params, state, threads)
    rng = np.random.default_rng(seed)
    drawn = []
    for sample in samples:
        occupied = sample.occupied_voxels()
        drawn.append(rng.choice(occupied, size=min(k, occupied.size), replace=False))
    outcomes = ordered_map(
        lambda pair: _score_perturbed(pair[0], pair[1], params, state),
        list(zip(samples, drawn)), threads)
    return _report(k, "random", baseline, outcomes, seed=seed)


@dataclass
class SweepRow:
    k: int
    top: DeletionReport
    random_mean_degradation: float
    random_std_degradation: float


def deletion_sweep(
    params: BackboneParams,
    state: DisentangleState,
    samples: Sequence[LabeledSample],
    max_k: int,
    control_seeds: int,
    seed: int = 0,
    threads: int = 1
) -> List[SweepRow]:
    """Top-voxel deletion for k = 1..max_k against the random control averaged over seeds."""
    baseline = _baseline(samples, params, state, threads)
    rows = []
    for k in range(1, max_k + 1):
        top = deletion_test(params, state, samples, k, threads, baseline)
        controls = [
            random_deletion_control(params, state, samples, k, seed + i, threads, baseline).degradation
            for i in range(control_seeds)
        ]
        rows.append(SweepRow(k, top, float(np.mean(controls)), float(np.std(controls))))
    return rows


def format_sweep(rows: List[SweepRow]) -> str:
    return format_table(
        [[r.k, f"{r.top.baseline_accuracy:.3f}", f"{r.top.perturbed_accuracy:.3f}",
          format_percent(r.top.degradation), format_percent(r.random_mean_degradation),
          r.top.n_emptied] for r in rows],
        headers=["k", "Base acc.", "Deleted acc.", "Degradation", "Random ctrl.", "Emptied"],
    )


@dataclass
class DecisionReport:
    """Agreement between compensated and original logits."""

    n_samples: int
    argmax_agreement: float
    max_abs_deviation: float


def decision_preservation(params: BackboneParams, state: DisentangleState,
                          samples: Sequence[LabeledSample], threads: int = 1) -> DecisionReport:
    if not samples:
        raise DataError("decision preservation needs at least one sample")

    def compare(sample):
        trace = forward(sample, params)
        original = trace.logits.data.astype(np.float64)
        compensated = state.logits(trace.z.data)
        return (int(np.argmax(original)) == int(np.argmax(compensated)),
                float(np.abs(original - compensated).max()))

    results = ordered_map(compare, list(samples), threads)
    return DecisionReport(
        n_samples=len(results),
        argmax_agreement=float(np.mean([r[0] for r in results])),
        max_abs_deviation=float(max(r[1] for r in results)),
    )


# ---------------------------------------------------------------------------
# prototype metrics


def registry_purity(state: DisentangleState, cache: VoxelCache, U: np.ndarray) -> float:
    """Mean purity of the pairs of state's registry under rotation U."""
    return mean_registry_purity(state.registry, cache, U, state.eps)


def purity_gain(state_before: DisentangleState, state_after: DisentangleState, cache: VoxelCache) -> float:
    """Relative purity change in percent over the final registry of state_after."""
    if state_before.backbone_hash and state_after.backbone_hash \
            and state_before.backbone_hash != state_after.backbone_hash:
        raise ConfigError("purity_gain needs two states of the same backbone")
    before = registry_purity(state_after, cache, state_before.U)
    after = registry_purity(state_after, cache, state_after.U)
    if before == 0:
        raise DegenerateMetricError("mean purity before Stage 2 is zero")
    return 100.0 * (after - before) / before


def mean_activated_density(state: DisentangleState, cache: VoxelCache) -> float:
    """Mean primitive count of the registry's located voxels."""
    counts = [cache[e.sample_id].count_at(e.voxel) for _, e in state.registry.entries()]
    return float(np.mean(counts))


# ---------------------------------------------------------------------------
# ablation


@dataclass
class AblationRow:
    parameter: str
    value: float
    accuracy: Optional[float] = None
    purity_gain: Optional[float] = None
    density: Optional[float] = None
    seconds: float = 0.0
    error: Optional[str] = None


def run_pipeline(dataset: SplatDataset, config, threads: int = 1) -> Tuple[float, float, float]:
    """Stage 1, Stage 2 and prototype metrics for one configuration.

    Returns:
        (test accuracy, purity gain %, mean activated density)
    """
    hyper = BackboneHyper.from_config(config.hyper, len(dataset.class_names))
    params, _ = train_stage1(dataset, hyper, config.train, config.seed, threads)
    frozen = params.freeze()
    cache = VoxelCache.build(dataset.samples("train", hyper.grid_size), frozen, threads)
    curriculum = Curriculum(config.hyper.k_init, config.hyper.k_final,
                            config.disentangle.horizon, config.disentangle.update_period)
    state = train_stage2(frozen, cache, curriculum, config.disentangle.epochs,
                         config.disentangle.lr, config.disentangle.batch_size,
                         config.hyper.eps, config.seed, threads)
    identity = DisentangleState.identity(frozen, state.registry, curriculum, config.hyper.eps)
    test = dataset.samples("test", hyper.grid_size)
    accuracy = evaluate(frozen, test, threads)
    return accuracy, purity_gain(identity, state, cache), mean_activated_density(state, cache)


ABLATION_PARAMETERS = (("lambda_density", "λ"), ("grid_size", "G"), ("channels", "C"))


def ablation_run(grid: Dict[str, Sequence], base_config, dataset: SplatDataset,
                 threads: int = 1, show_progress: bool = False) -> List[AblationRow]:
    """
    Vary one hyperparameter at a time around base_config.

    Row failures are recorded on the row and the sweep continues.
    """
    jobs = [(name, value) for name, _ in ABLATION_PARAMETERS for value in grid.get(name, [])]
    rows = []
    for name, value in progress(jobs, "ablation", enabled=show_progress):
        config = replace(base_config, hyper=replace(base_config.hyper, **{name: value}))
        row = AblationRow(parameter=name, value=value)
        start = time.time()
        try:
            config.validate()
            row.accuracy, row.purity_gain, row.density = run_pipeline(dataset, config, threads)
        except (SplatProtoError, ValueError, ArithmeticError) as e:
            logger.warning("ablation %s=%s failed: %s", name, value, e)
            row.error = f"{type(e).__name__}: {e}"
        row.seconds = time.time() - start
        rows.append(row)
    return rows


def format_ablation(rows: List[AblationRow]) -> str:
    labels = dict(ABLATION_PARAMETERS)

    def cell(value, fmt):
        return "-" if value is None else fmt(value)

    return format_table(
        [[labels.get(r.parameter, r.parameter), r.value,
          cell(r.accuracy, lambda a: f"{100 * a:.1f}"),
          cell(r.purity_gain, lambda g: format_percent(g, signed=True)),
          cell(r.density, lambda d: f"{d:.0f}"),
          r.error or ""] for r in rows],
        headers=["Param", "Value", "Acc.", "Pur. Gain", "Dens.", "Error"],
    )