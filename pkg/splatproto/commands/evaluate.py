"""evaluate command implementation"""

import logging
from dataclasses import asdict

from ..core.disentangler import DisentangleState, VoxelCache
from ..core.errors import DataError, DegenerateMetricError
from ..core.evalsuite import (decision_preservation, deletion_sweep, format_sweep,
                              mean_activated_density, purity_gain, registry_purity)
from ..core.trainer import evaluate
from ..utils.colors import header, metric, success, warning
from ..utils.helpers import format_percent
from .common import open_workspace, report_failure, resolve_config

REPORT_VERSION = 1

logger = logging.getLogger(__name__)


def evaluate_command(args):
    """Accuracy, decision preservation, deletion tests and prototype metrics."""
    try:
        config = resolve_config(args).validate()
        ws = open_workspace(config)
        dataset = ws.load_dataset()
        params = ws.load_backbone().freeze()
        state = ws.load_disentangle()
        ws.echo_config("evaluate", config)

        G = params.hyper.grid_size
        samples = dataset.samples(config.evaluate.split, G)
        if not samples:
            raise DataError(f"split '{config.evaluate.split}' is empty")

        accuracy = evaluate(params, samples, config.threads)
        decisions = decision_preservation(params, state, samples, config.threads)
        sweep = deletion_sweep(params, state, samples, config.evaluate.top_k_delete,
                               config.evaluate.control_seeds, config.seed, config.threads)

        cache = VoxelCache.build(dataset.samples("train", G), params, config.threads)
        identity = DisentangleState.identity(params, state.registry, state.curriculum, state.eps)
        purity_before = registry_purity(state, cache, identity.U)
        purity_after = registry_purity(state, cache, state.U)
        try:
            gain = purity_gain(identity, state, cache)
        except DegenerateMetricError as e:
            logger.warning("%s; purity gain not reported", e)
            gain = None
        density = mean_activated_density(state, cache)

        report = {
            "version": REPORT_VERSION,
            "split": config.evaluate.split,
            "accuracy": accuracy,
            "decision_preservation": asdict(decisions),
            "deletion": [
                {"k": r.k, "top": asdict(r.top), "random_mean_degradation": r.random_mean_degradation,
                 "random_std_degradation": r.random_std_degradation}
                for r in sweep
            ],
            "purity_without_disentangling": purity_before,
            "purity_with_disentangling": purity_after,
            "purity_gain": gain,
            "mean_activated_density": density,
        }
        ws.write_json(ws.eval_report_path, report)
        table = format_sweep(sweep)
        ws.write_text(ws.eval_table_path, table)

        print(header("Evaluation"))
        print(metric("accuracy", f"{accuracy:.4f}"))
        agreement = format_percent(100 * decisions.argmax_agreement)
        line = metric("decision preservation", f"{agreement} (max |dlogit| {decisions.max_abs_deviation:.2e})")
        print(line if decisions.argmax_agreement == 1.0 else warning(line))
        print(metric("purity", f"{purity_before:.4f} -> {purity_after:.4f} "
                               f"({'n/a' if gain is None else format_percent(gain, signed=True)})"))
        print(metric("mean activated density", f"{density:.1f}"))
        print(table)
        print(success(f"Wrote {ws.eval_report_path}"))
        return 0

    except (Exception, KeyboardInterrupt) as e:
        return report_failure("evaluate", e)
