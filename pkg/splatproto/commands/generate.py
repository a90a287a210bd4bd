"""generate command implementation"""

import hashlib
from dataclasses import replace

import numpy as np

from ..core.splat_io import SplatDataset, generate_cloud, split_dataset, write_ply
from ..utils.colors import info, metric, success
from ..utils.helpers import pluralize, progress
from .common import open_workspace, report_failure, resolve_config, show_progress


def generate_command(args):
    """Write a synthetic labeled dataset and its manifest."""
    try:
        config = resolve_config(args)
        overrides = {}
        if getattr(args, "classes", None):
            overrides["classes"] = [c.strip() for c in args.classes.split(",") if c.strip()]
        for name in ("per_class", "n_primitives", "feature_mode", "outlier_fraction"):
            if getattr(args, name, None) is not None:
                overrides[name] = getattr(args, name)
        config = replace(config, generate=replace(config.generate, **overrides)).validate()
        g = config.generate

        ws = open_workspace(config)
        ws.prepare_dataset_dir(force=getattr(args, "force", False))

        jobs = [(label, name, i) for label, name in enumerate(g.classes) for i in range(g.per_class)]
        seeds = np.random.default_rng(config.seed).integers(0, 2 ** 31 - 1, size=len(jobs))
        labels, paths = {}, {}
        for (label, name, i), seed in progress(list(zip(jobs, seeds)), "generate",
                                               enabled=show_progress(args)):
            sample_id = f"{name}_{i:04d}"
            cloud = generate_cloud(name, g.n_primitives, int(seed), g.outlier_fraction, g.feature_mode)
            paths[sample_id] = write_ply(cloud, ws.ply_dir / f"{sample_id}.ply",
                                         text=getattr(args, "text", False))
            labels[sample_id] = label

        split = split_dataset(sorted(labels.items()), g.ratios, config.seed,
                              class_names=g.classes, feature_mode=g.feature_mode)
        dataset = SplatDataset(labels, split, paths=paths)
        manifest = dataset.write_manifest(ws.manifest_path)
        ws.echo_config("generate", config)

        digest = hashlib.sha1(manifest.read_bytes()).hexdigest()
        print(success(f"Generated {pluralize(len(labels), 'sample')} in {ws.dataset_dir}"))
        print(metric("split", f"{len(split.train)}/{len(split.val)}/{len(split.test)}"))
        print(info(f"manifest sha1 {digest}"))
        return 0

    except (Exception, KeyboardInterrupt) as e:
        return report_failure("generate", e)
