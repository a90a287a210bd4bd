"""explain command implementation"""

from dataclasses import replace

from ..core.explainer import explain, export_explanation
from ..utils.colors import header, info, success
from ..utils.helpers import format_table, pluralize
from .common import open_workspace, report_failure, resolve_config


def explain_command(args):
    """Explain predictions and export query subsets with prototype fragments."""
    try:
        config = resolve_config(args)
        if getattr(args, "sample", None):
            config = replace(config, explain=replace(config.explain, sample_ids=list(args.sample)))
        config = config.validate()
        ws = open_workspace(config)
        dataset = ws.load_dataset()
        params = ws.load_backbone()
        state = ws.load_disentangle()
        ws.echo_config("explain", config)

        G = params.hyper.grid_size
        sample_ids = config.explain.sample_ids or dataset.ids(config.explain.split)[:config.explain.limit]
        for sample_id in sample_ids:
            sample = dataset.sample(sample_id, G)
            expl = explain(sample, params, state, config.hyper.top_m,
                           load_sample=lambda sid: dataset.sample(sid, G))
            written = export_explanation(expl, ws.explanations_dir / sample_id)

            names = dataset.class_names
            print(header(f"{sample_id}: predicted {names[expl.predicted]} (label {names[expl.label]})"))
            rows = [[ev.channel, f"{ev.importance:.4f}", ev.voxel, len(ev.primitive_ids),
                     ", ".join(p.sample_id for p in ev.prototypes)] for ev in expl.channels]
            if rows:
                print(format_table(rows, headers=["Channel", "Importance", "Voxel", "Primitives",
                                                  "Prototypes"]))
            else:
                print(info("no channel with positive importance"))
            print(success(f"Wrote {pluralize(len(written), 'file')} to {ws.explanations_dir / sample_id}"))
        return 0

    except (Exception, KeyboardInterrupt) as e:
        return report_failure("explain", e)
