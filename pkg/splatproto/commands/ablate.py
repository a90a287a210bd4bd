"""ablate command implementation"""

from dataclasses import asdict

from ..core.evalsuite import ablation_run, format_ablation
from ..utils.colors import header, success, warning
from ..utils.helpers import pluralize
from .common import open_workspace, report_failure, resolve_config, show_progress


def ablate_command(args):
    """Vary lambda, G and C one at a time and tabulate accuracy, purity gain and density."""
    try:
        config = resolve_config(args).validate()
        ws = open_workspace(config)
        dataset = ws.load_dataset()
        ws.echo_config("ablate", config)

        a = config.ablate
        grid = {"lambda_density": a.lambda_density, "grid_size": a.grid_size, "channels": a.channels}
        rows = ablation_run(grid, config, dataset, config.threads, show_progress(args))

        ws.write_json(ws.ablation_path, {"version": 1, "rows": [asdict(r) for r in rows]})
        table = format_ablation(rows)
        ws.write_text(ws.ablation_table_path, table)

        print(header("Ablation"))
        print(table)
        failed = [r for r in rows if r.error]
        if failed:
            print(warning(f"{pluralize(len(failed), 'row')} failed"))
        print(success(f"Wrote {ws.ablation_path}"))
        return 0

    except (Exception, KeyboardInterrupt) as e:
        return report_failure("ablate", e)
