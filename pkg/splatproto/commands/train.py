"""train command implementation"""

from ..core.backbone import BackboneHyper
from ..core.trainer import train_stage1
from ..utils.colors import header, metric, success
from ..utils.helpers import format_duration
from .common import open_workspace, report_failure, resolve_config, show_progress


def train_command(args):
    """Stage 1: train the voxel-aggregated backbone."""
    try:
        config = resolve_config(args).validate()
        ws = open_workspace(config)
        dataset = ws.load_dataset()
        ws.echo_config("train", config)

        hyper = BackboneHyper.from_config(config.hyper, len(dataset.class_names))
        params, report = train_stage1(dataset, hyper, config.train, config.seed,
                                      threads=config.threads, show_progress=show_progress(args))
        digest = ws.save_backbone(params)
        ws.write_json(ws.train_report_path, report.to_dict())

        print(header("Stage 1"))
        print(metric("epochs", str(len(report.epochs))))
        if report.best_val_accuracy is not None:
            print(metric("best val accuracy", f"{report.best_val_accuracy:.4f} (epoch {report.best_epoch})"))
        if report.test_accuracy is not None:
            print(metric("test accuracy", f"{report.test_accuracy:.4f}"))
        print(metric("wall time", format_duration(report.wall_time)))
        print(success(f"Saved backbone {digest[:10]} to {ws.backbone_path}"))
        return 0

    except (Exception, KeyboardInterrupt) as e:
        return report_failure("train", e)
