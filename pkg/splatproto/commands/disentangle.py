"""disentangle command implementation"""

from ..core.disentangler import Curriculum, DisentangleState, VoxelCache, train_stage2
from ..core.errors import DegenerateMetricError
from ..core.evalsuite import purity_gain
from ..core.trainer import freeze
from ..utils.colors import header, metric, success
from ..utils.helpers import format_percent
from .common import open_workspace, report_failure, resolve_config, show_progress


def disentangle_command(args):
    """Stage 2: learn the orthogonal rotation and the prototype registry."""
    try:
        config = resolve_config(args).validate()
        ws = open_workspace(config)
        dataset = ws.load_dataset()
        params = freeze(ws.load_backbone())
        ws.echo_config("disentangle", config)

        h, d = config.hyper, config.disentangle
        curriculum = Curriculum(h.k_init, h.k_final, d.horizon, d.update_period)
        cache = VoxelCache.build(dataset.samples("train", params.hyper.grid_size), params,
                                 config.threads)
        state = train_stage2(params, cache, curriculum, d.epochs, d.lr, d.batch_size, h.eps,
                             config.seed, config.threads, show_progress(args))
        digest = ws.save_disentangle(state)

        identity = DisentangleState.identity(params, state.registry, curriculum, h.eps)
        print(header("Stage 2"))
        for epoch, value in state.purity_history:
            print(metric(f"purity @ epoch {epoch}", f"{value:.4f}"))
        try:
            gain = format_percent(purity_gain(identity, state, cache), signed=True)
        except DegenerateMetricError:
            gain = "n/a (zero purity before Stage 2)"
        print(metric("purity gain", gain))
        print(metric("orthogonality error", f"{state.orthogonality_error():.2e}"))
        print(success(f"Saved disentangle state {digest[:10]} to {ws.disentangle_path}"))
        return 0

    except (Exception, KeyboardInterrupt) as e:
        return report_failure("disentangle", e)
