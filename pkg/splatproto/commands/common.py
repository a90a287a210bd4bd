"""Shared plumbing for command implementations."""

import json
import logging
import sys
import traceback
from dataclasses import replace

from ..core.config import RunConfig, apply_overrides, load_config, resolve_threads
from ..core.errors import SplatProtoError
from ..core.workspace import Workspace
from ..utils.colors import error

logger = logging.getLogger(__name__)


def resolve_config(args) -> RunConfig:
    """Config file, then flags, then validation."""
    config = load_config(getattr(args, "config", None))
    config = apply_overrides(config, {
        "seed": getattr(args, "seed", None),
        "out": getattr(args, "out", None),
        "grid_size": getattr(args, "grid_size", None),
        "channels": getattr(args, "channels", None),
        "lambda_density": getattr(args, "lambda_density", None),
        "top_m": getattr(args, "top_m", None),
        "top_k_delete": getattr(args, "top_k_delete", None),
    })
    config = replace(config, threads=resolve_threads(getattr(args, "threads", None), config.threads))
    if getattr(args, "dataset", None):
        config = replace(config, paths=replace(config.paths, dataset=args.dataset))
    return config


def open_workspace(config: RunConfig) -> Workspace:
    return Workspace(config.paths.out, config.paths.dataset)


def show_progress(args) -> bool:
    return not getattr(args, "quiet", False)


def report_failure(command: str, exc: BaseException) -> int:
    """Print a human line and a machine-readable JSON line on stderr; return the exit code."""
    if isinstance(exc, KeyboardInterrupt):
        print(error("Interrupted", stream=sys.stderr), file=sys.stderr)
        return 130
    print(error(f"Fatal: {exc}", stream=sys.stderr), file=sys.stderr)
    if not isinstance(exc, (SplatProtoError, OSError)):
        traceback.print_exc(file=sys.stderr)
    print(json.dumps({
        "status": "error",
        "command": command,
        "error": type(exc).__name__,
        "message": str(exc),
    }, sort_keys=True), file=sys.stderr)
    return 1
