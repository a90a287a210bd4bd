"""
Main CLI entry point for splatproto.
"""

import sys
import argparse
import logging

from . import __version__
from .core.gradcheck import SUITE_NAMES
from .core.splat_io import FEATURE_MODES
from .utils.colors import ColorFormatter

from .commands.generate import generate_command
from .commands.train import train_command
from .commands.disentangle import disentangle_command
from .commands.explain import explain_command
from .commands.evaluate import evaluate_command
from .commands.ablate import ablate_command
from .commands.gradcheck import gradcheck_command


def _common_options():
    """Flags shared by every subcommand."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='JSON run configuration')
    common.add_argument('--seed', type=int, help='Global seed')
    common.add_argument('--threads', type=int,
                        help='Worker threads '
                             '(default: $XSPLAIN_THREADS or $SPLATPROTO_THREADS, then 1)')
    common.add_argument('--out', help='Workspace directory (default: splatproto-run)')
    common.add_argument('--dataset', help='Dataset directory (default: <out>/dataset)')
    common.add_argument('--force', action='store_true', help='Overwrite a non-empty dataset directory')
    common.add_argument('--grid-size', type=int, help='Voxel grid resolution G')
    common.add_argument('--channels', type=int, help='Feature channels C')
    common.add_argument('--lambda-density', type=float, help='Density regularization weight')
    common.add_argument('--top-m', type=int, help='Channels per explanation')
    common.add_argument('--top-k-delete', type=int, help='Largest k in the deletion sweep')
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument('-v', '--verbose', action='store_true', help='Debug logging')
    verbosity.add_argument('-q', '--quiet', action='store_true', help='Warnings only, no progress bars')
    return common


def create_parser():
    """Create argument parser."""
    parser = argparse.ArgumentParser(
        prog='splatproto',
        description='Prototype explanations for Gaussian splat classifiers',
        epilog='Use "splatproto <command> --help" for more information about a command.'
    )

    parser.add_argument('--version', action='version', version=f'splatproto {__version__}')

    subparsers = parser.add_subparsers(dest='command', help='Available commands')
    common = _common_options()

    # generate
    generate_parser = subparsers.add_parser('generate', parents=[common],
                                            help='Write a synthetic labeled splat dataset')
    generate_parser.add_argument('--classes', help='Comma-separated class names')
    generate_parser.add_argument('--per-class', type=int, help='Samples per class')
    generate_parser.add_argument('--n-primitives', type=int, help='Primitives per sample')
    generate_parser.add_argument('--feature-mode', choices=FEATURE_MODES, help='Per-primitive attributes')
    generate_parser.add_argument('--outlier-fraction', type=float, help='Fraction of isolated primitives')
    generate_parser.add_argument('--text', action='store_true', help='Write ASCII PLY files')

    # train
    subparsers.add_parser('train', parents=[common], help='Stage 1: train the backbone')

    # disentangle
    subparsers.add_parser('disentangle', parents=[common],
                          help='Stage 2: learn the orthogonal rotation and prototypes')

    # explain
    explain_parser = subparsers.add_parser('explain', parents=[common],
                                           help='Explain predictions with prototypes')
    explain_parser.add_argument('--sample', action='append', metavar='ID',
                                help='Sample id to explain (repeatable)')

    # evaluate
    subparsers.add_parser('evaluate', parents=[common],
                          help='Accuracy, decision preservation, deletion tests, purity')

    # ablate
    subparsers.add_parser('ablate', parents=[common], help='One-at-a-time hyperparameter sweep')

    # gradcheck
    gradcheck_parser = subparsers.add_parser('gradcheck', parents=[common],
                                             help='Finite-difference gradient checks')
    gradcheck_parser.add_argument('--ops', nargs='+', choices=SUITE_NAMES, help='Subset of checks')

    return parser


def setup_logging(verbose=False, quiet=False):
    """One stderr handler with the color-aware formatter."""
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(ColorFormatter(sys.stderr))
    logger = logging.getLogger("splatproto")
    logger.handlers[:] = [handler]
    logger.setLevel(logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO)
    logger.propagate = False


def main(argv=None):
    """Main entry point."""
    parser = create_parser()
    args = parser.parse_args(argv)

    if not args.command:
        parser.print_help()
        return 0

    setup_logging(args.verbose, args.quiet)

    # Route to appropriate command
    commands = {
        'generate': generate_command,
        'train': train_command,
        'disentangle': disentangle_command,
        'explain': explain_command,
        'evaluate': evaluate_command,
        'ablate': ablate_command,
        'gradcheck': gradcheck_command,
    }

    return commands[args.command](args)


if __name__ == '__main__':
    sys.exit(main())
