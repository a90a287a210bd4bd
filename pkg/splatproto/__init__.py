"""
splatproto - prototype explanations for Gaussian splat classifiers.
A voxel-aggregated point network, an orthogonal disentangling stage that keeps
decisions intact, and prototype-based explanations with faithfulness metrics.
"""

__version__ = "0.1.0"
__author__ = "splatproto contributors"
