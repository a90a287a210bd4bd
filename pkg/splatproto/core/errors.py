"""
Exception hierarchy for splatproto.

Every error derives from SplatProtoError and from the closest builtin, so callers
can catch either the domain class or the plain ValueError/IndexError they expect.
"""

from typing import Optional


class SplatProtoError(Exception):
    """Base class for all splatproto errors."""


class FormatError(SplatProtoError, ValueError):
    """A file does not follow the expected layout (e.g. a missing PLY field)."""


class DataError(SplatProtoError, ValueError):
    """Input data violates a precondition (non-finite values, empty classes)."""


class ConfigError(SplatProtoError, ValueError):
    """Invalid or unknown configuration value."""


class DimensionError(SplatProtoError, ValueError):
    """Operand shapes are incompatible."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = shapes
        rendered = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {rendered}")


class GroupIndexError(SplatProtoError, IndexError):
    """A group (voxel) id lies outside [0, n_groups)."""


class DomainError(SplatProtoError, ValueError):
    """A numeric argument lies outside the function's domain."""


class UsageError(SplatProtoError, RuntimeError):
    """An API was called in the wrong state (double backward, empty batch)."""


class TrainingError(SplatProtoError, RuntimeError):
    """Optimization diverged."""

    def __init__(self, message: str, epoch: Optional[int] = None):
        self.epoch = epoch
        if epoch is not None:
            message = f"epoch {epoch}: {message}"
        super().__init__(message)


class FrozenStateError(SplatProtoError, RuntimeError):
    """Attempt to modify frozen backbone parameters."""


class RegistryError(SplatProtoError, KeyError):
    """Prototype registry lookup failed."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class EmptySubsetError(SplatProtoError, ValueError):
    """An explanation pointed at a voxel holding no primitives."""


class DegenerateMetricError(SplatProtoError, ZeroDivisionError):
    """A relative metric has a zero reference value."""


class MissingArtifactError(SplatProtoError, FileNotFoundError):
    """An upstream artifact has not been produced yet."""

    def __init__(self, artifact: str, producer: str):
        self.artifact = artifact
        self.producer = producer
        super().__init__(f"{artifact} not found; run `splatproto {producer}` first")


class CheckpointError(SplatProtoError, ValueError):
    """A checkpoint file is corrupt or of an unsupported version."""
