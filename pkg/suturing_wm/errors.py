"""
Exceptions raised by the suturing world model package.

Every error derives from SuturingError so the entry point can catch the
whole family at once. Errors that signal a violated precondition also
derive from ValueError.
"""

__all__ = [
    "SuturingError",
    "PreconditionError",
    "MalformedCaption",
    "SpanOutOfRange",
    "NoTrackableObject",
    "BucketMismatch",
    "ShapeError",
    "CorruptCheckpoint",
    "ConfigMismatch",
    "InvalidLayerIndex",
    "UnknownClassId",
    "UnknownTarget",
    "RankTooLarge",
    "InvalidGuidance",
    "EmptyManifest",
    "ConfigError",
    "ArtifactMissing",
    "ArtifactExists",
]


class SuturingError(Exception):
    """Base class for all package errors."""


class PreconditionError(SuturingError, ValueError):
    """An operation was called with arguments outside its contract."""


class MalformedCaption(PreconditionError):
    """The caption does not follow the sub-stitch caption template."""


class SpanOutOfRange(PreconditionError):
    """An annotation span does not fit inside the session video."""


class NoTrackableObject(SuturingError):
    """The oracle could not find the needle blob in a clip."""


class BucketMismatch(PreconditionError):
    """A clip's dimensions do not match any declared resolution bucket."""

    def __init__(self, clip_id: str, dims: tuple[int, int, int]):
        self.clip_id = clip_id
        self.dims = dims
        super().__init__(
            f"clip {clip_id!r} has dims {dims[0]}x{dims[1]}x{dims[2]} "
            "which match no declared bucket")


class ShapeError(PreconditionError):
    """A tensor shape violates a shape law."""


class CorruptCheckpoint(SuturingError):
    """A checkpoint file is unreadable or inconsistent with the expected model."""


class ConfigMismatch(SuturingError):
    """A saved artifact was built for a model with different dimensions."""


class InvalidLayerIndex(PreconditionError):
    """A skip-layer index does not name a transformer block."""


class UnknownClassId(PreconditionError):
    """A conditioning class id is outside the taxonomy."""


class UnknownTarget(PreconditionError):
    """A LoRA target does not name a linear layer of the model."""


class RankTooLarge(PreconditionError):
    """A LoRA rank exceeds the smallest dimension of a target layer."""


class InvalidGuidance(PreconditionError):
    """The guidance configuration is inconsistent."""


class EmptyManifest(PreconditionError):
    """Training was requested on a manifest without records."""


class ConfigError(PreconditionError):
    """A configuration value failed validation."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class ArtifactMissing(SuturingError):
    """A pipeline stage needs an artifact that an earlier stage has not produced."""


class ArtifactExists(SuturingError):
    """A pipeline stage refuses to overwrite an existing artifact."""
