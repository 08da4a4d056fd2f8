"""Exception taxonomy shared by every module in the package.

All failures raised by this package derive from :class:`AutvError` so callers
can catch one base class at pipeline boundaries.  Subclasses are grouped by
contract rather than by module: a bad schedule is a ``ScheduleError`` no
matter which layer noticed it.
"""

__all__ = [
    "AutvError",
    "ScheduleError",
    "ShapeError",
    "TimestepError",
    "BackendError",
    "CapabilityError",
    "ConfigError",
    "ValidationError",
    "GenerationError",
    "ChainError",
    "ContractViolationError",
    "AlignmentError",
    "MetricError",
    "ProtocolError",
    "DecodeError",
    "CaptionClientError",
    "BundleError",
]


class AutvError(Exception):
    """Base class for every error raised by this package."""


class ScheduleError(AutvError):
    """Noise-schedule construction or validation failed."""


class ShapeError(AutvError):
    """Array dimensionality or shape does not match the operation's contract."""


class TimestepError(AutvError):
    """Timestep outside [0, T] or stepped in the wrong direction."""


class BackendError(AutvError):
    """A pluggable backend returned something that violates its contract."""


class CapabilityError(BackendError):
    """Conditioning was supplied that the selected backend cannot consume."""


class ConfigError(AutvError):
    """Configuration value missing, malformed, or out of range."""


class ValidationError(AutvError):
    """A record (prompt, annotation, caption, manifest entry) failed validation."""


class GenerationError(AutvError):
    """Sampling produced an unusable result (non-finite latents, empty masks)."""


class ChainError(GenerationError):
    """Frame chaining failed; carries the frame index where it broke."""

    def __init__(self, message, frame_index=None):
        super().__init__(message)
        self.frame_index = frame_index


class ContractViolationError(AutvError):
    """A propagation backend broke the mask-video contract."""


class AlignmentError(AutvError):
    """Paired inputs (video/masks, pred/gt) do not line up."""


class MetricError(AutvError):
    """A metric is undefined for the given input (too few samples, bad sqrt)."""


class ProtocolError(MetricError):
    """The clip-sampling protocol cannot be satisfied by the given videos."""


class DecodeError(AutvError):
    """A serialized artifact (RLE, latent file, manifest) cannot be decoded."""


class CaptionClientError(AutvError):
    """The remote caption service failed after the configured retries."""


class BundleError(AutvError):
    """A dataset bundle is inconsistent or could not be written atomically."""
