"""
Exception hierarchy for crowdmap.
"""


class CrowdmapError(Exception):
    """Base class for every error raised by crowdmap."""


class AnnotationParseError(CrowdmapError):
    """A record in an annotation or detection file could not be parsed."""

    def __init__(self, path, record_index, message):
        self.path = str(path)
        self.record_index = record_index
        super().__init__(f"{self.path}: record {record_index}: {message}")


class ValidationError(CrowdmapError):
    """A value violates a domain invariant (point outside image, non-positive box, ...)."""


class ShapeError(CrowdmapError):
    """Array or tensor shapes are inconsistent."""


class NoDetectionsError(CrowdmapError):
    """An interpolation was requested over an empty detection set."""


class ImageMismatchError(CrowdmapError):
    """Annotation and detections refer to different images."""


class CheckpointError(CrowdmapError):
    """A checkpoint file is malformed or does not match the network spec."""


class NonFiniteLossError(CrowdmapError):
    """Training produced a NaN or infinite loss."""

    def __init__(self, epoch, batch, loss):
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}, batch {batch}")


class GradCheckError(CrowdmapError):
    """A gradient check could not be run (network too large, bad arguments)."""
