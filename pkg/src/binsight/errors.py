"""Exception types shared across the toolkit."""


class BinsightError(Exception):
    """Base class for all toolkit errors."""


class InvalidPoint(BinsightError):
    """A point coordinate is NaN or infinite."""


class EmptyCloud(BinsightError):
    """An operation that needs points received an empty cloud."""


class ShapeMismatch(BinsightError):
    """Raster dimensions do not agree."""


class MissingLabels(BinsightError):
    """The cloud has no per-point labels."""


class NoScans(BinsightError):
    """A scan list was empty."""


class ParamMismatch(BinsightError):
    """Inconsistent parameters, e.g. differing grid cell sizes."""


class NothingToInpaint(BinsightError):
    """Every pixel of the depth map is invalid."""


class NotInpainted(BinsightError):
    """The depth map still contains invalid pixels."""


class ExternalSegmenterError(BinsightError):
    """The external segmenter process failed or broke protocol."""

    def __init__(self, message, diagnostics=""):
        super().__init__(message)
        self.diagnostics = diagnostics


class ParseError(BinsightError):
    """A file could not be parsed."""


class StratifyError(BinsightError):
    """Too few scans to satisfy the stratified split."""


class NotFound(BinsightError):
    """Unknown scan id."""


class BadRectangle(BinsightError):
    """Correction rectangle out of bounds or degenerate."""


class WorkpieceDoesNotFit(BinsightError):
    """The workpiece footprint is larger than the bin interior."""


class StaleRevision(BinsightError):
    """A correction was submitted against an outdated label revision."""

    def __init__(self, message, current_revision):
        super().__init__(message)
        self.current_revision = current_revision


class StageError(BinsightError):
    """Wraps a failure inside the segmentation pipeline with the stage name."""

    def __init__(self, stage, cause):
        super().__init__(f"pipeline stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
