"""Exception hierarchy.

Every failure the harness can detect in its inputs is a subclass of
:class:`RestorexError`; the CLI maps these to exit code 1.
"""


class RestorexError(Exception):
    """Base class for all harness errors."""


# -- artifact parsing ---------------------------------------------------------


class ParseError(RestorexError):
    pass


class BadMagic(ParseError):
    pass


class DimMismatch(ParseError):
    pass


class NonFinite(ParseError):
    pass


class NdimUnsupported(ParseError):
    pass


class SchemaError(ParseError):
    pass


class RangeError(ParseError):
    pass


class BoxError(ParseError):
    pass


class PrimaryConflict(ParseError):
    pass


class StageOrderError(ParseError):
    pass


class EpochOverlapError(ParseError):
    pass


# -- gradcam ------------------------------------------------------------------


class ChannelMismatch(RestorexError):
    pass


class ShrinkUnsupported(RestorexError):
    pass


class BoxOutOfBounds(RestorexError):
    pass


# -- similarity / evaluation --------------------------------------------------


class EmptyLabel(RestorexError):
    pass


class EmptyClassList(RestorexError):
    pass


# -- quality monitor ----------------------------------------------------------


class EmptyStage(RestorexError):
    pass


class MissingExplainProb(RestorexError):
    pass


class NoGroundTruth(RestorexError):
    pass


class StageError(RestorexError):
    """Wraps an error raised while evaluating one stage of a manifest."""

    def __init__(self, stage_id: int, cause: RestorexError):
        self.stage_id = stage_id
        self.cause = cause
        super().__init__(f"stage {stage_id}: {type(cause).__name__}: {cause}")
