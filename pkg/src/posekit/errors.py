"""Exception hierarchy shared by every posekit module.

All errors raised by the library derive from PosekitError so callers (and the
CLI exit-code mapping) can catch the whole family or a precise condition.
Parsing and schema errors carry enough location context to be actionable:
token-stream errors have a ``position`` (token index), schema errors a
JSON-pointer style ``path``.
"""

from __future__ import annotations


class PosekitError(Exception):
    """Base class for all posekit errors."""


# --- quantizer ---------------------------------------------------------------


class TooFewSamples(PosekitError):
    """Quantile fitting needs at least n_bins samples."""


class NonFiniteSample(PosekitError):
    """A NaN or infinity reached a quantizer input."""


class InvalidRange(PosekitError):
    """Uniform bin range has lo >= hi."""


class IndexOutOfRange(PosekitError):
    """Bin index outside [0, n_bins)."""


class NonPositiveSize(PosekitError):
    """Object size components must be strictly positive."""


class IoFailure(PosekitError):
    """Reading or writing a quantizer table file failed."""


class FormatVersionMismatch(PosekitError):
    """Table file was written by an incompatible format version."""


class CorruptTable(PosekitError):
    """Table file is structurally damaged (bad magic, truncation, or
    non-monotone edges)."""


# --- vocab / grammar ----------------------------------------------------------


class CategoryTooLong(PosekitError):
    """Category byte-string exceeds the single-token length prefix (255)."""


class TokenStreamError(PosekitError):
    """Base for parse errors; carries the offending token index."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at token {position})")
        self.position = position


class UnknownToken(TokenStreamError):
    """Token ID outside the vocabulary."""


class MalformedStructure(TokenStreamError):
    """A token family appeared where the grammar does not allow it."""


class Truncated(TokenStreamError):
    """Sequence ended in the middle of a tuple or trajectory."""


# --- priors -------------------------------------------------------------------


class NonDivisibleShape(PosekitError):
    """Field height/width not divisible by the patch size."""


# --- ingest -------------------------------------------------------------------


class SchemaError(PosekitError):
    """Record is missing a field or has a mistyped one; ``path`` locates it."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class InvariantViolation(PosekitError):
    """Record parsed but violates a semantic invariant."""


class UnknownView(PosekitError):
    """Requested view_id not present in the trajectory record."""


class EmptyTrajectory(PosekitError):
    """Trajectory has no frames to resample."""


class InvalidHorizon(PosekitError):
    """Resampling horizon or step is not usable (T < 1 or dt <= 0)."""


# --- eval3d -------------------------------------------------------------------


class DegenerateBox(PosekitError):
    """Oriented box has a near-zero extent; IoU undefined."""
