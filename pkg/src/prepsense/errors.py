"""Exception hierarchy shared across the toolkit.

Validation problems (bad input files, malformed labels, bad arguments) and
stage failures (divergence, stale caches) are kept distinct so the CLI can
map them to different exit codes.
"""


class PrepSenseError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(PrepSenseError):
    """Input data or arguments violate a contract (CLI exit code 2)."""


class SenseParseError(ValidationError):
    """A sense ID string does not match the ``super(sub)`` form."""


class IngestError(ValidationError):
    """Source corpus files are missing, malformed, or inconsistent."""


class StageError(PrepSenseError):
    """A pipeline stage failed mid-run (CLI exit code 3)."""


class CacheMissError(StageError):
    """A required embedding is not present in the cache."""


class FingerprintMismatchError(StageError):
    """Model and cache were produced by different encoder weights."""


class TrainingDivergedError(StageError):
    """Optimization produced a non-finite loss."""


class EncodingError(StageError):
    """The encoder adapter could not produce a representation."""
