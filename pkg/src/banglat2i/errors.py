"""Exception taxonomy shared by all subsystems.

Every failure mode that callers are expected to handle has its own class, so
the CLI can map errors to stable exit codes without string matching.
"""


class BanglaT2IError(Exception):
    """Base class for all package errors."""


class NumericsError(BanglaT2IError):
    """Non-finite values or invalid numeric inputs in a public operation."""


class ShapeError(BanglaT2IError):
    """Operands have incompatible shapes or an unexpected resolution."""


class LinAlgError(BanglaT2IError):
    """Matrix input violates a linear-algebra precondition."""


class EncodingError(BanglaT2IError):
    """Input text is not valid Unicode."""


class EmptyCaptionError(BanglaT2IError):
    """A caption produced no tokens."""


class VocabError(BanglaT2IError):
    """Token id outside the vocabulary."""


class DatasetError(BanglaT2IError):
    """Dataset too small or structurally invalid."""


class IoError(BanglaT2IError):
    """Filesystem problem while reading or writing artifacts."""


class MaskError(BanglaT2IError):
    """All word positions masked where at least one real token is required."""


class BatchError(BanglaT2IError):
    """Batch too small for a within-batch contrastive computation."""


class TrainingError(BanglaT2IError):
    """Training diverged or failed to reach its target."""


class StatsError(BanglaT2IError):
    """Statistics requested from malformed or insufficient samples."""


class ConfigError(BanglaT2IError):
    """Unknown or malformed configuration keys."""
