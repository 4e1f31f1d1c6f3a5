"""Exception hierarchy. Every error carries a machine-readable category used by the CLI."""


class XpqError(Exception):
    category = "error"


class FormatError(XpqError):
    """A file's magic bytes, version, or header do not match the expected format."""

    category = "format"


class TruncationError(FormatError):
    """Declared payload size disagrees with the actual file length."""

    category = "truncation"


class ValidationError(XpqError):
    """Data violates a structural invariant (shape, ordering, finiteness, ...)."""

    category = "validation"


class VocabularyError(XpqError):
    """A phoneme symbol is not part of the relevant phoneme set."""

    category = "vocabulary"


class ConfigError(XpqError):
    category = "config"


class CoverageError(XpqError):
    """A required phoneme-coverage condition could not be satisfied."""

    category = "coverage"


class TaskError(XpqError):
    """A few-shot task could not be constructed as specified."""

    category = "task"


class NumericError(XpqError):
    category = "numeric"


class UndefinedScoreError(NumericError):
    """A similarity score is undefined (zero-norm input vector)."""
