"""Exception hierarchy.

Every error carries a short machine-readable ``code`` that the CLI prints on
failure (``error: <code>: <message>``).
"""

from __future__ import annotations


class HTEError(ValueError):
    code = "error"

    def __init__(self, message: str = "", code: str | None = None):
        super().__init__(message)
        if code is not None:
            self.code = code


class DatasetError(HTEError):
    code = "invalid-dataset"


class DimensionMismatch(DatasetError):
    code = "dimension-mismatch"


class NonFiniteValue(DatasetError):
    code = "non-finite-value"


class DegenerateArm(DatasetError):
    code = "degenerate-arm"


class InsufficientSamples(HTEError):
    code = "insufficient-samples"


class SingleClass(HTEError):
    code = "single-class"


class RootDegenerate(HTEError):
    code = "root-degenerate"


class RootNotViable(HTEError):
    code = "root-not-viable"


class NoViableStratum(HTEError):
    code = "no-viable-stratum"


class ScoreOutOfRange(HTEError):
    code = "score-out-of-range"


class OutOfRange(HTEError):
    code = "out-of-range"


class ParseError(HTEError):
    code = "parse-error"


class MissingColumn(HTEError):
    code = "missing-column"


class VersionMismatch(HTEError):
    code = "version-mismatch"


class MalformedDocument(HTEError):
    code = "malformed-document"


class ConfigError(HTEError):
    code = "config-error"
