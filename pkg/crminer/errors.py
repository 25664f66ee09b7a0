"""
Exception hierarchy for correction rule mining.

DataError and its subclasses describe problems with input files or tables;
the CLI maps them to exit code 2. Everything else is a programming or
configuration problem.
"""

from typing import Optional


class CorrectionRuleError(Exception):
    """Base class for every error raised by crminer."""


class ContractViolation(CorrectionRuleError, ValueError):
    """A caller broke an operation's precondition."""


class DataError(CorrectionRuleError, ValueError):
    """Input data cannot be used as given."""


class SchemaError(DataError):
    """A required column is missing or a file has the wrong structure."""


class RowError(DataError):
    """A single row holds a value that cannot be parsed."""

    def __init__(self, message: str, row_index: int, column: Optional[str] = None):
        super().__init__(f"{message} (row {row_index}{f', column {column!r}' if column else ''})")
        self.row_index = row_index
        self.column = column


class ScoreRangeError(DataError):
    """A score lies outside (-1, 1) where the identity transform was requested."""


class VocabularyMismatchError(DataError):
    """Two files were produced from different item vocabularies."""


class EmptyDatasetError(DataError):
    """An operation needs at least one instance."""


class DirectionUnavailableError(CorrectionRuleError):
    """The false dataset of the requested correction direction is empty."""


class ScenarioGenerationError(CorrectionRuleError):
    """A scenario generator could not satisfy its constraints."""
