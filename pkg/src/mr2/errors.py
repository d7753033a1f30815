"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: parameter/usage problems exit 2,
data problems exit 3, weak identification exits 4.
"""

from __future__ import annotations


class Mr2Error(Exception):
    """Base class for all package errors."""


class ParameterError(Mr2Error):
    """Invalid argument value (out-of-range k-dagger, bad index, empty list)."""


class CapacityError(ParameterError):
    """A combinatorial size cap was exceeded."""

    def __init__(self, message: str, required: int):
        super().__init__(message)
        self.required = required


class UnsupportedError(Mr2Error):
    """Operation requires a data shape this build does not support (e.g. non-binary instruments)."""


class DataError(Mr2Error):
    """Invalid or unusable input data."""


class MissingColumnError(DataError):
    """A named column is absent from the file header."""


class CsvParseError(DataError):
    """A cell failed numeric parsing; carries its 1-based data row and column name."""

    def __init__(self, message: str, row: int, column: str):
        super().__init__(message)
        self.row = row
        self.column = column


class DegenerateInstrumentError(DataError):
    """An instrument column (raw or generated) has zero sample variance."""


class CollinearityError(DataError):
    """A design matrix is rank deficient; carries the dependent column names."""

    def __init__(self, message: str, columns: tuple[str, ...] = ()):
        super().__init__(message)
        self.columns = columns


class SampleSizeError(DataError):
    """Too few rows for the requested fit."""


class WeakIdentificationError(Mr2Error):
    """Identifying moment is numerically indistinguishable from zero.

    Carries the offending denominator value and, when available, the
    first-stage F statistic so callers can report it.
    """

    def __init__(self, message: str, denominator: float | None = None,
                 first_stage_f: float | None = None):
        super().__init__(message)
        self.denominator = denominator
        self.first_stage_f = first_stage_f


class AggregationError(Mr2Error):
    """No successful replications were available to aggregate."""
