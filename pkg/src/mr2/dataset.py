"""In-memory data model for estimation inputs and CSV ingestion.

A :class:`Dataset` holds the outcome, the exposure, the candidate
instrument matrix and optional covariates as immutable float arrays.
Validation is strict: missing data is rejected rather than imputed, and
constant instrument columns are a hard error because silently dropping
them would change the number of candidates and therefore the meaning of
the assumed-valid count.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import (
    CsvParseError,
    DataError,
    DegenerateInstrumentError,
    MissingColumnError,
    ParameterError,
    SampleSizeError,
)


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Dataset:
    """Validated estimation sample.

    Attributes
    ----------
    y : (n,) outcome vector
    a : (n,) exposure vector (continuous or binary)
    g : (n, K) candidate instrument matrix; stored as floats even when
        binary so the generalized (non-binary) construction needs no
        second code path
    m : (n, p) covariate matrix or None
    instrument_names, covariate_names : column labels
    """

    y: np.ndarray
    a: np.ndarray
    g: np.ndarray
    m: np.ndarray | None = None
    instrument_names: tuple[str, ...] = ()
    covariate_names: tuple[str, ...] = ()
    outcome_name: str = "Y"
    exposure_name: str = "A"

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        a = np.asarray(self.a, dtype=np.float64).reshape(-1)
        g = np.asarray(self.g, dtype=np.float64)
        if g.ndim == 1:
            g = g.reshape(-1, 1)
        n = y.shape[0]
        if a.shape[0] != n or g.shape[0] != n:
            raise DataError("outcome, exposure and instruments must have equal length")
        if n < 2:
            raise SampleSizeError(f"need at least 2 rows, got {n}")
        if g.shape[1] < 1:
            raise ParameterError("at least one instrument column is required")
        names = tuple(self.instrument_names) or tuple(
            f"G{j + 1}" for j in range(g.shape[1])
        )
        if len(names) != g.shape[1]:
            raise ParameterError("instrument_names length does not match instrument count")
        for arr, what in ((y, self.outcome_name), (a, self.exposure_name)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"non-finite value in column {what!r}")
        if not np.all(np.isfinite(g)):
            raise DataError("non-finite value in instrument matrix")
        for j, name in enumerate(names):
            if np.ptp(g[:, j]) == 0.0:
                raise DegenerateInstrumentError(
                    f"instrument column {name!r} is constant (zero sample variance)"
                )
        m = self.m
        if m is not None:
            m = np.asarray(m, dtype=np.float64)
            if m.ndim == 1:
                m = m.reshape(-1, 1)
            if m.shape[0] != n:
                raise DataError("covariate matrix row count does not match sample")
            if not np.all(np.isfinite(m)):
                raise DataError("non-finite value in covariate matrix")
            cov_names = tuple(self.covariate_names) or tuple(
                f"M{j + 1}" for j in range(m.shape[1])
            )
            if len(cov_names) != m.shape[1]:
                raise ParameterError("covariate_names length does not match covariate count")
            object.__setattr__(self, "covariate_names", cov_names)
            object.__setattr__(self, "m", _freeze(m))
        object.__setattr__(self, "y", _freeze(y))
        object.__setattr__(self, "a", _freeze(a))
        object.__setattr__(self, "g", _freeze(g))
        object.__setattr__(self, "instrument_names", names)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def k_total(self) -> int:
        return self.g.shape[1]

    def has_binary_instruments(self) -> bool:
        """True when every instrument entry is exactly 0 or 1."""
        return bool(np.all((self.g == 0.0) | (self.g == 1.0)))


def _read_table(path) -> tuple[list[str], list[list[str]]]:
    try:
        fh = open(path, "r", encoding="utf-8-sig", newline="")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, expected a header row") from None
        header = [h.strip() for h in header]
        rows = [row for row in reader if row and any(cell.strip() for cell in row)]
    return header, rows


def _parse_columns(header, rows, wanted, path) -> dict[str, np.ndarray]:
    idx = {}
    for name in wanted:
        if name not in header:
            raise MissingColumnError(f"{path}: column {name!r} not found in header")
        idx[name] = header.index(name)
    out = {name: np.empty(len(rows)) for name in wanted}
    for i, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise CsvParseError(
                f"{path}: row {i} has {len(row)} fields, expected {len(header)}",
                row=i, column="",
            )
        for name, j in idx.items():
            cell = row[j].strip()
            try:
                out[name][i - 1] = float(cell)
            except ValueError:
                raise CsvParseError(
                    f"{path}: cannot parse {cell!r} at row {i}, column {name!r}",
                    row=i, column=name,
                ) from None
    return out


def load_csv(path, outcome: str, exposure: str, instruments: list[str],
             covariates: list[str] | None = None) -> Dataset:
    """Load a comma-separated file (UTF-8, header row, '.' decimals) into a Dataset.

    Raises MissingColumnError for absent columns, CsvParseError (with the
    1-based data row and column name) for non-numeric cells, and
    DegenerateInstrumentError for constant instrument columns.
    """
    instruments = list(instruments)
    if not instruments:
        raise ParameterError("instrument column list is empty")
    covariates = list(covariates) if covariates else []
    wanted = [outcome, exposure, *instruments, *covariates]
    if len(set(wanted)) != len(wanted):
        raise ParameterError("outcome/exposure/instrument/covariate columns must be distinct")
    header, rows = _read_table(path)
    cols = _parse_columns(header, rows, wanted, path)
    m = np.column_stack([cols[c] for c in covariates]) if covariates else None
    return Dataset(
        y=cols[outcome],
        a=cols[exposure],
        g=np.column_stack([cols[c] for c in instruments]),
        m=m,
        instrument_names=tuple(instruments),
        covariate_names=tuple(covariates),
        outcome_name=outcome,
        exposure_name=exposure,
    )


def write_csv(d: Dataset, path) -> None:
    """Write a Dataset back out; numbers at 17 significant digits so a
    reload reproduces the contents exactly."""
    header = [d.outcome_name, d.exposure_name, *d.instrument_names, *d.covariate_names]
    blocks = [d.y.reshape(-1, 1), d.a.reshape(-1, 1), d.g]
    if d.m is not None:
        blocks.append(d.m)
    data = np.hstack(blocks)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in data:
            writer.writerow([f"{v:.17g}" for v in row])


def column_means(d: Dataset) -> np.ndarray:
    """Per-column sample means of the instrument matrix."""
    return d.g.mean(axis=0)
