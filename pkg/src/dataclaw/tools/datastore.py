"""In-memory tabular datasets: CSV/TSV loading with dtype inference and the
per-session handle store the data tools operate on.
"""

from __future__ import annotations

import csv
import io
import os
import re
import threading
from dataclasses import dataclass

from ..core import DataClawError

INTEGER = "integer"
FLOAT = "float"
STRING = "string"
BOOLEAN = "boolean"

NUMERIC_DTYPES = (INTEGER, FLOAT)

MAX_HANDLES = 100
MAX_CELLS = 1_000_000


class UnknownHandle(DataClawError):
    """No dataset registered under the given handle."""


class ParseError(DataClawError):
    """The input table is malformed (ragged rows, missing header, ...)."""


class NotFound(DataClawError):
    """The referenced file does not exist."""


class StoreLimit(DataClawError):
    """The per-session dataset store is full."""


@dataclass
class Dataset:
    handle: str
    columns: list[tuple[str, str]]  # (name, dtype)
    rows: list[tuple]
    source_path: str = ""

    def column_names(self) -> list[str]:
        return [name for name, _ in self.columns]

    def column_index(self, name: str) -> int:
        for i, (col, _) in enumerate(self.columns):
            if col == name:
                return i
        raise KeyError(name)

    def dtype_of(self, name: str) -> str:
        return self.columns[self.column_index(name)][1]

    def column_values(self, name: str) -> list:
        i = self.column_index(name)
        return [row[i] for row in self.rows]


class DatasetStore:
    """Per-session dataset registry handing out sequential `d<N>` handles."""

    def __init__(self) -> None:
        self._datasets: dict[str, Dataset] = {}
        self._counter = 0
        self._cells = 0
        self._lock = threading.Lock()

    def register(self, columns: list[tuple[str, str]], rows: list[tuple], source_path: str = "") -> Dataset:
        with self._lock:
            cells = len(rows) * max(len(columns), 1)
            if len(self._datasets) >= MAX_HANDLES:
                raise StoreLimit(f"dataset store is full ({MAX_HANDLES} handles)")
            if self._cells + cells > MAX_CELLS:
                raise StoreLimit(f"dataset store cell budget of {MAX_CELLS} exceeded")
            self._counter += 1
            handle = f"d{self._counter}"
            ds = Dataset(handle=handle, columns=list(columns), rows=list(rows), source_path=source_path)
            self._datasets[handle] = ds
            self._cells += cells
            return ds

    def get(self, handle: str) -> Dataset:
        ds = self._datasets.get(handle)
        if ds is None:
            raise UnknownHandle(f"unknown dataset handle {handle!r}")
        return ds


# ---------------------------------------------------------------------------
# Parsing and dtype inference
# ---------------------------------------------------------------------------

_INT_RE = re.compile(r"^[+-]?[0-9]+$")
_FLOAT_RE = re.compile(r"^[+-]?([0-9]+\.?[0-9]*|\.[0-9]+)([eE][+-]?[0-9]+)?$")


def infer_dtype(values: list[str]) -> str:
    """Infer a column dtype from its non-empty raw cells.

    Order: integer if all parse as integers; else float if all parse
    numerically; else boolean if all are true/false (case-insensitive);
    else string.
    """
    present = [v for v in values if v != ""]
    if all(_INT_RE.match(v) for v in present):
        return INTEGER
    if all(_FLOAT_RE.match(v) for v in present):
        return FLOAT
    if all(v.lower() in ("true", "false") for v in present):
        return BOOLEAN
    return STRING


def _convert(raw: str, dtype: str):
    if raw == "":
        return None
    if dtype == INTEGER:
        return int(raw)
    if dtype == FLOAT:
        return float(raw)
    if dtype == BOOLEAN:
        return raw.lower() == "true"
    return raw


def parse_delimited(text: str, delimiter: str = ",") -> tuple[list[tuple[str, str]], list[tuple]]:
    """Parse RFC-4180-style delimited text with a required header row."""
    reader = csv.reader(io.StringIO(text), delimiter=delimiter)
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("table has no header row") from None
    if len(set(header)) != len(header):
        raise ParseError("table header has duplicate column names")
    raw_rows: list[list[str]] = []
    for i, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(f"row {i} has {len(row)} cells, expected {len(header)}")
        raw_rows.append(row)
    dtypes = [infer_dtype([row[c] for row in raw_rows]) for c in range(len(header))]
    columns = list(zip(header, dtypes))
    rows = [tuple(_convert(cell, dtypes[c]) for c, cell in enumerate(row)) for row in raw_rows]
    return columns, rows


def load_table_file(resolved_path: str, delimiter: str | None = None) -> tuple[list[tuple[str, str]], list[tuple]]:
    """Read and parse a CSV/TSV file; delimiter defaults by file suffix."""
    if not os.path.isfile(resolved_path):
        raise NotFound(f"no such file: {resolved_path}")
    if delimiter is None:
        delimiter = "\t" if resolved_path.endswith(".tsv") else ","
    with open(resolved_path, "r", encoding="utf-8", newline="") as fh:
        return parse_delimited(fh.read(), delimiter)
