"""Schema description, quality profiling, and cleaning for datasets.

Outliers use the textbook IQR rule: quartiles by linear interpolation on
the sorted non-null values, fences at Q1 - 1.5*IQR and Q3 + 1.5*IQR.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from ..core import DataClawError
from .datastore import Dataset, NUMERIC_DTYPES


class BadOp(DataClawError):
    """A cleaning op is malformed or applied to an unsuitable column."""


# ---------------------------------------------------------------------------
# Statistics helpers
# ---------------------------------------------------------------------------

def percentile_linear(sorted_values: list[float], q: float) -> float:
    """Linear-interpolation percentile over pre-sorted values (q in [0,1])."""
    n = len(sorted_values)
    if n == 0:
        raise ValueError("percentile of empty sequence")
    if n == 1:
        return float(sorted_values[0])
    pos = (n - 1) * q
    lo = math.floor(pos)
    frac = pos - lo
    if frac == 0:
        return float(sorted_values[lo])
    return sorted_values[lo] + (sorted_values[lo + 1] - sorted_values[lo]) * frac


def iqr_fences(values: list[float]) -> tuple[float, float]:
    ordered = sorted(values)
    q1 = percentile_linear(ordered, 0.25)
    q3 = percentile_linear(ordered, 0.75)
    iqr = q3 - q1
    return q1 - 1.5 * iqr, q3 + 1.5 * iqr


def _population_stddev(values: list[float]) -> float:
    mean = sum(values) / len(values)
    return math.sqrt(sum((v - mean) ** 2 for v in values) / len(values))


# ---------------------------------------------------------------------------
# describe
# ---------------------------------------------------------------------------

def describe(ds: Dataset) -> dict:
    """Schema plus basic per-numeric-column stats, in fixed field order."""
    columns = []
    for name, dtype in ds.columns:
        info: dict = {"name": name, "dtype": dtype}
        if dtype in NUMERIC_DTYPES:
            present = [v for v in ds.column_values(name) if v is not None]
            if present:
                info["min"] = min(present)
                info["max"] = max(present)
                info["mean"] = sum(present) / len(present)
            else:
                info["min"] = info["max"] = info["mean"] = None
        columns.append(info)
    return {"handle": ds.handle, "row_count": len(ds.rows), "columns": columns}


# ---------------------------------------------------------------------------
# profile
# ---------------------------------------------------------------------------

@dataclass
class ColumnProfile:
    name: str
    dtype: str
    missing_count: int
    missing_fraction: float
    distinct_count: int
    min: float | None = None
    max: float | None = None
    mean: float | None = None
    stddev: float | None = None
    outlier_count: int | None = None

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "dtype": self.dtype,
            "missing_count": self.missing_count,
            "missing_fraction": self.missing_fraction,
            "distinct_count": self.distinct_count,
        }
        if self.dtype in NUMERIC_DTYPES:
            d.update(
                min=self.min,
                max=self.max,
                mean=self.mean,
                stddev=self.stddev,
                outlier_count=self.outlier_count,
            )
        return d


@dataclass
class ProfileReport:
    row_count: int
    duplicate_row_count: int
    columns: list[ColumnProfile]

    def to_dict(self) -> dict:
        return {
            "row_count": self.row_count,
            "duplicate_row_count": self.duplicate_row_count,
            "columns": [c.to_dict() for c in self.columns],
        }


def profile(ds: Dataset) -> ProfileReport:
    row_count = len(ds.rows)
    duplicate_row_count = row_count - len(set(ds.rows))
    columns = []
    for name, dtype in ds.columns:
        values = ds.column_values(name)
        present = [v for v in values if v is not None]
        missing = len(values) - len(present)
        col = ColumnProfile(
            name=name,
            dtype=dtype,
            missing_count=missing,
            missing_fraction=missing / row_count if row_count else 0.0,
            distinct_count=len(set(present)),
        )
        if dtype in NUMERIC_DTYPES and present:
            nums = [float(v) for v in present]
            lo, hi = iqr_fences(nums)
            col.min = min(present)
            col.max = max(present)
            col.mean = sum(nums) / len(nums)
            col.stddev = _population_stddev(nums)
            col.outlier_count = sum(1 for v in nums if v < lo or v > hi)
        elif dtype in NUMERIC_DTYPES:
            col.outlier_count = 0
        columns.append(col)
    return ProfileReport(row_count=row_count, duplicate_row_count=duplicate_row_count, columns=columns)


# ---------------------------------------------------------------------------
# clean
# ---------------------------------------------------------------------------

def clean(ds: Dataset, ops: list[dict]) -> Dataset:
    """Apply cleaning ops in order on a copy; the source is never mutated.

    Op shapes: {"op": "drop_duplicates"},
    {"op": "fill_missing", "col": c, "strategy": "mean"},
    {"op": "fill_missing", "col": c, "strategy": "constant", "value": v},
    {"op": "drop_outliers", "col": c}.
    """
    columns = list(ds.columns)
    rows = list(ds.rows)
    names = [n for n, _ in columns]

    for op in ops:
        if not isinstance(op, dict) or "op" not in op:
            raise BadOp(f"bad cleaning op {op!r}")
        kind = op["op"]
        if kind == "drop_duplicates":
            seen: set = set()
            kept = []
            for row in rows:
                if row not in seen:
                    seen.add(row)
                    kept.append(row)
            rows = kept
            continue

        col = op.get("col")
        if col not in names:
            raise BadOp(f"cleaning op references unknown column {col!r}")
        idx = names.index(col)
        dtype = columns[idx][1]

        if kind == "fill_missing":
            strategy = op.get("strategy")
            if strategy == "mean":
                if dtype not in NUMERIC_DTYPES:
                    raise BadOp(f"mean fill applies only to numeric columns, not {col!r}")
                present = [row[idx] for row in rows if row[idx] is not None]
                if not present:
                    raise BadOp(f"column {col!r} has no values to average")
                fill = sum(present) / len(present)
                if dtype == "integer":
                    if float(fill).is_integer():
                        fill = int(fill)
                    else:
                        # fractional mean: promote the whole column to float
                        columns[idx] = (col, "float")
                        rows = [
                            row[:idx] + (float(row[idx]),) + row[idx + 1 :]
                            if row[idx] is not None
                            else row
                            for row in rows
                        ]
            elif strategy == "constant":
                if "value" not in op:
                    raise BadOp("constant fill requires a value")
                fill = op["value"]
            else:
                raise BadOp(f"unknown fill strategy {strategy!r}")
            rows = [
                row[:idx] + (fill,) + row[idx + 1 :] if row[idx] is None else row
                for row in rows
            ]
        elif kind == "drop_outliers":
            if dtype not in NUMERIC_DTYPES:
                raise BadOp(f"drop_outliers applies only to numeric columns, not {col!r}")
            present = [float(row[idx]) for row in rows if row[idx] is not None]
            if present:
                lo, hi = iqr_fences(present)
                rows = [
                    row
                    for row in rows
                    if row[idx] is None or lo <= float(row[idx]) <= hi
                ]
        else:
            raise BadOp(f"unknown cleaning op {kind!r}")

    return Dataset(handle="", columns=columns, rows=rows, source_path=ds.source_path)
