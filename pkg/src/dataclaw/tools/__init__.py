"""Tool registry and the builtin tabular-data toolchain."""

from .builtins import build_builtin_registry
from .charts import BadSpec, ChartSpec, parse_chart_spec, render_chart
from .datastore import (
    Dataset,
    DatasetStore,
    NotFound,
    ParseError,
    UnknownHandle,
    infer_dtype,
    load_table_file,
    parse_delimited,
)
from .profile import BadOp, ProfileReport, clean, describe, profile
from .query import BadQuery, QuerySpec, parse_query, run_query
from .registry import ArgSpec, DuplicateName, ToolContext, ToolRegistry, ToolSpec
from .report import MissingField, UnknownReference, build_report_html, fill_template

__all__ = [
    "ArgSpec",
    "BadOp",
    "BadQuery",
    "BadSpec",
    "ChartSpec",
    "Dataset",
    "DatasetStore",
    "DuplicateName",
    "MissingField",
    "NotFound",
    "ParseError",
    "ProfileReport",
    "QuerySpec",
    "ToolContext",
    "ToolRegistry",
    "ToolSpec",
    "UnknownHandle",
    "UnknownReference",
    "build_builtin_registry",
    "build_report_html",
    "clean",
    "describe",
    "fill_template",
    "infer_dtype",
    "load_table_file",
    "parse_chart_spec",
    "parse_delimited",
    "parse_query",
    "profile",
    "render_chart",
    "run_query",
]
