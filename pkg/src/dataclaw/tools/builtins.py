"""Builtin data-tool executors and their registry wiring."""

from __future__ import annotations

import os

from ..core import slugify
from .charts import parse_chart_spec, render_chart
from .datastore import Dataset, NotFound, load_table_file
from .profile import BadOp, clean, describe, profile
from .query import parse_query, run_query
from .registry import ArgSpec, ToolContext, ToolRegistry, ToolSpec
from .report import build_report_html, fill_template

OBSERVATION_ROW_LIMIT = 20


def _table_observation(ds: Dataset) -> dict:
    return {
        "handle": ds.handle,
        "columns": [[name, dtype] for name, dtype in ds.columns],
        "row_count": len(ds.rows),
        "rows": [list(row) for row in ds.rows[:OBSERVATION_ROW_LIMIT]],
    }


def _artifact_observation(artifact) -> dict:
    return {
        "artifact_id": artifact.id,
        "path": artifact.relative_path,
        "media_type": artifact.media_type,
        "byte_length": artifact.byte_length,
    }


def exec_data_load(ctx: ToolContext, args: dict) -> dict:
    resolved = ctx.workspace.resolve(args["path"])
    columns, rows = load_table_file(resolved)
    relative = os.path.relpath(resolved, ctx.workspace.root)
    ds = ctx.datasets.register(columns, rows, source_path=relative)
    return {
        "handle": ds.handle,
        "columns": [[name, dtype] for name, dtype in ds.columns],
        "row_count": len(ds.rows),
    }


def exec_data_describe(ctx: ToolContext, args: dict) -> dict:
    return describe(ctx.datasets.get(args["handle"]))


def exec_data_profile(ctx: ToolContext, args: dict) -> dict:
    return profile(ctx.datasets.get(args["handle"])).to_dict()


def exec_data_query(ctx: ToolContext, args: dict) -> dict:
    ds = ctx.datasets.get(args["handle"])
    result = run_query(ds, parse_query(args["query"]))
    registered = ctx.datasets.register(result.columns, result.rows, source_path=ds.source_path)
    return _table_observation(registered)


def exec_data_clean(ctx: ToolContext, args: dict) -> dict:
    ds = ctx.datasets.get(args["handle"])
    result = clean(ds, args["ops"])
    registered = ctx.datasets.register(result.columns, result.rows, source_path=ds.source_path)
    return {
        "handle": registered.handle,
        "columns": [[name, dtype] for name, dtype in registered.columns],
        "row_count": len(registered.rows),
    }


def exec_chart_render(ctx: ToolContext, args: dict) -> dict:
    ds = ctx.datasets.get(args["handle"])
    spec = parse_chart_spec(args["spec"])
    svg = render_chart(ds, spec)
    name = (slugify(spec.title) or spec.kind) + ".svg"
    artifact = ctx.save_artifact(name, svg.encode("utf-8"), "image/svg+xml")
    return _artifact_observation(artifact)


def exec_report_generate(ctx: ToolContext, args: dict) -> dict:
    def resolve_table(handle: str):
        try:
            return ctx.datasets.get(handle)
        except Exception:
            return None

    html = build_report_html(
        args["title"],
        args.get("sections", []) or [],
        ctx.resolve_artifact_ref,
        resolve_table,
    )
    name = (slugify(args["title"]) or "report") + ".html"
    artifact = ctx.save_artifact(name, html.encode("utf-8"), "text/html")
    return _artifact_observation(artifact)


def exec_form_fill(ctx: ToolContext, args: dict) -> dict:
    resolved = ctx.workspace.resolve(args["template_path"])
    if not os.path.isfile(resolved):
        raise NotFound(f"no such template: {args['template_path']}")
    with open(resolved, "r", encoding="utf-8") as fh:
        template = fh.read()

    values: dict = {}
    if args.get("handle") is not None:
        ds = ctx.datasets.get(args["handle"])
        row_index = args.get("row_index", 0)
        if not isinstance(row_index, int) or isinstance(row_index, bool):
            raise BadOp("row_index must be an integer")
        if not 0 <= row_index < len(ds.rows):
            raise BadOp(f"row_index {row_index} out of range for {len(ds.rows)} rows")
        values.update(dict(zip(ds.column_names(), ds.rows[row_index])))
    values.update(args.get("values") or {})

    filled = fill_template(template, values)
    base = os.path.basename(args["template_path"])
    stem, dot, suffix = base.rpartition(".")
    name = f"{stem}-filled.{suffix}" if dot else f"{base}-filled"
    artifact = ctx.save_artifact(name, filled.encode("utf-8"), "text/plain")
    return _artifact_observation(artifact)


def exec_memory_search(ctx: ToolContext, args: dict) -> dict:
    top_k = args.get("top_k", 5)
    if not isinstance(top_k, int) or isinstance(top_k, bool) or top_k <= 0:
        raise BadOp("top_k must be a positive integer")
    hits = ctx.global_memory.memory_search(args["query"], top_k)
    return {"hits": [hit.to_dict() for hit in hits]}


_BUILTINS = [
    (
        ToolSpec(
            "data_load",
            "Load a CSV or TSV file from the workspace into a dataset handle.",
            {"path": ArgSpec("string", required=True)},
        ),
        exec_data_load,
    ),
    (
        ToolSpec(
            "data_describe",
            "Schema, row count, and basic numeric statistics for a dataset.",
            {"handle": ArgSpec("string", required=True)},
        ),
        exec_data_describe,
    ),
    (
        ToolSpec(
            "data_profile",
            "Data-quality profile: missing values, distinct counts, outliers.",
            {"handle": ArgSpec("string", required=True)},
        ),
        exec_data_profile,
    ),
    (
        ToolSpec(
            "data_query",
            "Run a declarative query (derive/where/group_by/order_by/limit/select).",
            {
                "handle": ArgSpec("string", required=True),
                "query": ArgSpec("object", required=True),
            },
        ),
        exec_data_query,
    ),
    (
        ToolSpec(
            "data_clean",
            "Apply cleaning ops (drop_duplicates, fill_missing, drop_outliers).",
            {
                "handle": ArgSpec("string", required=True),
                "ops": ArgSpec("array", required=True),
            },
        ),
        exec_data_clean,
    ),
    (
        ToolSpec(
            "chart_render",
            "Render a bar/line/scatter/histogram chart to an SVG artifact.",
            {
                "handle": ArgSpec("string", required=True),
                "spec": ArgSpec("object", required=True),
            },
        ),
        exec_chart_render,
    ),
    (
        ToolSpec(
            "report_generate",
            "Assemble an HTML report from text sections, charts, and tables.",
            {
                "title": ArgSpec("string", required=True),
                "sections": ArgSpec("array", required=False),
            },
        ),
        exec_report_generate,
    ),
    (
        ToolSpec(
            "form_fill",
            "Fill {{field}} placeholders in a template from values or a table row.",
            {
                "template_path": ArgSpec("string", required=True),
                "values": ArgSpec("object", required=False),
                "handle": ArgSpec("string", required=False),
                "row_index": ArgSpec("number", required=False),
            },
        ),
        exec_form_fill,
    ),
    (
        ToolSpec(
            "memory_search",
            "Search MEMORY.md and SOULS.md bullets for prior findings.",
            {
                "query": ArgSpec("string", required=True),
                "top_k": ArgSpec("number", required=False),
            },
        ),
        exec_memory_search,
    ),
]


def build_builtin_registry() -> ToolRegistry:
    registry = ToolRegistry()
    for spec, executor in _BUILTINS:
        registry.register(spec, executor)
    return registry
