"""HTML report assembly and placeholder form filling."""

from __future__ import annotations

import re
from typing import Callable

from xml.sax.saxutils import escape

from ..core import DataClawError
from .charts import fmt_num
from .datastore import Dataset


class UnknownReference(DataClawError):
    """A report section references an artifact or handle that does not exist."""


class MissingField(DataClawError):
    """A form template has unresolvable placeholders."""

    def __init__(self, fields: list[str]) -> None:
        super().__init__(f"unresolved placeholders: {', '.join(fields)}")
        self.fields = fields


TABLE_ROW_LIMIT = 50

_REPORT_CSS = (
    "body{font-family:sans-serif;margin:2em auto;max-width:60em;color:#222}"
    "table{border-collapse:collapse;margin:1em 0}"
    "th,td{border:1px solid #bbb;padding:4px 8px;text-align:left}"
    "th{background:#f0f0f0}"
    "figure{margin:1em 0}"
)


def _render_cell(value) -> str:
    if value is None:
        return ""
    return fmt_num(value) if not isinstance(value, str) else value


def _table_html(ds: Dataset) -> str:
    head = "".join(f"<th>{escape(name)}</th>" for name in ds.column_names())
    rows = []
    for row in ds.rows[:TABLE_ROW_LIMIT]:
        cells = "".join(f"<td>{escape(_render_cell(v))}</td>" for v in row)
        rows.append(f"<tr>{cells}</tr>")
    note = ""
    if len(ds.rows) > TABLE_ROW_LIMIT:
        note = f"<p>Showing first {TABLE_ROW_LIMIT} of {len(ds.rows)} rows.</p>"
    return f"<table><thead><tr>{head}</tr></thead><tbody>{''.join(rows)}</tbody></table>{note}"


def build_report_html(
    title: str,
    sections: list[dict],
    resolve_artifact: Callable[[str], tuple[str, bytes] | None],
    resolve_table: Callable[[str], Dataset | None],
) -> str:
    """Assemble a single self-contained HTML document.

    `sections` items: {"heading": str, "body_text": str,
    "artifacts": [ref, ...], "table": handle}. Artifact refs resolve via
    `resolve_artifact` to (media_type, bytes); SVG artifacts are inlined
    verbatim, text ones embedded in <pre>. Dangling references raise
    UnknownReference.
    """
    parts = [
        "<!DOCTYPE html>",
        '<html><head><meta charset="utf-8">',
        f"<title>{escape(title)}</title>",
        f"<style>{_REPORT_CSS}</style>",
        "</head><body>",
        f"<h1>{escape(title)}</h1>",
    ]
    for section in sections:
        if not isinstance(section, dict):
            raise UnknownReference(f"bad section {section!r}")
        heading = str(section.get("heading", ""))
        if heading:
            parts.append(f"<h2>{escape(heading)}</h2>")
        body = str(section.get("body_text", ""))
        if body:
            parts.append(f"<p>{escape(body)}</p>")
        for ref in section.get("artifacts", []) or []:
            resolved = resolve_artifact(str(ref))
            if resolved is None:
                raise UnknownReference(f"unknown artifact reference {ref!r}")
            media_type, data = resolved
            if media_type == "image/svg+xml":
                svg = data.decode("utf-8")
                # strip the XML declaration so the document stays valid HTML
                svg = re.sub(r"^<\?xml[^>]*\?>\s*", "", svg)
                parts.append(f"<figure>{svg}</figure>")
            elif media_type.startswith("text/"):
                parts.append(f"<pre>{escape(data.decode('utf-8', errors='replace'))}</pre>")
            else:
                parts.append(f"<p>[artifact {escape(str(ref))}: {escape(media_type)}]</p>")
        table_ref = section.get("table")
        if table_ref:
            ds = resolve_table(str(table_ref))
            if ds is None:
                raise UnknownReference(f"unknown table handle {table_ref!r}")
            parts.append(_table_html(ds))
    parts.append("</body></html>")
    return "\n".join(parts) + "\n"


# ---------------------------------------------------------------------------
# Form filling
# ---------------------------------------------------------------------------

_PLACEHOLDER_RE = re.compile(r"\{\{\s*([^{}\s][^{}]*?)\s*\}\}")


def render_value(value) -> str:
    """Placeholder rendering: numbers in shortest round-trip form, null empty."""
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    return fmt_num(value)


def fill_template(template: str, values: dict) -> str:
    """Replace every {{field}} placeholder; missing fields are collected
    and reported together."""
    missing: list[str] = []
    seen: set[str] = set()
    for name in _PLACEHOLDER_RE.findall(template):
        if name not in values and name not in seen:
            missing.append(name)
            seen.add(name)
    if missing:
        raise MissingField(missing)
    return _PLACEHOLDER_RE.sub(lambda m: render_value(values[m.group(1)]), template)
