"""Deterministic SVG chart rendering.

Fixed 800x600 canvas, fixed margins, tick steps snapped to 1/2/5 * 10^k.
Bars (bar and histogram kinds) are the only <rect> elements in the output
so they can be counted straight off the document; identical inputs always
produce byte-identical SVG.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from xml.sax.saxutils import escape

from ..core import DataClawError
from .datastore import Dataset, NUMERIC_DTYPES

CANVAS_W = 800
CANVAS_H = 600
MARGIN_LEFT = 70
MARGIN_RIGHT = 30
MARGIN_TOP = 50
MARGIN_BOTTOM = 60

PLOT_W = CANVAS_W - MARGIN_LEFT - MARGIN_RIGHT
PLOT_H = CANVAS_H - MARGIN_TOP - MARGIN_BOTTOM

BAR_COLOR = "#4c78a8"
LINE_COLOR = "#4c78a8"
AXIS_COLOR = "#333333"

CHART_KINDS = ("bar", "line", "scatter", "histogram")


class BadSpec(DataClawError):
    """The chart spec is invalid for the dataset."""


@dataclass
class ChartSpec:
    kind: str
    x: str
    y: object = None  # column name, {"agg", "col"} mapping, or None
    title: str = ""
    bins: int = 10


def parse_chart_spec(raw: dict) -> ChartSpec:
    if not isinstance(raw, dict):
        raise BadSpec("chart spec must be an object")
    kind = raw.get("kind")
    if kind not in CHART_KINDS:
        raise BadSpec(f"chart kind must be one of {list(CHART_KINDS)}, got {kind!r}")
    x = raw.get("x")
    if not isinstance(x, str) or not x:
        raise BadSpec("chart spec requires an x column")
    y = raw.get("y")
    if kind == "histogram":
        if y is not None:
            raise BadSpec("histogram takes no y")
    else:
        if y is None:
            raise BadSpec(f"{kind} chart requires a y column or aggregate")
        if isinstance(y, dict):
            if y.get("agg") not in ("count", "sum", "mean", "min", "max") or "col" not in y:
                raise BadSpec(f"bad y aggregate {y!r}")
        elif not isinstance(y, str):
            raise BadSpec(f"bad y {y!r}")
    bins = raw.get("bins", 10)
    if not isinstance(bins, int) or isinstance(bins, bool) or bins <= 0:
        raise BadSpec(f"bins must be a positive integer, got {bins!r}")
    return ChartSpec(kind=kind, x=x, y=y, title=str(raw.get("title", "")), bins=bins)


# ---------------------------------------------------------------------------
# Scales and formatting
# ---------------------------------------------------------------------------

def nice_step(raw: float) -> float:
    """Snap a raw step to the nearest-not-smaller 1/2/5 * 10^k value."""
    if raw <= 0:
        return 1.0
    magnitude = 10.0 ** math.floor(math.log10(raw))
    for m in (1.0, 2.0, 5.0, 10.0):
        if raw <= m * magnitude or math.isclose(raw, m * magnitude):
            return m * magnitude
    return 10.0 * magnitude


def nice_ticks(lo: float, hi: float, target: int = 5) -> list[float]:
    """Tick positions covering [lo, hi] at a nice step."""
    if hi < lo:
        lo, hi = hi, lo
    if hi == lo:
        hi = lo + 1.0
    step = nice_step((hi - lo) / target)
    first = math.ceil(lo / step - 1e-9) * step
    ticks = []
    t = first
    while t <= hi + step * 1e-9:
        ticks.append(0.0 if t == 0 else t)
        t += step
    return ticks


def fmt_num(v) -> str:
    """Shortest round-trip rendering; integral floats print without .0."""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float) and v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return str(v)


def _coord(v: float) -> str:
    return f"{v:.2f}"


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def _numeric_values(ds: Dataset, col: str, what: str) -> list[float]:
    if col not in ds.column_names():
        raise BadSpec(f"{what} column {col!r} does not exist")
    if ds.dtype_of(col) not in NUMERIC_DTYPES:
        raise BadSpec(f"{what} column {col!r} must be numeric")
    return [float(v) for v in ds.column_values(col) if v is not None]


def _bar_data(ds: Dataset, spec: ChartSpec) -> list[tuple[str, float]]:
    if spec.x not in ds.column_names():
        raise BadSpec(f"x column {spec.x!r} does not exist")
    xi = ds.column_index(spec.x)
    if isinstance(spec.y, dict):
        agg, col = spec.y["agg"], spec.y["col"]
        if col not in ds.column_names():
            raise BadSpec(f"y column {col!r} does not exist")
        if agg != "count" and ds.dtype_of(col) not in NUMERIC_DTYPES:
            raise BadSpec(f"y column {col!r} must be numeric for {agg}")
        yi = ds.column_index(col)
        order: list = []
        buckets: dict = {}
        for row in ds.rows:
            key = row[xi]
            if key not in buckets:
                buckets[key] = []
                order.append(key)
            if row[yi] is not None:
                buckets[key].append(row[yi])
        out = []
        for key in order:
            vals = buckets[key]
            if agg == "count":
                value = float(len(vals))
            elif not vals:
                continue
            elif agg == "sum":
                value = float(sum(vals))
            elif agg == "mean":
                value = float(sum(vals)) / len(vals)
            elif agg == "min":
                value = float(min(vals))
            else:
                value = float(max(vals))
            out.append((fmt_num(key) if key is not None else "null", value))
        return out
    if spec.y not in ds.column_names():
        raise BadSpec(f"y column {spec.y!r} does not exist")
    if ds.dtype_of(spec.y) not in NUMERIC_DTYPES:
        raise BadSpec(f"y column {spec.y!r} must be numeric")
    yi = ds.column_index(spec.y)
    return [
        (fmt_num(row[xi]) if row[xi] is not None else "null", float(row[yi]))
        for row in ds.rows
        if row[yi] is not None
    ]


def _histogram_bins(values: list[float], bins: int) -> list[tuple[float, float, int]]:
    if not values:
        return []
    lo, hi = min(values), max(values)
    if lo == hi:
        return [(lo, hi, len(values))]
    width = (hi - lo) / bins
    counts = [0] * bins
    for v in values:
        index = min(int((v - lo) / width), bins - 1)
        counts[index] += 1
    return [(lo + i * width, lo + (i + 1) * width, counts[i]) for i in range(bins)]


class _SvgDoc:
    def __init__(self) -> None:
        self.parts: list[str] = []

    def add(self, fragment: str) -> None:
        self.parts.append(fragment)

    def text(self, x: float, y: float, content: str, anchor: str = "middle", size: int = 12) -> None:
        self.add(
            f'<text x="{_coord(x)}" y="{_coord(y)}" text-anchor="{anchor}" '
            f'font-family="sans-serif" font-size="{size}" fill="{AXIS_COLOR}">'
            f"{escape(content)}</text>"
        )

    def line(self, x1: float, y1: float, x2: float, y2: float) -> None:
        self.add(
            f'<line x1="{_coord(x1)}" y1="{_coord(y1)}" x2="{_coord(x2)}" '
            f'y2="{_coord(y2)}" stroke="{AXIS_COLOR}" stroke-width="1"/>'
        )

    def render(self) -> str:
        body = "\n".join(f"  {p}" for p in self.parts)
        return (
            '<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{CANVAS_W}" '
            f'height="{CANVAS_H}" viewBox="0 0 {CANVAS_W} {CANVAS_H}">\n'
            f"{body}\n"
            "</svg>\n"
        )


def _y_scale(lo: float, hi: float):
    span = hi - lo or 1.0

    def scale(v: float) -> float:
        return MARGIN_TOP + PLOT_H - (v - lo) / span * PLOT_H

    return scale


def _x_scale(lo: float, hi: float):
    span = hi - lo or 1.0

    def scale(v: float) -> float:
        return MARGIN_LEFT + (v - lo) / span * PLOT_W

    return scale


def _draw_frame(doc: _SvgDoc, title: str, x_label: str, y_label: str) -> None:
    if title:
        doc.text(CANVAS_W / 2, MARGIN_TOP / 2 + 6, title, size=16)
    doc.line(MARGIN_LEFT, MARGIN_TOP, MARGIN_LEFT, MARGIN_TOP + PLOT_H)
    doc.line(MARGIN_LEFT, MARGIN_TOP + PLOT_H, MARGIN_LEFT + PLOT_W, MARGIN_TOP + PLOT_H)
    doc.text(MARGIN_LEFT + PLOT_W / 2, CANVAS_H - 14, x_label)
    doc.text(MARGIN_LEFT - 8, MARGIN_TOP - 10, y_label, anchor="end")


def _draw_y_axis(doc: _SvgDoc, lo: float, hi: float) -> tuple[float, float]:
    ticks = nice_ticks(lo, hi)
    lo = min(lo, ticks[0]) if ticks else lo
    hi = max(hi, ticks[-1]) if ticks else hi
    scale = _y_scale(lo, hi)
    for t in ticks:
        y = scale(t)
        doc.line(MARGIN_LEFT - 4, y, MARGIN_LEFT, y)
        doc.text(MARGIN_LEFT - 8, y + 4, fmt_num(t), anchor="end", size=11)
    return lo, hi


def _draw_x_axis_numeric(doc: _SvgDoc, lo: float, hi: float) -> tuple[float, float]:
    ticks = nice_ticks(lo, hi)
    lo = min(lo, ticks[0]) if ticks else lo
    hi = max(hi, ticks[-1]) if ticks else hi
    scale = _x_scale(lo, hi)
    base = MARGIN_TOP + PLOT_H
    for t in ticks:
        x = scale(t)
        doc.line(x, base, x, base + 4)
        doc.text(x, base + 18, fmt_num(t), size=11)
    return lo, hi


def render_chart(ds: Dataset, spec: ChartSpec) -> str:
    """Render `spec` over `ds` as a standalone SVG 1.1 document string."""
    doc = _SvgDoc()

    if spec.kind == "bar":
        data = _bar_data(ds, spec)
        if not data:
            raise BadSpec("bar chart has no data to draw")
        y_label = spec.y if isinstance(spec.y, str) else f"{spec.y['agg']}({spec.y['col']})"
        _draw_frame(doc, spec.title, spec.x, y_label)
        values = [v for _, v in data]
        lo, hi = _draw_y_axis(doc, min(0.0, min(values)), max(0.0, max(values)))
        scale = _y_scale(lo, hi)
        slot = PLOT_W / len(data)
        zero_y = scale(max(lo, 0.0))
        for i, (label, value) in enumerate(data):
            x = MARGIN_LEFT + i * slot + slot * 0.1
            top = scale(value)
            y0, y1 = (top, zero_y) if value >= 0 else (zero_y, top)
            doc.add(
                f'<rect x="{_coord(x)}" y="{_coord(y0)}" width="{_coord(slot * 0.8)}" '
                f'height="{_coord(max(y1 - y0, 0.0))}" fill="{BAR_COLOR}"/>'
            )
            doc.text(MARGIN_LEFT + i * slot + slot / 2, MARGIN_TOP + PLOT_H + 18, label, size=11)
        return doc.render()

    if spec.kind == "histogram":
        values = _numeric_values(ds, spec.x, "x")
        if not values:
            raise BadSpec("histogram has no data to draw")
        buckets = _histogram_bins(values, spec.bins)
        _draw_frame(doc, spec.title, spec.x, "count")
        hi_count = max(c for _, _, c in buckets)
        lo, hi = _draw_y_axis(doc, 0.0, float(hi_count))
        yscale = _y_scale(lo, hi)
        xlo, xhi = _draw_x_axis_numeric(doc, buckets[0][0], buckets[-1][1])
        xscale = _x_scale(xlo, xhi)
        for left, right, count in buckets:
            x0, x1 = xscale(left), xscale(right)
            top = yscale(float(count))
            doc.add(
                f'<rect x="{_coord(x0)}" y="{_coord(top)}" width="{_coord(max(x1 - x0, 0.0))}" '
                f'height="{_coord(max(MARGIN_TOP + PLOT_H - top, 0.0))}" '
                f'fill="{BAR_COLOR}" stroke="#ffffff" stroke-width="1"/>'
            )
        return doc.render()

    # line and scatter
    if not isinstance(spec.y, str):
        raise BadSpec(f"{spec.kind} chart requires a plain y column")
    _numeric_values(ds, spec.x, "x")
    _numeric_values(ds, spec.y, "y")
    xi, yi = ds.column_index(spec.x), ds.column_index(spec.y)
    points = [
        (float(row[xi]), float(row[yi]))
        for row in ds.rows
        if row[xi] is not None and row[yi] is not None
    ]
    if not points:
        raise BadSpec(f"{spec.kind} chart has no data to draw")
    _draw_frame(doc, spec.title, spec.x, spec.y)
    ylo, yhi = _draw_y_axis(doc, min(p[1] for p in points), max(p[1] for p in points))
    xlo, xhi = _draw_x_axis_numeric(doc, min(p[0] for p in points), max(p[0] for p in points))
    yscale = _y_scale(ylo, yhi)
    xscale = _x_scale(xlo, xhi)
    if spec.kind == "line":
        coords = " ".join(f"{_coord(xscale(x))},{_coord(yscale(y))}" for x, y in points)
        doc.add(
            f'<polyline points="{coords}" fill="none" stroke="{LINE_COLOR}" stroke-width="2"/>'
        )
    else:
        for x, y in points:
            doc.add(
                f'<circle cx="{_coord(xscale(x))}" cy="{_coord(yscale(y))}" r="3" '
                f'fill="{BAR_COLOR}"/>'
            )
    return doc.render()
