import re
import xml.etree.ElementTree as ET

import pytest

from dataclaw.tools import BadSpec, Dataset, parse_chart_spec, render_chart
from dataclaw.tools.charts import fmt_num, nice_step, nice_ticks

SVG_NS = "{http://www.w3.org/2000/svg}"


def rects(svg: str):
    root = ET.fromstring(svg)
    return root.findall(f".//{SVG_NS}rect")


def make_dataset(columns, rows):
    return Dataset(handle="d1", columns=columns, rows=[tuple(r) for r in rows])


class TestNiceNumbers:
    def test_steps_snap_to_1_2_5(self):
        assert nice_step(0.9) == 1.0
        assert nice_step(1.1) == 2.0
        assert nice_step(3.0) == 5.0
        assert nice_step(7.0) == 10.0
        assert nice_step(0.03) == pytest.approx(0.05)

    def test_ticks_cover_domain(self):
        ticks = nice_ticks(0.0, 10.0)
        assert ticks[0] >= 0.0 and ticks[-1] <= 10.0 + 1e-9
        steps = {round(b - a, 9) for a, b in zip(ticks, ticks[1:])}
        assert len(steps) == 1
        step = steps.pop()
        mantissa = step / (10 ** len(str(int(step))) if step >= 1 else 1)
        assert any(
            abs(step - m * 10**k) < 1e-9 for m in (1, 2, 5) for k in range(-3, 4)
        )

    def test_degenerate_domain(self):
        assert nice_ticks(5.0, 5.0)  # must not loop forever or crash


class TestBarChart:
    def spec(self, **kw):
        base = {"kind": "bar", "x": "cat", "y": "v", "title": "t"}
        base.update(kw)
        return parse_chart_spec(base)

    def test_three_categories_three_rects(self):
        ds = make_dataset(
            [("cat", "string"), ("v", "integer")], [("a", 3), ("b", 5), ("c", 2)]
        )
        svg = render_chart(ds, self.spec())
        assert len(rects(svg)) == 3

    def test_aggregate_y_groups_categories(self):
        ds = make_dataset(
            [("cat", "string"), ("v", "integer")],
            [("a", 1), ("a", 3), ("b", 10)],
        )
        svg = render_chart(ds, self.spec(y={"agg": "mean", "col": "v"}))
        assert len(rects(svg)) == 2

    def test_deterministic_bytes(self):
        ds = make_dataset([("cat", "string"), ("v", "integer")], [("a", 3), ("b", 5)])
        assert render_chart(ds, self.spec()) == render_chart(ds, self.spec())

    def test_labels_escaped(self):
        ds = make_dataset([("cat", "string"), ("v", "integer")], [("<&>", 3)])
        svg = render_chart(ds, self.spec())
        ET.fromstring(svg)  # parses despite the hostile label
        assert "&lt;&amp;&gt;" in svg


class TestHistogram:
    def test_five_bins_of_height_two(self):
        ds = make_dataset([("v", "integer")], [(i,) for i in range(1, 11)])
        svg = render_chart(ds, parse_chart_spec({"kind": "histogram", "x": "v", "bins": 5}))
        bars = rects(svg)
        assert len(bars) == 5
        heights = {bar.get("height") for bar in bars}
        assert len(heights) == 1  # all equal height: 2 values per bin

    def test_hand_binned_oracle(self):
        values = [1.0, 1.1, 2.0, 5.0, 9.9, 10.0]
        ds = make_dataset([("v", "float")], [(v,) for v in values])
        bins = 3
        svg = render_chart(ds, parse_chart_spec({"kind": "histogram", "x": "v", "bins": bins}))
        bars = rects(svg)
        assert len(bars) == bins
        # oracle: hand binning over [min, max] with the max landing in the last bin
        lo, hi = min(values), max(values)
        width = (hi - lo) / bins
        counts = [0] * bins
        for v in values:
            counts[min(int((v - lo) / width), bins - 1)] += 1
        assert counts == [3, 1, 2]
        plot_h = 600 - 50 - 60
        max_count = max(counts)
        for bar, count in zip(bars, counts):
            expected = 0.0 if count == 0 else plot_h * count / max_count
            # y axis extends to the nice tick at/above max_count
            assert float(bar.get("height")) <= plot_h
            assert (float(bar.get("height")) == 0.0) == (count == 0)

    def test_rejects_y(self):
        with pytest.raises(BadSpec):
            parse_chart_spec({"kind": "histogram", "x": "v", "y": "w"})


class TestLineScatter:
    def test_line_polyline(self):
        ds = make_dataset([("x", "integer"), ("y", "integer")], [(1, 1), (2, 4), (3, 9)])
        svg = render_chart(ds, parse_chart_spec({"kind": "line", "x": "x", "y": "y"}))
        assert svg.count("<polyline") == 1
        assert len(rects(svg)) == 0

    def test_scatter_circle_per_point(self):
        ds = make_dataset([("x", "integer"), ("y", "integer")], [(1, 1), (2, 4), (3, 9)])
        svg = render_chart(ds, parse_chart_spec({"kind": "scatter", "x": "x", "y": "y"}))
        root = ET.fromstring(svg)
        assert len(root.findall(f".//{SVG_NS}circle")) == 3

    def test_string_x_rejected(self):
        ds = make_dataset([("x", "string"), ("y", "integer")], [("a", 1)])
        with pytest.raises(BadSpec):
            render_chart(ds, parse_chart_spec({"kind": "line", "x": "x", "y": "y"}))


class TestSpecValidation:
    def test_unknown_kind(self):
        with pytest.raises(BadSpec):
            parse_chart_spec({"kind": "pie", "x": "v"})

    def test_missing_column(self):
        ds = make_dataset([("v", "integer")], [(1,)])
        with pytest.raises(BadSpec):
            render_chart(ds, parse_chart_spec({"kind": "histogram", "x": "ghost"}))

    def test_bar_requires_y(self):
        with pytest.raises(BadSpec):
            parse_chart_spec({"kind": "bar", "x": "v"})

    def test_canvas_is_800_by_600(self):
        ds = make_dataset([("v", "integer")], [(1,), (2,)])
        svg = render_chart(ds, parse_chart_spec({"kind": "histogram", "x": "v"}))
        root = ET.fromstring(svg)
        assert root.get("width") == "800" and root.get("height") == "600"


def test_fmt_num_shortest_forms():
    assert fmt_num(3) == "3"
    assert fmt_num(3.0) == "3"
    assert fmt_num(3.25) == "3.25"
    assert fmt_num(True) == "true"
    assert float(fmt_num(0.1)) == 0.1
