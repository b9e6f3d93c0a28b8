import logging
import xml.etree.ElementTree as ET

import pytest
from hypothesis import given, strategies as st

from initlab.svg import decade_ticks, emit_svg_lineplot

NS = "{http://www.w3.org/2000/svg}"


def _by_class(root, cls):
    return [el for el in root.iter() if el.get("class") == cls]


def test_single_point_one_marker():
    root = ET.fromstring(emit_svg_lineplot([("a", [1.0], [2.0])]))
    assert root.tag == NS + "svg"
    assert len(_by_class(root, "marker")) == 1
    assert not _by_class(root, "series")


def test_log_x_decade_ticks():
    root = ET.fromstring(emit_svg_lineplot([("s", [1e-4, 10], [0.1, 0.9])], log_x=True))
    labels = [el.text for el in _by_class(root, "xtick")]
    assert labels == ["1e-4", "1e-3", "1e-2", "1e-1", "1e0", "1e1"]


def test_decade_ticks_cover_range():
    assert decade_ticks(1e-4, 10) == [1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0]
    assert decade_ticks(0.5, 3) == [0.1, 1.0, 10.0]


def test_legend_follows_input_order():
    svg = emit_svg_lineplot([("zeta", [0, 1], [0, 1]), ("alpha", [0, 1], [1, 0])])
    legend = [el.text for el in _by_class(ET.fromstring(svg), "legend")]
    assert legend == ["zeta", "alpha"]
    svg = emit_svg_lineplot({"b": ([0, 1], [0, 1]), "a": ([0, 1], [1, 2])})
    assert [el.text for el in _by_class(ET.fromstring(svg), "legend")] == ["b", "a"]


def test_nonfinite_points_dropped_with_count(caplog):
    with caplog.at_level(logging.WARNING):
        svg = emit_svg_lineplot([("s", [1, 2, 3, 4], [1.0, float("nan"), float("inf"), -1.0])], log_y=True)
    assert "dropped 3" in svg
    assert "dropped 3" in caplog.text
    ET.fromstring(svg)


def test_empty_series_rejected():
    with pytest.raises(ValueError):
        emit_svg_lineplot([])


def test_extreme_ranges_render():
    for xs, ys in [([-1.7e308, 1.7e308], [0, 1]), ([0, 5e-324], [0, 1]), ([1e16, 1e16 + 2], [0, 1]),
                   ([0.0], [1.79e308])]:
        ET.fromstring(emit_svg_lineplot([("s", xs, ys)]))


def test_control_characters_replaced():
    svg = emit_svg_lineplot([("a\x00b", [0, 1], [0, 1])])
    assert [el.text for el in _by_class(ET.fromstring(svg), "legend")] == ["a\ufffdb"]


def test_markup_in_names_is_escaped():
    svg = emit_svg_lineplot([("<a & b>", [0, 1], [0, 1])], title="x < y")
    assert [el.text for el in _by_class(ET.fromstring(svg), "legend")] == ["<a & b>"]


_floats = st.floats(allow_nan=True, allow_infinity=True, width=64)


@given(st.lists(st.tuples(st.text(max_size=12),
                          st.lists(st.tuples(_floats, _floats), max_size=40)), min_size=1, max_size=5),
       st.booleans(), st.booleans())
def test_fuzz_well_formed_xml(series, log_x, log_y):
    data = [(name, [p[0] for p in pts], [p[1] for p in pts]) for name, pts in series]
    svg = emit_svg_lineplot(data, log_x=log_x, log_y=log_y)
    root = ET.fromstring(svg)
    for el in root.iter():
        for attr in ("x", "y", "x1", "y1", "x2", "y2", "cx", "cy"):
            if el.get(attr) is not None:
                assert "nan" not in el.get(attr) and "inf" not in el.get(attr)
