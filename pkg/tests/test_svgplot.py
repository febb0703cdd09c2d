import xml.dom.minidom

import pytest

from tapgrid.svgplot import log_to_svg, read_log

LOG = "step,a,b\n1,0.5,nan\n2,0.7,nan\n"


def test_svg_is_well_formed_with_one_panel_per_column():
    svg = log_to_svg(LOG)
    doc = xml.dom.minidom.parseString(svg)
    assert doc.documentElement.getAttribute("version") == "1.1"
    assert len(doc.getElementsByTagName("polyline")) == 1
    assert "no data" in svg


def test_missing_x_column():
    with pytest.raises(ValueError):
        log_to_svg(LOG, x_column="time")


def test_read_log_parses_nan():
    header, cols = read_log(LOG)
    assert header == ["step", "a", "b"] and cols["a"] == [0.5, 0.7]
