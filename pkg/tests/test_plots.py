import xml.etree.ElementTree as ET
from dataclasses import replace

import pytest
from conftest import difference_run_set

from nirsdse.analysis import IncompleteGridError, build_metric_table
from nirsdse.plots import check_complete, emit_plot_data, figure_series, render_svg

SVG = "{http://www.w3.org/2000/svg}"


@pytest.fixture(scope="module")
def rows():
    return build_metric_table(difference_run_set())


def read_series(path):
    lines = path.read_text().splitlines()
    assert lines[:2] == ["# schema_version: 1", "x_detector_mm,y,y_err"]
    return [tuple(cell for cell in line.split(",")) for line in lines[2:]]


def test_fig2_series_shape(rows, tmp_path):
    series = figure_series(rows, "fig2")
    assert len(series) == 49 and all(len(points) == 16 for points in series.values())
    files = emit_plot_data(rows, "fig2", tmp_path)
    assert len(files) == 50 and files[-1].name == "fig2.svg"
    points = read_series(tmp_path / "fig2_650nm_10mm.csv")
    assert [float(x) for x, _, _ in points] == [10.0 + 5 * i for i in range(16)]


def test_fig3_values_are_percentages(rows):
    for points in figure_series(rows, "fig3").values():
        assert all(0.0 <= y <= 100.0 for _, y, _ in points)


def test_fig4_one_series_per_wavelength(rows, tmp_path):
    series = figure_series(rows, "fig4")
    assert sorted(series) == [(w,) for w in (650.0, 700.0, 750.0, 800.0, 850.0, 900.0, 950.0)]
    by_cell = {(r.wavelength_nm, r.detector_mm): r.min_input_power_w for r in rows}
    for (w,), points in series.items():
        assert [y for x, y, _ in points] == [by_cell[(w, x)] for x, _, _ in points]
    emit_plot_data(rows, "fig4", tmp_path)
    assert (tmp_path / "fig4_800nm.csv").exists()


def test_undefined_points_leave_gaps(rows, tmp_path):
    holes = [replace(r, min_input_power_w=None) if r.detector_mm in (40.0, 45.0) else r for r in rows]
    emit_plot_data(holes, "fig4", tmp_path)
    points = read_series(tmp_path / "fig4_650nm.csv")
    assert points[6][1:] == ("", "") and points[7][1:] == ("", "")
    root = ET.fromstring((tmp_path / "fig4.svg").read_text())
    # each wavelength line breaks into two runs around the missing detectors
    assert len(root.findall(f"{SVG}polyline")) == 14


def test_svg_is_well_formed(rows):
    svg = render_svg(figure_series(rows, "fig2"), "fig2")
    root = ET.fromstring(svg)
    assert root.tag == f"{SVG}svg"
    assert len(root.findall(f"{SVG}polyline")) == 49
    texts = [t.text for t in root.iter(f"{SVG}text")]
    assert "650 nm" in texts and "depth 40 mm" in texts


def test_non_positive_values_skipped_on_log_axis(rows):
    zeros = [replace(r, penetration_fraction=0.0) if r.detector_mm == 85.0 else r for r in rows]
    root = ET.fromstring(render_svg(figure_series(zeros, "fig2"), "fig2"))
    for line in root.findall(f"{SVG}polyline"):
        assert len(line.get("points").split()) == 15


def test_incomplete_table_lists_missing(rows, tmp_path):
    partial = [r for r in rows if not (r.wavelength_nm == 700.0 and r.sal_depth_mm == 25.0 and r.detector_mm == 30.0)]
    with pytest.raises(IncompleteGridError) as err:
        emit_plot_data(partial, "fig2", tmp_path)
    assert err.value.missing == [(700.0, 25.0)]
    with pytest.raises(IncompleteGridError):
        check_complete([])


def test_unknown_kind(rows, tmp_path):
    with pytest.raises(ValueError):
        emit_plot_data(rows, "fig9", tmp_path)
