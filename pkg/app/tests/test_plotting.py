"""
Tests for SVG output.
"""
import numpy as np

from utils.plotting import emit_svg_lines, emit_svg_scatter


class TestPlotting:
    """Test cases for scatter and line plots"""

    def test_complex_scatter(self, tmp_path):
        path = tmp_path / "spectrum.svg"

        count = emit_svg_scatter(np.array([1.0 + 0.5j, 0.3 - 0.1j, 1.0]), path, title="spectrum")

        assert count == 3
        assert path.read_text(encoding="utf-8").lstrip().startswith("<?xml")

    def test_empty_scatter(self, tmp_path):
        path = tmp_path / "sub" / "empty.svg"

        assert emit_svg_scatter(np.zeros(0), path) == 0
        assert path.exists()

    def test_xy_rows(self, tmp_path):
        assert emit_svg_scatter(np.array([[1.0, 2.0], [3.0, 4.0]]), tmp_path / "xy.svg") == 2

    def test_lines(self, tmp_path):
        series = {"mal_diag": [(99, 0.1), (339, 0.4)], "inexact_al": [(99, 0.2), (339, 0.9)]}

        total = emit_svg_lines(series, tmp_path / "wallclock.svg", log_x=True, log_y=True)

        assert total == 4
        assert (tmp_path / "wallclock.svg").exists()
