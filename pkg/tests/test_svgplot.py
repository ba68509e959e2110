"""SVG chart tests: determinism, structural sanity, degenerate-input errors."""

import math

import numpy as np
import pytest

from dbrf import svgplot as S
from dbrf.errors import ConfigurationError


class TestSeries:
    def test_length_mismatch_rejected(self):
        with pytest.raises(ConfigurationError):
            S.Series("m", [1, 2], [1])

    def test_empty_rejected(self):
        with pytest.raises(ConfigurationError):
            S.Series("m", [], [])

    def test_nan_rejected(self):
        with pytest.raises(ConfigurationError, match="non-finite"):
            S.Series("m", [0.0, 1.0], [0.5, math.nan])
        with pytest.raises(ConfigurationError):
            S.Series("m", [0.0, math.inf], [0.5, 0.6])


class TestLineChart:
    def test_single_point_series_yields_one_marker(self):
        svg = S.emit_svg_linechart([S.Series("acc", [0.1], [0.9])])
        assert svg.startswith("<svg")
        assert svg.count("<circle") == 1
        assert "<polyline" not in svg  # nothing to connect

    def test_byte_identical_for_identical_input(self):
        series = [S.Series("a", [0, 0.1, 0.2], [0.9, 0.8, 0.85]),
                  S.Series("b", [0, 0.1, 0.2], [0.7, 0.72, 0.71])]
        svg1 = S.emit_svg_linechart(series, x_label="rho", y_label="accuracy")
        svg2 = S.emit_svg_linechart([S.Series("a", [0, 0.1, 0.2], [0.9, 0.8, 0.85]),
                                     S.Series("b", [0, 0.1, 0.2], [0.7, 0.72, 0.71])],
                                    x_label="rho", y_label="accuracy")
        assert svg1.encode() == svg2.encode()

    def test_empty_series_list_rejected(self):
        with pytest.raises(ConfigurationError):
            S.emit_svg_linechart([])

    def test_legend_and_labels_present(self):
        svg = S.emit_svg_linechart([S.Series("dbrf_star", [0, 0.45], [0.85, 0.84])],
                                   x_label="flip rate", y_label="accuracy",
                                   title="sweep")
        for needle in ("dbrf_star", "flip rate", "accuracy", "sweep"):
            assert needle in svg

    def test_reference_line_drawn_and_labeled(self):
        svg = S.emit_svg_linechart([S.Series("dp", [0, 0.45], [0.05, 0.08])],
                                   reference_y=0.02, reference_label="clean gap")
        assert "stroke-dasharray" in svg
        assert "clean gap" in svg

    def test_non_finite_reference_rejected(self):
        with pytest.raises(ConfigurationError):
            S.emit_svg_linechart([S.Series("dp", [0.0], [0.1])],
                                 reference_y=math.nan)

    def test_points_sorted_by_x_in_polyline(self):
        svg = S.emit_svg_linechart([S.Series("a", [0.2, 0.0, 0.1], [1.0, 3.0, 2.0])])
        start = svg.index('points="') + len('points="')
        xs = [float(pair.split(",")[0]) for pair
              in svg[start:svg.index('"', start)].split()]
        assert xs == sorted(xs)


class TestScatter:
    def test_marker_per_point_and_legend(self):
        rng = np.random.default_rng(0)
        coords = rng.standard_normal((25, 2))
        group = (np.arange(25) % 2 == 0).astype(int)
        svg = S.emit_svg_scatter(coords, group)
        # 25 data markers + 2 legend markers
        assert svg.count("<circle") == 27
        assert "protected" in svg and "privileged" in svg

    def test_deterministic(self):
        coords = np.array([[0.0, 1.0], [1.0, 0.0]])
        group = np.array([0, 1])
        assert S.emit_svg_scatter(coords, group) == S.emit_svg_scatter(coords, group)

    @pytest.mark.parametrize("coords,group", [
        (np.zeros((0, 2)), np.zeros(0)),
        (np.zeros((3, 3)), np.zeros(3)),
        (np.full((3, 2), np.nan), np.zeros(3)),
        (np.zeros((3, 2)), np.zeros(2)),
    ])
    def test_bad_inputs_rejected(self, coords, group):
        with pytest.raises(ConfigurationError):
            S.emit_svg_scatter(coords, group)
