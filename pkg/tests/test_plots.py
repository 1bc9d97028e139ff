"""Tests for the deterministic SVG renderings."""

import numpy as np
import pytest

from georec.plots import NOISE_COLOR, PALETTE, metric_bars_svg, reachability_svg, scatter_svg, write_svg


def test_scatter_is_deterministic_and_framed():
    coords = np.array([[0.0, 0.0], [1.0, 2.0], [-1.0, 3.0]])
    names = ["AR", "BR", "SE"]
    first = scatter_svg(coords, names, labels=[0, 1, -1], title="countries")
    second = scatter_svg(coords, names, labels=[0, 1, -1], title="countries")
    assert first == second
    assert first.startswith("<svg ")
    assert first.rstrip().endswith("</svg>")
    assert 'xmlns="http://www.w3.org/2000/svg"' in first


def test_scatter_labels_names_and_colors():
    coords = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]])
    svg = scatter_svg(coords, ["AA", "AB", "AC"], labels=[0, 1, -1])
    for code in ("AA", "AB", "AC"):
        assert f">{code}</text>" in svg
    assert PALETTE[0] in svg and PALETTE[1] in svg
    assert NOISE_COLOR in svg
    assert svg.count("<circle") == 3


def test_scatter_shape_validation():
    with pytest.raises(ValueError, match="(n, 2)"):
        scatter_svg(np.zeros((3, 3)), ["a", "b", "c"])
    with pytest.raises(ValueError, match="one name per row"):
        scatter_svg(np.zeros((3, 2)), ["a", "b"])


def test_reachability_marks_unreachable_points_full_height():
    reach = np.array([np.inf, 0.5, 1.0, 0.25])
    svg = reachability_svg(reach, labels=[-1, 0, 0, 0])
    assert svg == reachability_svg(reach, labels=[-1, 0, 0, 0])
    rects = [line for line in svg.splitlines() if line.startswith("<rect")]
    assert len(rects) == 4
    heights = [float(r.split('height="')[1].split('"')[0]) for r in rects]
    assert heights[0] == max(heights)
    assert heights[0] == heights[2]
    assert NOISE_COLOR in rects[0]
    assert "max finite reachability: 1.0000" in svg


def test_reachability_requires_points():
    with pytest.raises(ValueError, match="nothing"):
        reachability_svg(np.array([]))


def test_metric_bars_lists_models_and_values():
    means = {
        "mp-global": {("ndcg", 10): 0.125, ("precision", 10): 0.5},
        "vae": {("ndcg", 10): 0.25, ("precision", 10): 0.75},
    }
    keys = [("ndcg", 10), ("precision", 10)]
    svg = metric_bars_svg(means, keys, title="test run")
    assert svg == metric_bars_svg(means, keys, title="test run")
    assert ">ndcg@10</text>" in svg
    assert ">precision@10</text>" in svg
    assert ">mp-global</text>" in svg and ">vae</text>" in svg
    assert ">0.125</text>" in svg and ">0.750</text>" in svg
    assert ">test run</text>" in svg


def test_metric_bars_rejects_empty_inputs():
    with pytest.raises(ValueError, match="nothing"):
        metric_bars_svg({}, [("ndcg", 10)])
    with pytest.raises(ValueError, match="nothing"):
        metric_bars_svg({"vae": {("ndcg", 10): 0.1}}, [])


def test_write_svg(tmp_path):
    path = tmp_path / "plot.svg"
    content = scatter_svg(np.array([[0.0, 1.0], [1.0, 0.0]]), ["a", "b"])
    write_svg(path, content)
    assert path.read_text() == content
