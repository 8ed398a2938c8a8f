"""
四面板 SVG 输出。
"""

import pytest

from exceptions import TraceError
from schemas.trace import ConvergenceTrace, TraceRow
from tasks.plotting import PANELS, panel_columns, plot_traces


def _trace(label, gaps, dist=0.5):
    rows = [
        TraceRow(k=k, consensus_gap=g, objective=100.0 - k, dist_to_ref=dist / (k + 1),
                 violation=1e-3 / (k + 1), primal_gap=g)
        for k, g in enumerate(gaps)
    ]
    return ConvergenceTrace(label=label, rows=rows)


def test_panels_and_lines_are_tagged(tmp_path):
    traces = [_trace("admm", [1.0, 0.1, 0.01]), _trace("aladin", [1.0, 1e-3, 1e-9])]
    svg = plot_traces(traces, tmp_path / "fig.svg").read_text(encoding="utf-8")
    for column in panel_columns():
        assert svg.count(f'id="panel-{column}"') == 1
        for i in range(len(traces)):
            assert svg.count(f'id="trace-{column}-{i}"') == 1
    assert svg.count('id="panel-') == len(PANELS)
    assert 'id="clamp-note"' not in svg


def test_zero_values_are_clamped_with_note(tmp_path):
    svg = plot_traces([_trace("exact", [1.0, 0.0])], tmp_path / "fig.svg").read_text(encoding="utf-8")
    assert 'id="clamp-note"' in svg


def test_missing_reference_distance(tmp_path):
    trace = _trace("no-ref", [1.0, 0.5])
    for row in trace.rows:
        row.dist_to_ref = None
    svg = plot_traces([trace], tmp_path / "fig.svg").read_text(encoding="utf-8")
    assert 'id="panel-dist_to_ref"' in svg


def test_byte_identical_output(tmp_path):
    traces = [_trace("a", [1.0, 0.1, 0.0]), _trace("b", [2.0, 0.2, 0.02])]
    first = plot_traces(traces, tmp_path / "one.svg").read_bytes()
    second = plot_traces(traces, tmp_path / "two.svg").read_bytes()
    assert first == second


def test_custom_labels(tmp_path):
    path = plot_traces([_trace("a", [1.0])], tmp_path / "fig.svg", labels=["rho=1e4"])
    svg = path.read_text(encoding="utf-8")
    assert "rho=1e4" in svg


@pytest.mark.parametrize("traces, labels, match", [
    ([], None, "no traces"),
    ([ConvergenceTrace(label="empty")], None, "empty"),
    ([_trace("a", [1.0])], ["x", "y"], "labels"),
])
def test_invalid_input(tmp_path, traces, labels, match):
    with pytest.raises(TraceError, match=match):
        plot_traces(traces, tmp_path / "fig.svg", labels=labels)
