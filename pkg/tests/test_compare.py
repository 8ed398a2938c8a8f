"""
多条轨迹的阈值比较表。
"""

import csv

import numpy as np
import pytest

from exceptions import TraceError
from schemas.report import NEVER, RunMeta, rank_column, threshold_column
from schemas.trace import ConvergenceTrace, StallReport, TraceRow
from tasks.compare import compare_report, iterations_to_threshold, render_text, write_summary


def _trace(label, gaps, objective=10.0):
    rows = [
        TraceRow(k=k, consensus_gap=g, objective=objective + g, violation=g, primal_gap=g)
        for k, g in enumerate(gaps)
    ]
    return ConvergenceTrace(label=label, rows=rows)


def _meta(label, fingerprint="abc", f_star=10.0, stalled=None):
    stall = None if stalled is None else StallReport(stalled=stalled, window=10)
    return RunMeta(label=label, engine="admm", init="feasible", sigma="identity", rho=1e4,
                   fingerprint=fingerprint, f_star=f_star, status="max_iter", exit_code=2,
                   iterations=3, stall=stall)


class TestIterationsToThreshold:

    def test_first_hit(self):
        assert iterations_to_threshold(np.array([1.0, 1e-3, 1e-5]), 1e-2) == 1

    def test_never_reached(self):
        assert iterations_to_threshold(np.array([1.0, 0.5]), 1e-2) is None

    def test_nan_is_skipped(self):
        assert iterations_to_threshold(np.array([np.nan, 1e-3]), 1e-2) == 1


class TestCompareReport:

    def test_single_trace(self):
        summary = compare_report([_trace("admm", [1.0, 1e-3, 1e-5])], thresholds=[1e-2, 1e-6])
        assert not any(col.startswith("rank_") for col in summary.header())
        (row,) = summary.rows
        assert row.reached[threshold_column("consensus_gap", 1e-2)] == 1
        assert row.reached[threshold_column("consensus_gap", 1e-6)] is None
        cells = dict(zip(summary.header(), summary.table()[0]))
        assert cells[threshold_column("consensus_gap", 1e-6)] == NEVER
        assert cells["final_objective_gap"] == "n/a"
        assert cells["stalled"] == "n/a"

    def test_ranks_with_ties_last(self):
        traces = [_trace("slow", [1.0, 1e-1, 1e-3]), _trace("fast", [1e-3]), _trace("never", [1.0, 0.5])]
        summary = compare_report(traces, thresholds=[1e-2])
        ranks = [row.ranks[rank_column(1e-2)] for row in summary.rows]
        assert ranks == [2, 1, 3]
        assert summary.header()[-1] == rank_column(1e-2)

    def test_f_star_and_stall_from_meta(self):
        traces = [_trace("a", [1.0, 1e-3]), _trace("b", [1.0, 1e-7])]
        metas = [_meta("a", stalled=True), _meta("b", stalled=False)]
        summary = compare_report(traces, metas)
        assert summary.fingerprint == "abc"
        assert summary.rows[0].final_objective_gap == pytest.approx(1e-3)
        assert summary.rows[0].stalled is True
        assert summary.rows[1].reached[threshold_column("objective_gap", 1e-6)] == 1

    def test_explicit_f_star_overrides_meta(self):
        summary = compare_report([_trace("a", [0.0])], [_meta("a", f_star=10.0)], f_star=12.0)
        assert summary.rows[0].final_objective_gap == pytest.approx(2.0)

    def test_fingerprint_mismatch(self):
        traces = [_trace("a", [1.0]), _trace("b", [1.0])]
        with pytest.raises(TraceError, match="different problem"):
            compare_report(traces, [_meta("a", "abc"), _meta("b", "def")])

    def test_missing_meta_skips_check(self):
        summary = compare_report([_trace("a", [1.0]), _trace("b", [1.0])], [_meta("a"), None])
        assert summary.fingerprint == "abc"

    def test_no_traces(self):
        with pytest.raises(TraceError):
            compare_report([])


def test_write_summary(tmp_path):
    summary = compare_report([_trace("a", [1.0, 1e-3]), _trace("b", [1.0])], [_meta("a"), _meta("b")])
    out = write_summary(summary, tmp_path / "summary")
    with (out / "summary.csv").open(newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    assert rows[0] == summary.header()
    assert [r[0] for r in rows[1:]] == ["a", "b"]
    text = (out / "summary.txt").read_text(encoding="utf-8")
    assert text == render_text(summary)
    assert NEVER in text
    assert "problem fingerprint: abc" in text
