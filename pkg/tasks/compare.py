"""
多条轨迹的比较表：各度量达到阈值所需迭代次数、最终目标差、停滞标记。
"""

import csv
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from exceptions import TraceError
from schemas.report import CompareSummary, RunMeta, SummaryRow, rank_column, threshold_column
from schemas.trace import ConvergenceTrace

logger = logging.getLogger("dopf.tasks.compare")

DEFAULT_THRESHOLDS = (1e-2, 1e-4, 1e-6)
METRICS = ("consensus_gap", "primal_gap", "violation", "dist_to_ref", "objective_gap")


def iterations_to_threshold(values: np.ndarray, threshold: float) -> Optional[int]:
    """第一个 <= threshold 的迭代序号；从未达到返回 None。"""
    hits = np.flatnonzero(np.isfinite(values) & (values <= threshold))
    return int(hits[0]) if hits.size else None


def _metric_values(trace: ConvergenceTrace, metric: str, f_star: Optional[float]) -> np.ndarray:
    if metric == "objective_gap":
        if f_star is None:
            return np.full(len(trace), np.nan)
        return np.abs(trace.column("objective") - f_star)
    return trace.column(metric)


def _check_fingerprints(metas: Sequence[Optional[RunMeta]], labels: Sequence[str]) -> Optional[str]:
    known: Dict[str, str] = {}
    for meta, label in zip(metas, labels):
        if meta is None:
            logger.warning("[%s] no meta.json next to the trace, skipping fingerprint check", label)
            continue
        if meta.fingerprint:
            known[label] = meta.fingerprint
    distinct = sorted(set(known.values()))
    if len(distinct) > 1:
        detail = ", ".join(f"{label}={fp[:12]}" for label, fp in known.items())
        raise TraceError(f"traces come from different problem instances ({detail})")
    return distinct[0] if distinct else None


def compare_report(
    traces: Sequence[ConvergenceTrace],
    metas: Optional[Sequence[Optional[RunMeta]]] = None,
    f_star: Optional[float] = None,
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
) -> CompareSummary:
    """
    f_star 缺省时取 meta.json 中的值。两条以上轨迹时追加按一致性 gap 达到各阈值的排名列
    （未达到者并列最后）。
    """
    if not traces:
        raise TraceError("nothing to compare: no traces given")
    metas = list(metas) if metas is not None else [None] * len(traces)
    if len(metas) != len(traces):
        raise TraceError("compare needs one meta entry per trace")
    labels = [trace.label or f"trace {i}" for i, trace in enumerate(traces)]
    fingerprint = _check_fingerprints(metas, labels)
    if f_star is None:
        f_star = next((m.f_star for m in metas if m is not None and m.f_star is not None), None)

    rows: List[SummaryRow] = []
    for trace, meta, label in zip(traces, metas, labels):
        if len(trace) == 0:
            raise TraceError(f"[{label}] trace is empty")
        reached = {
            threshold_column(metric, t): iterations_to_threshold(_metric_values(trace, metric, f_star), t)
            for metric in METRICS
            for t in thresholds
        }
        final_gap = None if f_star is None else float(abs(trace.rows[-1].objective - f_star))
        stalled = None if meta is None or meta.stall is None else meta.stall.stalled
        rows.append(SummaryRow(label=label, iterations=len(trace), final_objective_gap=final_gap,
                               stalled=stalled, reached=reached))

    if len(rows) > 1:
        for t in thresholds:
            key = threshold_column("consensus_gap", t)
            its = [row.reached[key] for row in rows]
            finite = sorted({v for v in its if v is not None})
            for row, v in zip(rows, its):
                row.ranks[rank_column(t)] = finite.index(v) + 1 if v is not None else len(finite) + 1

    return CompareSummary(thresholds=list(thresholds), metrics=list(METRICS), rows=rows, fingerprint=fingerprint)


def render_text(summary: CompareSummary) -> str:
    header = summary.header()
    table = summary.table()
    widths = [max(len(h), *(len(r[i]) for r in table)) for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for row in table:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    if summary.fingerprint:
        lines.append("")
        lines.append(f"problem fingerprint: {summary.fingerprint}")
    return "\n".join(lines) + "\n"


def write_summary(summary: CompareSummary, out_dir) -> Path:
    """写出 summary.csv 与 summary.txt，返回输出目录。"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with (out_dir / "summary.csv").open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(summary.header())
        writer.writerows(summary.table())
    (out_dir / "summary.txt").write_text(render_text(summary), encoding="utf-8")
    logger.info("wrote comparison of %d traces to %s", len(summary.rows), out_dir)
    return out_dir
