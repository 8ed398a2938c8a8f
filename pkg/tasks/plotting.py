"""
收敛轨迹的四面板 SVG：一致性 gap、目标值、到 x* 的距离、约束违反量。

只使用 trace.csv 中已有的列，不重新计算任何度量。
"""

import logging
from pathlib import Path
from typing import List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from exceptions import TraceError  # noqa: E402
from schemas.trace import ConvergenceTrace  # noqa: E402

logger = logging.getLogger("dopf.tasks.plotting")

# (列名, 标题, 对数纵轴)
PANELS = (
    ("consensus_gap", "consensus gap ‖Ax‖∞", True),
    ("objective", "objective f(x)", False),
    ("dist_to_ref", "distance ‖x − x*‖∞", True),
    ("violation", "constraint violation ‖g(z)‖∞", True),
)

LOG_FLOOR = 1e-16

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2")

_STYLE = {
    "svg.hashsalt": "dopf",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.fontsize": 8,
}


def _clamped(values: np.ndarray, log_scale: bool):
    values = np.where(np.isfinite(values), values, np.nan)
    if not log_scale:
        return values, False
    low = values < LOG_FLOOR
    return np.where(low, LOG_FLOOR, values), bool(np.any(low))


def plot_traces(
    traces: Sequence[ConvergenceTrace],
    out_path,
    labels: Optional[Sequence[str]] = None,
) -> Path:
    """
    每个面板为每条轨迹画一条线（id 为 trace-<列名>-<序号>），面板 id 为 panel-<列名>。
    对数面板中小于 1e-16 的值（含 0）被截断到 1e-16，并加注 id 为 clamp-note 的说明。
    相同输入产生字节相同的 SVG。
    """
    if not traces:
        raise TraceError("nothing to plot: no traces given")
    for i, trace in enumerate(traces):
        if len(trace) == 0:
            raise TraceError(f"trace {i} ({trace.label or 'unlabelled'}) is empty")
    if labels is None:
        labels = [trace.label or f"trace {i}" for i, trace in enumerate(traces)]
    if len(labels) != len(traces):
        raise TraceError(f"{len(labels)} labels given for {len(traces)} traces")

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)

    clamped_any = False
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(1, len(PANELS), figsize=(4.0 * len(PANELS), 3.4))
        for ax, (column, title, log_scale) in zip(axes, PANELS):
            ax.set_gid(f"panel-{column}")
            ax.set_title(title)
            ax.set_xlabel("iteration k")
            for i, (trace, label) in enumerate(zip(traces, labels)):
                values, clamped = _clamped(trace.column(column), log_scale)
                clamped_any |= clamped
                (line,) = ax.plot(trace.column("k"), values, color=PALETTE[i % len(PALETTE)],
                                  linewidth=1.2, label=label)
                line.set_gid(f"trace-{column}-{i}")
            if log_scale:
                ax.set_yscale("log")
        axes[0].legend(loc="best")

        if clamped_any:
            note = fig.text(0.01, 0.01, f"values below {LOG_FLOOR:g} are drawn at {LOG_FLOOR:g}",
                            fontsize=7, ha="left", va="bottom")
            note.set_gid("clamp-note")
            logger.info("clamped non-positive values on log panels to %g", LOG_FLOOR)

        fig.tight_layout()
        fig.savefig(out_path, format="svg", metadata={"Date": None})
        plt.close(fig)

    logger.info("wrote %s (%d traces)", out_path, len(traces))
    return out_path


def panel_columns() -> List[str]:
    return [column for column, _, _ in PANELS]
