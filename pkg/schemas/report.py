"""
实验输出 meta.json 与比较汇总的 Pydantic 模型。
"""

from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict

from schemas.trace import StallReport


class RunMeta(BaseModel):
    """与 trace.csv 同目录的 meta.json。"""
    model_config = ConfigDict(ser_json_inf_nan="constants")

    label: str
    engine: str
    init: str
    sigma: str
    rho: float
    mu: Optional[float] = None
    fingerprint: str
    f_star: Optional[float] = None
    reference_kkt: Optional[float] = None
    status: str
    exit_code: int
    error_code: Optional[str] = None
    error_message: Optional[str] = None
    iterations: int
    stall: Optional[StallReport] = None


class SummaryRow(BaseModel):
    """比较表的一行；未达到阈值的单元为 None（输出为 ∞）。"""
    label: str
    iterations: int
    final_objective_gap: Optional[float] = None
    stalled: Optional[bool] = None
    reached: Dict[str, Optional[int]]
    ranks: Dict[str, int] = {}


class CompareSummary(BaseModel):
    thresholds: List[float]
    metrics: List[str]
    rows: List[SummaryRow]
    fingerprint: Optional[str] = None

    def header(self) -> List[str]:
        cols = ["label", "iterations", "final_objective_gap", "stalled"]
        cols += [threshold_column(m, t) for m in self.metrics for t in self.thresholds]
        if len(self.rows) > 1:
            cols += [rank_column(t) for t in self.thresholds]
        return cols

    def table(self) -> List[List[str]]:
        out = []
        for row in self.rows:
            cells = [
                row.label,
                str(row.iterations),
                NOT_AVAILABLE if row.final_objective_gap is None else repr(row.final_objective_gap),
                NOT_AVAILABLE if row.stalled is None else ("true" if row.stalled else "false"),
            ]
            cells += [format_cell(row.reached.get(threshold_column(m, t)))
                      for m in self.metrics for t in self.thresholds]
            if len(self.rows) > 1:
                cells += [format_cell(row.ranks.get(rank_column(t))) for t in self.thresholds]
            out.append(cells)
        return out


NEVER = "∞"
NOT_AVAILABLE = "n/a"


def threshold_column(metric: str, threshold: float) -> str:
    return f"{metric}<={threshold:.0e}"


def rank_column(threshold: float) -> str:
    return f"rank_consensus_gap<={threshold:.0e}"


def format_cell(value: Optional[int]) -> str:
    """迭代次数；从未达到阈值记为 ∞。"""
    return NEVER if value is None else str(value)
