"""
收敛轨迹、停滞报告与 KKT 残差的 Pydantic 模型。
"""

import math
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

# trace.csv 的列顺序（绘图与比较的唯一数据来源）
CSV_COLUMNS = (
    "k",
    "consensus_gap",
    "objective",
    "dist_to_ref",
    "violation",
    "primal_gap",
    "local_ms",
    "coord_ms",
)

_METRIC_FIELDS = ("consensus_gap", "objective", "violation", "primal_gap")


class KKTResidual(BaseModel):
    """全问题 KKT 残差三块的 ∞-范数。"""
    stationarity: float
    primal: float
    complementarity: float

    def max(self) -> float:
        return max(self.stationarity, self.primal, self.complementarity)


class TraceRow(BaseModel):
    """单次迭代记录。"""
    k: int
    consensus_gap: float
    objective: float
    dist_to_ref: Optional[float] = None
    violation: float
    primal_gap: float
    local_ms: float = 0.0
    coord_ms: float = 0.0
    # 以下字段只在内存中保留，不写入 trace.csv
    objective_at_z: Optional[float] = None
    step_norm: Optional[float] = None
    stationarity: Optional[float] = None
    diverged: bool = False

    @model_validator(mode="after")
    def mark_diverged(self) -> "TraceRow":
        values = [getattr(self, name) for name in _METRIC_FIELDS]
        if self.dist_to_ref is not None:
            values.append(self.dist_to_ref)
        if not all(math.isfinite(v) for v in values):
            self.diverged = True
        return self


class ConvergenceTrace(BaseModel):
    """一次运行的逐迭代轨迹，k 从 0 严格递增。"""
    label: str = ""
    rows: List[TraceRow] = Field(default_factory=list)

    @model_validator(mode="after")
    def validate_order(self) -> "ConvergenceTrace":
        for idx, row in enumerate(self.rows):
            if row.k != idx:
                raise ValueError(f"trace rows must have k = 0, 1, 2, ... (row {idx} has k={row.k})")
        return self

    def append(self, row: TraceRow) -> None:
        if row.k != len(self.rows):
            raise ValueError(f"expected k={len(self.rows)}, got k={row.k}")
        self.rows.append(row)

    def column(self, name: str) -> np.ndarray:
        """按列取值，缺失值为 NaN。"""
        values = [getattr(row, name) for row in self.rows]
        return np.array([np.nan if v is None else v for v in values], dtype=float)

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def diverged(self) -> bool:
        return any(row.diverged for row in self.rows)


class StallReport(BaseModel):
    """停滞检测结果：迭代点冻结但非最优。"""
    model_config = ConfigDict(ser_json_inf_nan="constants")

    stalled: bool
    since_iter: Optional[int] = None
    objective_drift: float = 0.0
    max_step: float = float("nan")
    stationarity: Optional[float] = None
    window: int
