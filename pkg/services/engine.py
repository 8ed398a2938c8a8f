"""
ADMM 与 ALADIN 共用的运行结果、区域并行调度和逐迭代度量。
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, TypeVar

import numpy as np

from exceptions import DopfError
from schemas.trace import ConvergenceTrace, TraceRow
from services.nlp import (
    IterateState,
    PartitionedProblem,
    Vector,
    consensus_gap,
    constraint_violation,
    distance_inf,
    objective_value,
    primal_gap,
    stationarity_certificate,
)

logger = logging.getLogger("dopf.engine")

T = TypeVar("T")

STATUS_CONVERGED = "converged"
STATUS_MAX_ITER = "max_iter"
STATUS_FAILED = "failed"


@dataclass
class EngineRun:
    """一次引擎运行：轨迹、最终状态、终止状态；失败时 error 保存异常，轨迹为已完成部分。"""
    trace: ConvergenceTrace
    state: IterateState
    status: str
    error: Optional[DopfError] = None

    @property
    def iterations(self) -> int:
        return len(self.trace)


def map_regions(fn: Callable[[int], T], count: int, workers: int = 1) -> List[T]:
    """对每个区域调用 fn(i)，结果按区域顺序返回；workers > 1 时用线程池并行。"""
    if workers <= 1 or count <= 1:
        return [fn(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=min(workers, count)) as pool:
        return list(pool.map(fn, range(count)))


def iteration_row(
    problem: PartitionedProblem,
    k: int,
    x: Sequence[Vector],
    z_prev: Sequence[Vector],
    z_next: Sequence[Vector],
    reference: Optional[Vector],
    x_prev: Optional[Sequence[Vector]],
    local_ms: float,
    coord_ms: float,
    track_stationarity: bool,
    active_tol: float,
) -> TraceRow:
    """
    第 k 次迭代的记录：gap / 目标 / 距离在局部解 xᵏ 处，约束违反量在协调后的 zᵏ⁺¹ 处，
    primal_gap = max_i ‖A_i(x_iᵏ − z_iᵏ)‖∞。
    """
    step = None
    if x_prev is not None:
        step = float(max(np.max(np.abs(a - b), initial=0.0) for a, b in zip(x, x_prev)))
    return TraceRow(
        k=k,
        consensus_gap=consensus_gap(problem, x),
        objective=objective_value(problem, x),
        dist_to_ref=None if reference is None else distance_inf(problem, x, reference),
        violation=constraint_violation(problem, z_next),
        primal_gap=primal_gap(problem, x, z_prev),
        local_ms=local_ms,
        coord_ms=coord_ms,
        objective_at_z=objective_value(problem, z_next),
        step_norm=step,
        stationarity=stationarity_certificate(problem, x, active_tol) if track_stationarity else None,
    )


def log_row(engine: str, row: TraceRow) -> None:
    logger.info(
        "[%s k=%d] gap=%.3e f=%.8e primal=%.3e viol=%.3e%s",
        engine, row.k, row.consensus_gap, row.objective, row.primal_gap, row.violation,
        "" if row.dist_to_ref is None else f" dist={row.dist_to_ref:.3e}",
    )
    if row.diverged:
        logger.warning("[%s k=%d] non-finite metric, iterate marked diverged", engine, row.k)
