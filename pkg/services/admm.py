"""
ADMM：并行局部步、对偶上升、一致性 QP、更新与终止，以及大罚参数下的停滞检测。
"""

import logging
import time
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from exceptions import CoordinationError, DopfError, InputError, LocalSolveError, TraceError
from schemas.config import AdmmConfig
from schemas.trace import ConvergenceTrace, StallReport
from services.engine import (
    STATUS_CONVERGED,
    STATUS_FAILED,
    STATUS_MAX_ITER,
    EngineRun,
    iteration_row,
    log_row,
    map_regions,
)
from services.kkt import SingularSystemError, solve_symmetric
from services.local_solver import AugmentedLocalProblem, LocalSolveResult, solve_local
from services.nlp import IterateState, PartitionedProblem, Vector

logger = logging.getLogger("dopf.admm")


@dataclass(frozen=True, eq=False)
class ConsensusResult:
    delta_x: Tuple[Vector, ...]
    z: Tuple[Vector, ...]
    # 耦合约束乘子
    nu: Vector


# ── 单步 ────────────────────────────────────────────────

def admm_local_step(
    problem: PartitionedProblem,
    state: IterateState,
    config: AdmmConfig,
) -> List[LocalSolveResult]:
    """
    对每个区域求解 f_i(x) + λ_iᵀA_i x + (ρ/2)‖A_i(x − z_i)‖²，以 z_i 热启动。
    任一区域未达到 optimal 即抛出 LocalSolveError。
    """
    if state.lambda_local is None:
        raise InputError("ADMM local step needs per-region multipliers")
    state.validate(problem)

    def solve(i: int) -> LocalSolveResult:
        region = problem.regions[i]
        aug = AugmentedLocalProblem(
            base=region,
            linear_term=region.A.T @ state.lambda_local[i],
            prox_center=state.z[i],
            prox_weight=config.rho,
            prox_metric="coupling",
        )
        result = solve_local(aug, warm_start=state.z[i], options=config.solver, region=i)
        if not result.optimal:
            raise LocalSolveError(f"local NLP returned {result.status}", region=i, status=result.status)
        return result

    return map_regions(solve, len(problem.regions), config.workers)


def dual_update(
    problem: PartitionedProblem,
    state: IterateState,
    local_results: Sequence[LocalSolveResult],
    config: AdmmConfig,
) -> Tuple[Vector, ...]:
    """λ_iᵏ⁺¹ = λ_iᵏ + ρ·A_i(x_iᵏ − z_iᵏ)。"""
    if len(local_results) != len(problem.regions):
        raise InputError("dual update needs one local result per region")
    return tuple(
        lam + config.rho * (region.A @ (res.x_opt - z))
        for region, lam, res, z in zip(problem.regions, state.lambda_local, local_results, state.z)
    )


def admm_consensus_step(
    problem: PartitionedProblem,
    x: Sequence[Vector],
    lambda_next: Sequence[Vector],
    rho: float,
) -> ConsensusResult:
    """
    min Σ (ρ/2)‖A_iΔx_i‖² + λ_iᵀA_iΔx_i  s.t.  Σ A_i(x_i + Δx_i) = 0，取最小范数 Δx。

    Δx_i 限制在 range(A_iᵀ) 上（Δx_i = U_i w_i），该子空间外的分量不影响目标与约束，
    因此得到的即为最小范数解。目标除以 ρ 后求解 KKT 系统。
    """
    problem.check_parts(x)
    if len(lambda_next) != len(problem.regions):
        raise InputError("consensus step needs one multiplier vector per region")
    if problem.n_c == 0:
        zeros = tuple(np.zeros(r.n_xi) for r in problem.regions)
        return ConsensusResult(delta_x=zeros, z=tuple(np.array(v, dtype=float) for v in x), nu=np.zeros(0))

    bases = problem.row_space_bases
    reduced = [region.A @ U for region, U in zip(problem.regions, bases)]
    ranks = [U.shape[1] for U in bases]
    offsets = np.cumsum([0] + ranks)
    r_total = int(offsets[-1])
    n_c = problem.n_c

    K = np.zeros((r_total + n_c, r_total + n_c))
    rhs = np.zeros(r_total + n_c)
    residual = np.zeros(n_c)
    for i, (At, lam, xi, region) in enumerate(zip(reduced, lambda_next, x, problem.regions)):
        sl = slice(offsets[i], offsets[i + 1])
        K[sl, sl] = At.T @ At
        K[r_total:, sl] = At
        K[sl, r_total:] = At.T
        rhs[sl] = -(At.T @ lam) / rho
        residual += region.A @ xi
    rhs[r_total:] = -residual

    try:
        sol = solve_symmetric(K, rhs, expected_inertia=(r_total, n_c))
    except SingularSystemError as e:
        raise CoordinationError(
            f"consensus KKT system is singular: {e} (sum of A_i A_iᵀ must have full rank, n_c={n_c}, "
            f"row-space ranks={ranks})"
        ) from e

    delta = tuple(U @ sol[offsets[i]:offsets[i + 1]] for i, U in enumerate(bases))
    z = tuple(np.asarray(xi, dtype=float) + dx for xi, dx in zip(x, delta))
    return ConsensusResult(delta_x=delta, z=z, nu=rho * sol[r_total:])


def admm_iteration(
    problem: PartitionedProblem,
    state: IterateState,
    config: AdmmConfig,
) -> Tuple[IterateState, List[LocalSolveResult], ConsensusResult, float, float]:
    """一次完整 ADMM 迭代，返回 (新状态, 局部结果, 一致性结果, 局部耗时 ms, 协调耗时 ms)。"""
    t0 = time.perf_counter()
    results = admm_local_step(problem, state, config)
    t1 = time.perf_counter()
    lambda_next = dual_update(problem, state, results, config)
    x = tuple(res.x_opt for res in results)
    consensus = admm_consensus_step(problem, x, lambda_next, config.rho)
    t2 = time.perf_counter()
    next_state = IterateState(x=x, z=consensus.z, lambda_local=lambda_next, k=state.k + 1)
    return next_state, results, consensus, (t1 - t0) * 1e3, (t2 - t1) * 1e3


# ── 主循环 ──────────────────────────────────────────────

def admm_run(
    problem: PartitionedProblem,
    initial: IterateState,
    config: AdmmConfig,
    reference: Optional[Vector] = None,
    label: str = "admm",
) -> EngineRun:
    """
    重复局部步 → 对偶更新 → 一致性步，直到 ‖A(xᵏ − zᵏ)‖∞ < ε（且已完成 min_iter 次）或达到 max_iter。
    局部步失败时停止，返回已有的部分轨迹与异常。
    """
    if initial.lambda_local is None:
        raise InputError("ADMM needs per-region multipliers (lambda_local)")
    initial.validate(problem)
    trace = ConvergenceTrace(label=label)
    state = initial
    x_prev = None
    status = STATUS_MAX_ITER
    error = None

    for k in range(config.max_iter):
        try:
            next_state, _, _, local_ms, coord_ms = admm_iteration(problem, state, config)
            row = iteration_row(
                problem, k, next_state.x, state.z, next_state.z, reference, x_prev,
                local_ms, coord_ms, config.track_stationarity, config.active_tol,
            )
        except DopfError as e:
            logger.error("[admm k=%d] iteration failed: %s", k, e, exc_info=True)
            status, error = STATUS_FAILED, e
            break

        trace.append(row)
        log_row("admm", row)
        x_prev = next_state.x
        state = next_state
        if row.primal_gap < config.termination_eps and k + 1 >= config.min_iter:
            status = STATUS_CONVERGED
            break

    if status == STATUS_MAX_ITER:
        logger.warning("[admm] no convergence after %d iterations", config.max_iter)
    return EngineRun(trace=trace, state=state, status=status, error=error)


# ── 停滞检测 ────────────────────────────────────────────

def detect_stall(trace: ConvergenceTrace, config: AdmmConfig) -> StallReport:
    """
    最近 stall_window 次迭代中 max ‖xᵏ − xᵏ⁻¹‖∞ <= stall_tol，且全问题平稳性残差始终
    > 100·stall_tol 时判定为停滞（迭代点冻结但不是最优）。
    """
    window = config.stall_window
    if len(trace) < window:
        raise TraceError(f"stall detection needs at least {window} iterations, trace has {len(trace)}")
    rows = trace.rows[-window:]
    steps = [r.step_norm for r in rows if r.step_norm is not None]
    objective_drift = float(abs(rows[-1].objective - rows[0].objective))
    if not steps:
        return StallReport(stalled=False, objective_drift=objective_drift, window=window)

    max_step = float(max(steps))
    stationarities = [r.stationarity for r in rows]
    stationarity = None if any(s is None for s in stationarities) else float(min(stationarities))

    since_iter = None
    for row in reversed(trace.rows):
        if row.step_norm is None or row.step_norm > config.stall_tol:
            break
        since_iter = row.k

    frozen = max_step <= config.stall_tol
    if frozen and stationarity is None:
        logger.warning("iterates are frozen but no stationarity data was recorded; not flagging a stall")
    stalled = frozen and stationarity is not None and stationarity > 100 * config.stall_tol
    return StallReport(
        stalled=stalled,
        since_iter=since_iter if frozen else None,
        objective_drift=objective_drift,
        max_step=max_step,
        stationarity=stationarity,
        window=window,
    )
