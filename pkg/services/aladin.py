"""
全步长 ALADIN：Σ 加权局部步、灵敏度收集、带松弛 s 与 μ 罚项的协调 QP、原始-对偶全步更新。
"""

import logging
import math
import time
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from config import DOPF_HESSIAN_FLOOR
from exceptions import CoordinationError, DopfError, InputError, LocalSolveError
from schemas.config import AladinConfig
from schemas.trace import ConvergenceTrace
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
from services.local_solver import (
    AugmentedLocalProblem,
    LocalSolveResult,
    SensitivityPack,
    extract_sensitivities,
    floor_eigenvalues,
    solve_local,
)
from services.nlp import IterateState, PartitionedProblem, Vector, consensus_gap

logger = logging.getLogger("dopf.aladin")


@dataclass(frozen=True, eq=False)
class CoordinationResult:
    delta_x: Tuple[Vector, ...]
    slack: Vector
    lambda_qp: Vector
    # 每个区域因线性相关被删去的 C 行数
    dropped_rows: Tuple[int, ...] = ()


# ── 局部步与灵敏度 ──────────────────────────────────────

def _local_problem(problem: PartitionedProblem, state: IterateState, config: AladinConfig, i: int):
    region = problem.regions[i]
    return AugmentedLocalProblem(
        base=region,
        linear_term=region.A.T @ state.lambda_global,
        prox_center=state.z[i],
        prox_weight=config.rho,
        prox_metric="scaled_identity",
    )


def aladin_local_step(
    problem: PartitionedProblem,
    state: IterateState,
    config: AladinConfig,
) -> List[LocalSolveResult]:
    """每个区域求解 f_i(x) + λᵀA_i x + (ρ/2)‖x − z_i‖²_Σᵢ；κ_i 在 ineq_duals 中返回。"""
    if state.lambda_global is None:
        raise InputError("ALADIN local step needs the global multiplier")
    state.validate(problem)

    def solve(i: int) -> LocalSolveResult:
        aug = _local_problem(problem, state, config, i)
        result = solve_local(aug, warm_start=state.z[i], options=config.solver, region=i)
        if not result.optimal:
            raise LocalSolveError(f"local NLP returned {result.status}", region=i, status=result.status)
        return result

    return map_regions(solve, len(problem.regions), config.workers)


def collect_sensitivities(
    problem: PartitionedProblem,
    state: IterateState,
    results: Sequence[LocalSolveResult],
    config: AladinConfig,
) -> List[SensitivityPack]:
    def extract(i: int) -> SensitivityPack:
        pack = extract_sensitivities(
            _local_problem(problem, state, config, i), results[i], config.active_tol, config.hessian_floor
        )
        if not pack.licq:
            logger.warning("[region %d] active constraint Jacobian is rank deficient (LICQ violated)", i)
        return pack

    return map_regions(extract, len(problem.regions), config.workers)


def similarity_packs(
    problem: PartitionedProblem,
    lambdas: Sequence[Vector],
    rho: float,
    floor: float = DOPF_HESSIAN_FLOOR,
) -> List[SensitivityPack]:
    """
    ADMM 相似性替换：去掉 C，B_i = ρA_iᵀA_i（特征值下限 floor），g_i = A_iᵀλ_i。
    配合 μ = inf 使用时，协调 QP 与 ADMM 一致性 QP 相同。
    """
    if len(lambdas) != len(problem.regions):
        raise InputError("similarity packs need one multiplier vector per region")
    packs = []
    for region, lam in zip(problem.regions, lambdas):
        AtA = (region.A.T @ region.A).toarray()
        packs.append(SensitivityPack(
            B=floor_eigenvalues(rho * AtA, floor),
            g=region.A.T @ np.asarray(lam, dtype=float),
            C=np.zeros((0, region.n_xi)),
        ))
    return packs


# ── 协调 QP ─────────────────────────────────────────────

def independent_rows(C: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """列主元 QR 选出 C 的线性无关行，按原顺序返回行下标。"""
    if C.shape[0] == 0:
        return np.zeros(0, dtype=int)
    _, R, piv = scipy.linalg.qr(C.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0.0:
        return np.zeros(0, dtype=int)
    rank = int(np.sum(diag > tol * diag[0]))
    return np.sort(piv[:rank])


def aladin_coordination(
    problem: PartitionedProblem,
    x: Sequence[Vector],
    packs: Sequence[SensitivityPack],
    lam: Vector,
    mu: float,
) -> CoordinationResult:
    """
    min Σ ½Δx_iᵀB_iΔx_i + g_iᵀΔx_i + λᵀs + (μ/2)‖s‖²
    s.t. Σ A_i(x_i + Δx_i) = s,  C_iΔx_i = 0

    通过 λ^QP = λ + μs 消去 s，得到对称拟定 KKT 系统
        [[B, Aᵀ, Cᵀ], [A, −I/μ, 0], [C, 0, 0]] [Δx; λ^QP; η] = [−g; −Ax − λ/μ; 0]。
    μ = inf 时 s ≡ 0。线性相关的 C 行按区域删去并告警。
    """
    problem.check_parts(x)
    if len(packs) != len(problem.regions):
        raise InputError("coordination needs one sensitivity pack per region")
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (problem.n_c,):
        raise InputError(f"lambda has shape {lam.shape}, expected ({problem.n_c},)")
    if not mu > 0:
        raise InputError("mu must be > 0")

    offsets = problem.offsets
    n_x = problem.n_x
    n_c = problem.n_c

    C_blocks = []
    dropped = []
    for i, pack in enumerate(packs):
        keep = independent_rows(pack.C)
        n_drop = pack.C.shape[0] - keep.size
        if n_drop:
            logger.warning("[region %d] dropped %d linearly dependent active-constraint rows", i, n_drop)
        dropped.append(n_drop)
        block = np.zeros((keep.size, n_x))
        block[:, offsets[i]:offsets[i + 1]] = pack.C[keep]
        C_blocks.append(block)
    C = np.vstack(C_blocks) if C_blocks else np.zeros((0, n_x))
    n_C = C.shape[0]

    B = scipy.linalg.block_diag(*[pack.B for pack in packs]) if packs else np.zeros((0, 0))
    g = np.concatenate([pack.g for pack in packs])
    A = problem.coupling_matrix().toarray() if n_c else np.zeros((0, n_x))
    Ax = A @ np.concatenate([np.asarray(v, dtype=float) for v in x])

    finite_mu = math.isfinite(mu)
    size = n_x + n_c + n_C
    K = np.zeros((size, size))
    K[:n_x, :n_x] = B
    K[n_x:n_x + n_c, :n_x] = A
    K[:n_x, n_x:n_x + n_c] = A.T
    K[n_x + n_c:, :n_x] = C
    K[:n_x, n_x + n_c:] = C.T
    rhs = np.zeros(size)
    rhs[:n_x] = -g
    if finite_mu:
        K[n_x:n_x + n_c, n_x:n_x + n_c] = -np.eye(n_c) / mu
        rhs[n_x:n_x + n_c] = -Ax - lam / mu
    else:
        rhs[n_x:n_x + n_c] = -Ax

    try:
        sol = solve_symmetric(K, rhs, expected_inertia=(n_x, n_c + n_C))
    except SingularSystemError as e:
        raise CoordinationError(f"coordination KKT system is singular after dropping dependent rows: {e}") from e

    dx_full = sol[:n_x]
    lambda_qp = sol[n_x:n_x + n_c]
    slack = (lambda_qp - lam) / mu if finite_mu else np.zeros(n_c)
    delta = tuple(dx_full[a:b].copy() for a, b in zip(offsets[:-1], offsets[1:]))
    return CoordinationResult(delta_x=delta, slack=slack, lambda_qp=lambda_qp, dropped_rows=tuple(dropped))


# ── 主循环 ──────────────────────────────────────────────

def aladin_iteration(
    problem: PartitionedProblem,
    state: IterateState,
    config: AladinConfig,
) -> Tuple[IterateState, CoordinationResult, float, float]:
    """一次全步 ALADIN 迭代：zᵏ⁺¹ = xᵏ + Δxᵏ，λᵏ⁺¹ = λ^QP。"""
    t0 = time.perf_counter()
    results = aladin_local_step(problem, state, config)
    packs = collect_sensitivities(problem, state, results, config)
    t1 = time.perf_counter()
    x = tuple(res.x_opt for res in results)
    coord = aladin_coordination(problem, x, packs, state.lambda_global, config.mu)
    z = tuple(xi + dx for xi, dx in zip(x, coord.delta_x))
    t2 = time.perf_counter()
    next_state = IterateState(x=x, z=z, lambda_global=coord.lambda_qp, k=state.k + 1)
    return next_state, coord, (t1 - t0) * 1e3, (t2 - t1) * 1e3


def aladin_run(
    problem: PartitionedProblem,
    initial: IterateState,
    config: AladinConfig,
    reference: Optional[Vector] = None,
    label: str = "aladin",
) -> EngineRun:
    """
    全步长迭代直到 max(‖Axᵏ‖∞, ‖xᵏ − zᵏ‖∞) <= ε 或达到 max_iter；轨迹格式与 ADMM 相同。
    """
    if initial.lambda_global is None:
        raise InputError("ALADIN needs a global multiplier (lambda_global)")
    initial.validate(problem)
    trace = ConvergenceTrace(label=label)
    state = initial
    x_prev = None
    status = STATUS_MAX_ITER
    error = None

    for k in range(config.max_iter):
        try:
            next_state, _, local_ms, coord_ms = aladin_iteration(problem, state, config)
            row = iteration_row(
                problem, k, next_state.x, state.z, next_state.z, reference, x_prev,
                local_ms, coord_ms, config.track_stationarity, config.active_tol,
            )
            gap = max(
                consensus_gap(problem, next_state.x),
                max(float(np.max(np.abs(xi - zi), initial=0.0)) for xi, zi in zip(next_state.x, state.z)),
            )
        except DopfError as e:
            logger.error("[aladin k=%d] iteration failed: %s", k, e, exc_info=True)
            status, error = STATUS_FAILED, e
            break

        trace.append(row)
        log_row("aladin", row)
        x_prev = next_state.x
        state = next_state
        if gap <= config.termination_eps and k + 1 >= config.min_iter:
            status = STATUS_CONVERGED
            break

    if status == STATUS_MAX_ITER:
        logger.warning("[aladin] no convergence after %d iterations", config.max_iter)
    return EngineRun(trace=trace, state=state, status=status, error=error)
