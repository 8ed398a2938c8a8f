"""
区域增广子问题的原始-对偶内点求解器，以及 ALADIN 灵敏度提取和约束非线性最小二乘。

增广子问题:
    min f_i(x) + cᵀx + (ρ/2)(x − z)ᵀ M (x − z)
    s.t. g_i(x) = 0, h_i(x) <= 0, l <= x <= u

M 为 AᵢᵀAᵢ（coupling，ADMM 局部步）或 diag(Σᵢ)（scaled_identity，ALADIN 局部步）。
求解在平移坐标 d = x − z 下进行，ρ = 1e12 时 ρM·d 不会因相减而损失精度。
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import List, Optional, Tuple

import numpy as np
from scipy.optimize import least_squares

from config import DOPF_ACTIVE_TOL, DOPF_HESSIAN_FLOOR, DOPF_LSQ_TOL
from exceptions import InputError, LocalSolveError, PoisonedEvaluationError
from schemas.config import LocalSolverOptions
from services.kkt import InertiaCorrector, SingularSystemError
from services.nlp import SmoothFunction, Subproblem, Vector

logger = logging.getLogger("dopf.local_solver")

PROX_METRICS = ("coupling", "scaled_identity")

STATUS_OPTIMAL = "optimal"
STATUS_MAX_ITER = "max_iter"
STATUS_INFEASIBLE = "infeasible-detected"

# IPOPT 默认值：梯度上限 100 的目标缩放，κ_Σ 对偶安全界
_MAX_GRADIENT = 100.0
_KAPPA_SIGMA = 1e10
_ARMIJO_ETA = 1e-4
_MAX_BACKTRACK = 30
# 判定不可行时窗口内每一步 ‖α·dx‖∞ 的上限
_TINY_STEP = 1e-8


# ── 数据类型 ────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class AugmentedLocalProblem:
    """Subproblem 加上线性项 cᵀx 与以 prox_center 为中心的近端项。"""
    base: Subproblem
    linear_term: Vector
    prox_center: Vector
    prox_weight: float
    prox_metric: str = "coupling"

    def __post_init__(self):
        n = self.base.n_xi
        object.__setattr__(self, "linear_term", np.asarray(self.linear_term, dtype=float).reshape(-1))
        object.__setattr__(self, "prox_center", np.asarray(self.prox_center, dtype=float).reshape(-1))
        if self.linear_term.shape != (n,):
            raise InputError(f"linear_term has length {self.linear_term.size}, expected {n}")
        if self.prox_center.shape != (n,):
            raise InputError(f"prox_center has length {self.prox_center.size}, expected {n}")
        if not np.all(np.isfinite(self.prox_center)) or not np.all(np.isfinite(self.linear_term)):
            raise InputError("prox_center and linear_term must be finite")
        # ρ = 0 表示不加近端项
        if not (self.prox_weight >= 0 and np.isfinite(self.prox_weight)):
            raise InputError(f"prox_weight must be finite and >= 0, got {self.prox_weight}")
        if self.prox_metric not in PROX_METRICS:
            raise InputError(f"prox_metric must be one of {PROX_METRICS}")

    @cached_property
    def prox_matrix(self) -> np.ndarray:
        if self.prox_metric == "coupling":
            return (self.base.A.T @ self.base.A).toarray()
        return np.diag(self.base.scaling_diag)

    def objective(self, x: Vector) -> float:
        d = x - self.prox_center
        return (
            self.base.objective.scalar(x)
            + float(self.linear_term @ x)
            + 0.5 * self.prox_weight * float(d @ self.prox_matrix @ d)
        )


@dataclass(frozen=True, eq=False)
class LocalSolveResult:
    x_opt: Vector
    eq_duals: Vector
    ineq_duals: Vector
    lower_duals: Vector
    upper_duals: Vector
    status: str
    iterations: int
    objective: float = float("nan")
    kkt_error: float = float("nan")

    @property
    def bound_duals(self) -> Tuple[Vector, Vector]:
        return self.lower_duals, self.upper_duals

    @property
    def optimal(self) -> bool:
        return self.status == STATUS_OPTIMAL


@dataclass(frozen=True, eq=False)
class SensitivityPack:
    """ALADIN 第二步上传给协调器的 (B, g, C)。"""
    B: np.ndarray
    g: Vector
    C: np.ndarray
    licq: bool = True


@dataclass(frozen=True)
class LeastSquaresResult:
    x: Vector
    residual_norm: float
    converged: bool
    nfev: int
    message: str = ""


# ── 平移坐标下的 NLP ────────────────────────────────────

class _ShiftedNlp:
    """
    d = x − center 坐标下的增广子问题。目标乘以 obj_scale，约束不缩放。
    固定变量（l == u）作为线性等式追加在 g 之后。
    """

    def __init__(self, problem: AugmentedLocalProblem):
        base = problem.base
        self.problem = problem
        self.center = problem.prox_center
        self.rho = problem.prox_weight
        self.M = problem.prox_matrix
        self.n = base.n_xi
        self.n_g = base.n_g
        self.m_i = base.n_h

        fixed = base.lower == base.upper
        self.fixed_idx = np.flatnonzero(fixed)
        self.fixed_val = base.lower[fixed] - self.center[fixed]
        self.lo_idx = np.flatnonzero(np.isfinite(base.lower) & ~fixed)
        self.up_idx = np.flatnonzero(np.isfinite(base.upper) & ~fixed)
        self.lo = base.lower[self.lo_idx] - self.center[self.lo_idx]
        self.up = base.upper[self.up_idx] - self.center[self.up_idx]
        self.m_e = self.n_g + self.fixed_idx.size

        self._fixed_rows = np.zeros((self.fixed_idx.size, self.n))
        self._fixed_rows[np.arange(self.fixed_idx.size), self.fixed_idx] = 1.0
        self.obj_scale = 1.0

    def x(self, d: Vector) -> Vector:
        return self.center + d

    def objective(self, d: Vector) -> float:
        base = self.problem.base
        x = self.x(d)
        val = base.objective.scalar(x) + float(self.problem.linear_term @ x)
        if self.rho:
            val += 0.5 * self.rho * float(d @ self.M @ d)
        return self.obj_scale * val

    def unprox_gradient(self, d: Vector) -> Vector:
        return self.problem.base.objective.gradient(self.x(d)) + self.problem.linear_term

    def gradient(self, d: Vector) -> Vector:
        grad = self.unprox_gradient(d)
        if self.rho:
            grad = grad + self.rho * (self.M @ d)
        return self.obj_scale * grad

    def eq(self, d: Vector) -> Vector:
        g = self.problem.base.eq_constraints.value(self.x(d)) if self.n_g else np.zeros(0)
        return np.concatenate([g, d[self.fixed_idx] - self.fixed_val])

    def eq_jac(self, d: Vector) -> np.ndarray:
        jg = self.problem.base.eq_constraints.jac(self.x(d)) if self.n_g else np.zeros((0, self.n))
        return np.vstack([jg, self._fixed_rows])

    def ineq(self, d: Vector) -> Vector:
        return self.problem.base.ineq_constraints.value(self.x(d)) if self.m_i else np.zeros(0)

    def ineq_jac(self, d: Vector) -> np.ndarray:
        return self.problem.base.ineq_constraints.jac(self.x(d)) if self.m_i else np.zeros((0, self.n))

    def hessian(self, d: Vector, y_e: Vector, y_i: Vector) -> np.ndarray:
        base = self.problem.base
        x = self.x(d)
        H = base.objective.hess(x, np.array([1.0]))
        if self.rho:
            H = H + self.rho * self.M
        H = self.obj_scale * H
        if self.n_g:
            H = H + base.eq_constraints.hess(x, y_e[:self.n_g])
        if self.m_i:
            H = H + base.ineq_constraints.hess(x, y_i)
        return 0.5 * (H + H.T)


def _fraction_to_boundary(v: Vector, dv: Vector, tau: float) -> float:
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-tau * v[neg] / dv[neg])))


def infeasibility_stalled(
    theta_history: List[float],
    step_history: List[float],
    window: int,
    theta_floor: float,
) -> bool:
    """
    最近 window 次迭代中原始不可行度未下降 1%，且每一步 ‖α·dx‖∞ 都小于 1e-8。
    step_history[k] 为第 k 次迭代实际走出的步长，比 theta_history 少最后一项。
    """
    if len(theta_history) <= window or len(step_history) < window:
        return False
    theta = theta_history[-1]
    if theta <= theta_floor or theta <= 0.99 * theta_history[-window - 1]:
        return False
    return max(step_history[-window:]) < _TINY_STEP


def _bound_push(lo_x: Vector, up_x: Vector, kappa1: float, kappa2: float) -> Vector:
    """IPOPT 式初始点推离边界的距离 min(κ1·max(1,|bound|), κ2·(u−l))。"""
    width = up_x - lo_x
    push = kappa1 * np.maximum(1.0, np.abs(lo_x))
    return np.where(np.isfinite(width), np.minimum(push, kappa2 * width), push)


# ── 内点法 ──────────────────────────────────────────────

def solve_local(
    problem: AugmentedLocalProblem,
    warm_start: Optional[Vector] = None,
    options: Optional[LocalSolverOptions] = None,
    region: Optional[int] = None,
) -> LocalSolveResult:
    """
    原始-对偶内点法（Fiacco–McCormick 单调 μ 更新、惯性修正的 LDLᵀ、ℓ1 价值函数线搜索）。

    warm_start 缺省取 prox_center。因子分解彻底失败时抛出 LocalSolveError，
    max_iter / infeasible-detected 作为状态返回。
    """
    opts = options or LocalSolverOptions()
    tag = f"[region {region}] " if region is not None else ""
    nlp = _ShiftedNlp(problem)
    base = problem.base
    n = nlp.n

    start = problem.prox_center if warm_start is None else np.asarray(warm_start, dtype=float)
    if start.shape != (n,):
        raise InputError(f"{tag}warm_start has shape {start.shape}, expected ({n},)")
    if n == 0:
        return LocalSolveResult(np.zeros(0), np.zeros(base.n_g), np.zeros(base.n_h),
                                np.zeros(0), np.zeros(0), STATUS_OPTIMAL, 0, 0.0, 0.0)

    try:
        return _interior_point(nlp, start - problem.prox_center, opts, tag)
    except SingularSystemError as e:
        raise LocalSolveError(f"KKT factorization failed: {e}", region=region, status="factorization-failed") from e
    except PoisonedEvaluationError as e:
        if region is not None and e.region is None:
            raise PoisonedEvaluationError(str(e), region=region) from e
        raise


def _interior_point(nlp: _ShiftedNlp, d: Vector, opts: LocalSolverOptions, tag: str) -> LocalSolveResult:
    base = nlp.problem.base
    n, m_e, m_i = nlp.n, nlp.m_e, nlp.m_i
    lo_idx, up_idx = nlp.lo_idx, nlp.up_idx

    # 初始点推入边界内部
    d = d.copy()
    d[nlp.fixed_idx] = nlp.fixed_val
    # 推离距离不超过区间宽度的 κ2 倍，两侧推完后仍在 (l, u) 内
    if lo_idx.size:
        push = _bound_push(base.lower[lo_idx], base.upper[lo_idx], opts.bound_push, opts.bound_frac)
        d[lo_idx] = np.maximum(d[lo_idx], nlp.lo + push)
    if up_idx.size:
        push = _bound_push(-base.upper[up_idx], -base.lower[up_idx], opts.bound_push, opts.bound_frac)
        d[up_idx] = np.minimum(d[up_idx], nlp.up - push)

    grad0 = nlp.unprox_gradient(d)
    gmax = float(np.max(np.abs(grad0), initial=0.0))
    nlp.obj_scale = min(1.0, _MAX_GRADIENT / gmax) if gmax > 0 else 1.0

    h = nlp.ineq(d)
    s = np.maximum(-h, opts.bound_push)
    y_e = np.zeros(m_e)
    y_i = np.ones(m_i)
    v = np.ones(m_i)
    z_l = np.ones(lo_idx.size)
    z_u = np.ones(up_idx.size)
    mu = opts.mu_init
    nu = 1.0
    mu_min = opts.tol / 10.0
    corrector = InertiaCorrector(max_corrections=opts.max_inertia_corrections)
    theta_history: List[float] = []
    step_history: List[float] = []
    status = STATUS_MAX_ITER
    iteration = 0
    err0 = float("inf")

    def slacks(dd):
        return dd[lo_idx] - nlp.lo, nlp.up - dd[up_idx]

    def errors(dd, ss, ye, yi, vv, zl, zu, mu_val, grad, je, ji, ce, hh):
        sl, su = slacks(dd)
        r_x = grad + je.T @ ye + ji.T @ yi
        r_x[lo_idx] -= zl
        r_x[up_idx] += zu
        r_s = yi - vv
        theta = max(float(np.max(np.abs(ce), initial=0.0)), float(np.max(np.abs(hh + ss), initial=0.0)))
        comp = max(
            float(np.max(np.abs(zl * sl - mu_val), initial=0.0)),
            float(np.max(np.abs(zu * su - mu_val), initial=0.0)),
            float(np.max(np.abs(vv * ss - mu_val), initial=0.0)),
        )
        n_mult = m_e + m_i + zl.size + zu.size + vv.size
        s_d = max(_MAX_GRADIENT, (np.abs(ye).sum() + np.abs(yi).sum() + zl.sum() + zu.sum() + vv.sum())
                  / max(n_mult, 1)) / _MAX_GRADIENT
        n_z = zl.size + zu.size + vv.size
        s_c = max(_MAX_GRADIENT, (zl.sum() + zu.sum() + vv.sum()) / max(n_z, 1)) / _MAX_GRADIENT
        dual = max(float(np.max(np.abs(r_x), initial=0.0)), float(np.max(np.abs(r_s), initial=0.0)))
        return max(dual / s_d, theta, comp / s_c), theta

    for iteration in range(opts.max_iter + 1):
        grad = nlp.gradient(d)
        ce = nlp.eq(d)
        je = nlp.eq_jac(d)
        h = nlp.ineq(d)
        ji = nlp.ineq_jac(d)

        err0, theta = errors(d, s, y_e, y_i, v, z_l, z_u, 0.0, grad, je, ji, ce, h)
        theta_history.append(theta)
        if err0 <= opts.tol:
            status = STATUS_OPTIMAL
            break
        if iteration == opts.max_iter:
            break
        if infeasibility_stalled(theta_history, step_history, opts.stall_iters, max(1e-6, 100 * opts.tol)):
            status = STATUS_INFEASIBLE
            break

        # 单调 μ 更新
        while mu > mu_min:
            err_mu, _ = errors(d, s, y_e, y_i, v, z_l, z_u, mu, grad, je, ji, ce, h)
            if err_mu > opts.kappa_eps * mu:
                break
            mu = max(mu_min, mu / opts.mu_divisor)

        sl, su = slacks(d)
        sig_l = z_l / sl
        sig_u = z_u / su
        sig_s = v / s

        W = nlp.hessian(d, y_e, y_i)
        sigma_x = np.zeros(n)
        np.add.at(sigma_x, lo_idx, sig_l)
        np.add.at(sigma_x, up_idx, sig_u)
        H = W + np.diag(sigma_x)

        barrier_grad = grad.copy()
        barrier_grad[lo_idx] -= mu / sl
        barrier_grad[up_idx] += mu / su
        r_x = barrier_grad + je.T @ y_e + ji.T @ y_i

        J = np.vstack([je, ji])
        D = np.concatenate([np.zeros(m_e), 1.0 / sig_s])
        eq_mask = np.concatenate([np.ones(m_e), np.zeros(m_i)])
        rhs = -np.concatenate([r_x, ce, (h + s) - (y_i - mu / s) / sig_s])
        sol, delta_w = corrector.solve(H, J, D, eq_mask, rhs, mu)

        dx = sol[:n]
        dy_e = sol[n:n + m_e]
        dy_i = sol[n + m_e:]
        ds = -(dy_i + y_i - mu / s) / sig_s
        dz_l = mu / sl - z_l - sig_l * dx[lo_idx]
        dz_u = mu / su - z_u + sig_u * dx[up_idx]
        dv = mu / s - v - sig_s * ds

        tau = max(opts.tau_min, 1.0 - mu)
        alpha_max = min(
            _fraction_to_boundary(sl, dx[lo_idx], tau),
            _fraction_to_boundary(su, -dx[up_idx], tau),
            _fraction_to_boundary(s, ds, tau),
        )
        alpha_dual = min(
            _fraction_to_boundary(z_l, dz_l, tau),
            _fraction_to_boundary(z_u, dz_u, tau),
            _fraction_to_boundary(v, dv, tau),
        )

        # ℓ1 价值函数
        y_next = np.concatenate([y_e + dy_e, y_i + dy_i])
        nu = max(nu, 1.1 * float(np.max(np.abs(y_next), initial=0.0)) + 1.0)

        def merit(dd, ss):
            sl_t, su_t = slacks(dd)
            if np.any(sl_t <= 0) or np.any(su_t <= 0) or np.any(ss <= 0):
                return np.inf
            infeas = np.abs(nlp.eq(dd)).sum() + np.abs(nlp.ineq(dd) + ss).sum()
            return (nlp.objective(dd) - mu * (np.log(sl_t).sum() + np.log(su_t).sum() + np.log(ss).sum())
                    + nu * infeas)

        phi0 = merit(d, s)
        infeas0 = np.abs(ce).sum() + np.abs(h + s).sum()
        slope = float(barrier_grad @ dx) - float((mu / s) @ ds) - nu * infeas0

        alpha = alpha_max
        n_backtrack = 0
        while True:
            try:
                phi_trial = merit(d + alpha * dx, s + alpha * ds)
            except PoisonedEvaluationError:
                phi_trial = np.inf
            if slope >= -1e-14 * max(1.0, abs(phi0)):
                if np.isfinite(phi_trial):
                    break
            elif phi_trial <= phi0 + _ARMIJO_ETA * alpha * slope:
                break
            n_backtrack += 1
            if n_backtrack > _MAX_BACKTRACK:
                break
            alpha *= 0.5

        step_history.append(float(np.max(np.abs(alpha * dx), initial=0.0)))
        d = d + alpha * dx
        s = s + alpha * ds
        y_e = y_e + alpha * dy_e
        y_i = y_i + alpha * dy_i
        z_l = z_l + alpha_dual * dz_l
        z_u = z_u + alpha_dual * dz_u
        v = v + alpha_dual * dv

        # 对偶安全界，保证 Σ 与 μ/slack 的偏离不超过 κ_Σ 倍
        sl, su = slacks(d)
        z_l = np.clip(z_l, mu / (_KAPPA_SIGMA * sl), _KAPPA_SIGMA * mu / sl)
        z_u = np.clip(z_u, mu / (_KAPPA_SIGMA * su), _KAPPA_SIGMA * mu / su)
        v = np.clip(v, mu / (_KAPPA_SIGMA * s), _KAPPA_SIGMA * mu / s)

        if opts.verbose:
            logger.debug(
                "%s%4d %14.7e %8.2e %8.2e lg(mu)=%5.1f |dx|=%8.2e dw=%8.2e a=%8.2e/%8.2e ls=%d",
                tag, iteration, nlp.objective(d) / nlp.obj_scale, theta, err0, np.log10(mu),
                float(np.max(np.abs(dx))), delta_w, alpha_dual, alpha, n_backtrack,
            )

    x_opt = nlp.x(d)
    x_opt = np.clip(x_opt, base.lower, base.upper)
    scale = nlp.obj_scale

    lower_duals = np.zeros(n)
    upper_duals = np.zeros(n)
    lower_duals[lo_idx] = z_l / scale
    upper_duals[up_idx] = z_u / scale
    y_fixed = y_e[nlp.n_g:] / scale
    upper_duals[nlp.fixed_idx] = np.maximum(y_fixed, 0.0)
    lower_duals[nlp.fixed_idx] = np.maximum(-y_fixed, 0.0)

    if status != STATUS_OPTIMAL:
        logger.warning("%slocal solve ended with status=%s after %d iterations (error %.2e)",
                       tag, status, iteration, err0)
    return LocalSolveResult(
        x_opt=x_opt,
        eq_duals=y_e[:nlp.n_g] / scale,
        ineq_duals=np.maximum(y_i, 0.0) / scale,
        lower_duals=lower_duals,
        upper_duals=upper_duals,
        status=status,
        iterations=iteration,
        objective=nlp.problem.objective(x_opt),
        kkt_error=err0,
    )


# ── ALADIN 灵敏度 ───────────────────────────────────────

def floor_eigenvalues(H: np.ndarray, floor: float) -> np.ndarray:
    """对称化后把特征值截断到 floor 以上。"""
    H = 0.5 * (H + H.T)
    if H.size == 0:
        return H
    e, V = np.linalg.eigh(H)
    e = np.maximum(e, floor)
    B = (V * e) @ V.T
    return 0.5 * (B + B.T)


def active_constraint_jacobian(
    base: Subproblem,
    x: Vector,
    active_tol: float = DOPF_ACTIVE_TOL,
) -> np.ndarray:
    """所有 g 行、|h_j| <= active_tol 的 h 行、以及活跃边界的单位行。"""
    rows = []
    if base.n_g:
        rows.append(base.eq_constraints.jac(x))
    if base.n_h:
        h = base.ineq_constraints.value(x)
        active = np.abs(h) <= active_tol
        if np.any(active):
            rows.append(base.ineq_constraints.jac(x)[active])
    at_bound = (x - base.lower <= active_tol) | (base.upper - x <= active_tol)
    idx = np.flatnonzero(at_bound)
    if idx.size:
        unit = np.zeros((idx.size, base.n_xi))
        unit[np.arange(idx.size), idx] = 1.0
        rows.append(unit)
    if not rows:
        return np.zeros((0, base.n_xi))
    return np.vstack(rows)


def extract_sensitivities(
    problem: AugmentedLocalProblem,
    result: LocalSolveResult,
    active_tol: float = DOPF_ACTIVE_TOL,
    hessian_floor: float = DOPF_HESSIAN_FLOOR,
) -> SensitivityPack:
    """
    在局部解处计算 B = ∇²(f + 乘子ᵀ·约束)（特征值下限 hessian_floor）、g = ∇f 与活跃约束雅可比 C。
    """
    if not result.optimal:
        raise LocalSolveError(f"sensitivities need an optimal local solution, got {result.status}",
                              status=result.status)
    base = problem.base
    x = result.x_opt
    H = base.objective.hess(x, np.array([1.0]))
    if base.n_g:
        H = H + base.eq_constraints.hess(x, result.eq_duals)
    if base.n_h:
        H = H + base.ineq_constraints.hess(x, result.ineq_duals)
    B = floor_eigenvalues(H, hessian_floor)
    C = active_constraint_jacobian(base, x, active_tol)
    licq = C.shape[0] == 0 or np.linalg.matrix_rank(C) == C.shape[0]
    return SensitivityPack(B=B, g=base.objective.gradient(x), C=C, licq=bool(licq))


# ── 约束非线性最小二乘 ──────────────────────────────────

def solve_constrained_least_squares(
    residual: SmoothFunction,
    bounds: Tuple[Vector, Vector],
    start: Vector,
    tol: float = DOPF_LSQ_TOL,
    max_nfev: Optional[int] = None,
) -> LeastSquaresResult:
    """
    min ½‖r(x)‖² s.t. l <= x <= u（scipy trf，解析雅可比）。

    固定变量（l == u）在求解前消去。converged 表示 ‖r‖∞ <= tol；未收敛时返回最好的点与残差，
    由调用方决定如何处理。
    """
    if residual.dim_out < 1:
        raise InputError("least-squares residual must have at least one output")
    lower = np.asarray(bounds[0], dtype=float).reshape(residual.dim_in)
    upper = np.asarray(bounds[1], dtype=float).reshape(residual.dim_in)
    if np.any(lower > upper):
        raise InputError("least-squares bounds: lower exceeds upper")
    x_full = np.clip(np.asarray(start, dtype=float).reshape(residual.dim_in), lower, upper)

    free = np.flatnonzero(lower < upper)
    x_full[lower == upper] = lower[lower == upper]

    def embed(xf):
        out = x_full.copy()
        out[free] = xf
        return out

    start_norm = float(np.max(np.abs(residual.value(x_full))))
    if free.size == 0:
        return LeastSquaresResult(x_full, start_norm, start_norm <= tol, 1, "all variables fixed")
    if start_norm <= tol:
        # 起点已满足，原样返回（trf 会把边界上的点推入内部）
        return LeastSquaresResult(x_full, start_norm, True, 1, "start point already satisfies tolerance")

    sol = least_squares(
        lambda xf: residual.value(embed(xf)),
        x_full[free],
        jac=lambda xf: residual.jac(embed(xf))[:, free],
        bounds=(lower[free], upper[free]),
        method="trf",
        x_scale="jac",
        xtol=1e-15,
        ftol=1e-15,
        gtol=1e-15,
        max_nfev=max_nfev,
    )
    x = embed(sol.x)
    norm = float(np.max(np.abs(residual.value(x))))
    converged = norm <= tol
    if not converged:
        logger.info("least squares stopped with residual %.3e (%s)", norm, sol.message)
    return LeastSquaresResult(x=x, residual_norm=norm, converged=converged, nfev=int(sol.nfev), message=str(sol.message))
