"""
仿射耦合可分 NLP 的数据模型与全问题度量。

    min Σ f_i(x_i)  s.t.  g_i(x_i) = 0, h_i(x_i) <= 0, l_i <= x_i <= u_i,  Σ A_i x_i = 0

等式约束 g_i 原生保留，不拆成两条不等式。所有类型构造后不可变，可跨线程共享。
"""

import logging
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.optimize import lsq_linear

from exceptions import InputError, PoisonedEvaluationError
from schemas.trace import KKTResidual

logger = logging.getLogger("dopf.nlp")

Vector = np.ndarray


# ── 光滑函数 ────────────────────────────────────────────

def _dense(mat) -> np.ndarray:
    if sp.issparse(mat):
        return mat.toarray()
    return np.asarray(mat, dtype=float)


@dataclass(frozen=True, eq=False)
class SmoothFunction:
    """
    二阶连续可微映射的回调组合。

    ``eval(x)`` 返回长度 dim_out 的向量，``jacobian(x)`` 返回 dim_out × dim_in
    （稠密或稀疏），``hessian_vlp(x, w)`` 返回 Σ_j w_j ∇²f_j(x)。
    任何 NaN/Inf 都会抛出 PoisonedEvaluationError。
    """
    dim_in: int
    dim_out: int
    eval: Callable[[Vector], Vector]
    jacobian: Callable[[Vector], object]
    hessian_vlp: Callable[[Vector, Vector], object]
    name: str = ""

    def _check(self, what: str, arr: np.ndarray) -> np.ndarray:
        if not np.all(np.isfinite(arr)):
            raise PoisonedEvaluationError(f"{self.name or 'function'}: non-finite {what}")
        return arr

    def value(self, x: Vector) -> Vector:
        out = np.asarray(self.eval(x), dtype=float).reshape(self.dim_out)
        return self._check("value", out)

    def jac(self, x: Vector) -> np.ndarray:
        out = _dense(self.jacobian(x)).reshape(self.dim_out, self.dim_in)
        return self._check("jacobian", out)

    def hess(self, x: Vector, weights: Vector) -> np.ndarray:
        if self.dim_out == 0:
            return np.zeros((self.dim_in, self.dim_in))
        out = _dense(self.hessian_vlp(x, np.asarray(weights, dtype=float)))
        return self._check("hessian", out.reshape(self.dim_in, self.dim_in))

    def scalar(self, x: Vector) -> float:
        return float(self.value(x)[0])

    def gradient(self, x: Vector) -> Vector:
        return self.jac(x)[0]


def quadratic_function(Q, c: Optional[Vector] = None, const: float = 0.0, name: str = "") -> SmoothFunction:
    """f(x) = ½ xᵀQx + cᵀx + const。"""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    n = Q.shape[0]
    Q = 0.5 * (Q + Q.T)
    c = np.zeros(n) if c is None else np.asarray(c, dtype=float).reshape(n)

    return SmoothFunction(
        dim_in=n,
        dim_out=1,
        eval=lambda x: np.array([0.5 * x @ Q @ x + c @ x + const]),
        jacobian=lambda x: (Q @ x + c).reshape(1, n),
        hessian_vlp=lambda x, w: w[0] * Q,
        name=name or "quadratic",
    )


def affine_function(J, b: Optional[Vector] = None, name: str = "") -> SmoothFunction:
    """F(x) = Jx + b。"""
    J = np.atleast_2d(np.asarray(J, dtype=float))
    m, n = J.shape
    b = np.zeros(m) if b is None else np.asarray(b, dtype=float).reshape(m)

    return SmoothFunction(
        dim_in=n,
        dim_out=m,
        eval=lambda x: J @ x + b,
        jacobian=lambda x: J,
        hessian_vlp=lambda x, w: np.zeros((n, n)),
        name=name or "affine",
    )


def zero_function(n: int, m: int = 0, name: str = "") -> SmoothFunction:
    """输出恒为 0 的 m 维映射（m=0 表示没有约束）。"""
    return SmoothFunction(
        dim_in=n,
        dim_out=m,
        eval=lambda x: np.zeros(m),
        jacobian=lambda x: np.zeros((m, n)),
        hessian_vlp=lambda x, w: np.zeros((n, n)),
        name=name or "zero",
    )


def check_derivatives(
    fn: SmoothFunction,
    x: Vector,
    weights: Optional[Vector] = None,
    step: float = 1e-6,
) -> Tuple[float, float]:
    """
    中心差分校验导数。

    返回 (jacobian 相对误差, hessian_vlp 相对误差)，误差按 max(1, ‖解析值‖∞) 归一。
    """
    x = np.asarray(x, dtype=float)
    n = fn.dim_in
    w = np.ones(fn.dim_out) if weights is None else np.asarray(weights, dtype=float)

    jac = fn.jac(x)
    jac_fd = np.zeros_like(jac)
    hess = fn.hess(x, w)
    hess_fd = np.zeros_like(hess)
    for j in range(n):
        e = np.zeros(n)
        e[j] = step
        jac_fd[:, j] = (fn.value(x + e) - fn.value(x - e)) / (2 * step)
        hess_fd[:, j] = (fn.jac(x + e).T @ w - fn.jac(x - e).T @ w) / (2 * step)

    def rel(a, b):
        if a.size == 0:
            return 0.0
        return float(np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(a))))

    return rel(jac, jac_fd), rel(hess, hess_fd)


def sum_functions(parts: Sequence[Tuple[SmoothFunction, int]], n: int, name: str = "") -> SmoothFunction:
    """把定义在子向量上的标量函数按偏移量相加为 n 维上的标量函数。"""

    def _eval(x):
        return np.array([sum(fn.scalar(x[o:o + fn.dim_in]) for fn, o in parts)])

    def _jac(x):
        out = np.zeros((1, n))
        for fn, o in parts:
            out[0, o:o + fn.dim_in] = fn.gradient(x[o:o + fn.dim_in])
        return out

    def _hess(x, w):
        out = np.zeros((n, n))
        for fn, o in parts:
            sl = slice(o, o + fn.dim_in)
            out[sl, sl] = fn.hess(x[sl], w[:1])
        return out

    return SmoothFunction(dim_in=n, dim_out=1, eval=_eval, jacobian=_jac, hessian_vlp=_hess, name=name)


def stack_functions(
    parts: Sequence[Tuple[SmoothFunction, int]],
    n: int,
    linear_rows=None,
    name: str = "",
) -> SmoothFunction:
    """
    把子向量上的向量函数按块对角堆叠；``linear_rows`` 为附加在末尾的线性行（m × n）。
    """
    lin = None if linear_rows is None else sp.csr_matrix(linear_rows)
    m_lin = 0 if lin is None else lin.shape[0]
    row_offsets = np.cumsum([0] + [fn.dim_out for fn, _ in parts])
    m = int(row_offsets[-1]) + m_lin

    def _eval(x):
        out = np.zeros(m)
        for (fn, o), r in zip(parts, row_offsets):
            out[r:r + fn.dim_out] = fn.value(x[o:o + fn.dim_in])
        if lin is not None:
            out[row_offsets[-1]:] = lin @ x
        return out

    def _jac(x):
        out = np.zeros((m, n))
        for (fn, o), r in zip(parts, row_offsets):
            out[r:r + fn.dim_out, o:o + fn.dim_in] = fn.jac(x[o:o + fn.dim_in])
        if lin is not None:
            out[row_offsets[-1]:, :] = lin.toarray()
        return out

    def _hess(x, w):
        out = np.zeros((n, n))
        for (fn, o), r in zip(parts, row_offsets):
            sl = slice(o, o + fn.dim_in)
            out[sl, sl] += fn.hess(x[sl], w[r:r + fn.dim_out])
        return out

    return SmoothFunction(dim_in=n, dim_out=m, eval=_eval, jacobian=_jac, hessian_vlp=_hess, name=name)


# ── 子问题与分区问题 ────────────────────────────────────

@dataclass(frozen=True, eq=False)
class Subproblem:
    """
    单个区域的数据: f_i, g_i (等式), h_i (不等式), 盒约束, 耦合矩阵 A_i 与 Σ_i 对角。
    """
    n_xi: int
    objective: SmoothFunction
    eq_constraints: SmoothFunction
    ineq_constraints: SmoothFunction
    lower: Vector
    upper: Vector
    A: sp.csc_matrix
    scaling_diag: Vector
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "lower", np.asarray(self.lower, dtype=float).reshape(self.n_xi))
        object.__setattr__(self, "upper", np.asarray(self.upper, dtype=float).reshape(self.n_xi))
        object.__setattr__(self, "scaling_diag", np.asarray(self.scaling_diag, dtype=float).reshape(self.n_xi))
        object.__setattr__(self, "A", sp.csc_matrix(self.A, dtype=float))

        if self.objective.dim_out != 1:
            raise InputError(f"{self.name}: objective must be scalar")
        for fn in (self.objective, self.eq_constraints, self.ineq_constraints):
            if fn.dim_in != self.n_xi:
                raise InputError(f"{self.name}: {fn.name} expects {fn.dim_in} inputs, region has {self.n_xi}")
        if self.A.shape[1] != self.n_xi:
            raise InputError(f"{self.name}: A has {self.A.shape[1]} columns, expected {self.n_xi}")
        if not np.all(self.scaling_diag > 0):
            raise InputError(f"{self.name}: scaling_diag must be strictly positive")
        if np.any(self.lower > self.upper):
            raise InputError(f"{self.name}: lower bound exceeds upper bound")

    @property
    def n_c(self) -> int:
        return self.A.shape[0]

    @property
    def n_g(self) -> int:
        return self.eq_constraints.dim_out

    @property
    def n_h(self) -> int:
        return self.ineq_constraints.dim_out

    def bound_violation(self, x: Vector) -> float:
        if self.n_xi == 0:
            return 0.0
        below = np.maximum(self.lower - x, 0.0)
        above = np.maximum(x - self.upper, 0.0)
        return float(max(below.max(), above.max()))

    def violation(self, x: Vector) -> float:
        """max(‖g(x)‖∞, ‖max(h(x),0)‖∞, 盒约束违反量)。"""
        parts = [self.bound_violation(x)]
        if self.n_g:
            parts.append(float(np.max(np.abs(self.eq_constraints.value(x)))))
        if self.n_h:
            parts.append(float(np.max(np.maximum(self.ineq_constraints.value(x), 0.0))))
        return max(parts)

    def with_scaling(self, scaling_diag: Vector) -> "Subproblem":
        return replace(self, scaling_diag=np.asarray(scaling_diag, dtype=float))


@dataclass(frozen=True, eq=False)
class PartitionedProblem:
    """有序区域列表，所有 A_i 行数均为 n_c。"""
    regions: Tuple[Subproblem, ...]
    n_c: int

    def __post_init__(self):
        object.__setattr__(self, "regions", tuple(self.regions))
        if not self.regions:
            raise InputError("problem needs at least one region")
        for i, region in enumerate(self.regions):
            if region.n_c != self.n_c:
                raise InputError(f"[region {i}] A has {region.n_c} rows, problem has n_c={self.n_c}")

    def __len__(self) -> int:
        return len(self.regions)

    @cached_property
    def offsets(self) -> np.ndarray:
        return np.cumsum([0] + [r.n_xi for r in self.regions])

    @property
    def n_x(self) -> int:
        return int(self.offsets[-1])

    def split(self, x_full: Vector) -> List[Vector]:
        x_full = np.asarray(x_full, dtype=float)
        if x_full.shape != (self.n_x,):
            raise InputError(f"expected vector of length {self.n_x}, got {x_full.shape}")
        return [x_full[a:b].copy() for a, b in zip(self.offsets[:-1], self.offsets[1:])]

    def concat(self, parts: Sequence[Vector]) -> Vector:
        self.check_parts(parts)
        if not parts:
            return np.zeros(0)
        return np.concatenate([np.asarray(p, dtype=float) for p in parts])

    def check_parts(self, parts: Sequence[Vector], what: str = "x") -> None:
        if len(parts) != len(self.regions):
            raise InputError(f"{what}: expected {len(self.regions)} region vectors, got {len(parts)}")
        for i, (p, region) in enumerate(zip(parts, self.regions)):
            if np.shape(p) != (region.n_xi,):
                raise InputError(f"[region {i}] {what} has shape {np.shape(p)}, expected ({region.n_xi},)")

    def coupling_matrix(self) -> sp.csr_matrix:
        """[A_1 … A_R]，仅在合并为集中问题时使用。"""
        return sp.hstack([r.A for r in self.regions], format="csr")

    @cached_property
    def row_space_bases(self) -> Tuple[np.ndarray, ...]:
        """每个区域 range(A_iᵀ) 的正交基 U_i（n_xi × rank A_i）。"""
        bases = []
        for region in self.regions:
            dense = region.A.toarray()
            if dense.size == 0 or not np.any(dense):
                bases.append(np.zeros((region.n_xi, 0)))
            else:
                bases.append(scipy.linalg.orth(dense.T))
        return tuple(bases)

    def with_scaling(self, diags: Sequence[Vector]) -> "PartitionedProblem":
        return PartitionedProblem(
            regions=tuple(r.with_scaling(d) for r, d in zip(self.regions, diags)),
            n_c=self.n_c,
        )


@dataclass(frozen=True, eq=False)
class IterateState:
    """
    单次迭代的算法状态。ADMM 使用逐区域 λ_i（lambda_local），ALADIN 使用全局 λ（lambda_global）。
    """
    x: Tuple[Vector, ...]
    z: Tuple[Vector, ...]
    lambda_local: Optional[Tuple[Vector, ...]] = None
    lambda_global: Optional[Vector] = None
    k: int = 0

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(np.asarray(v, dtype=float) for v in self.x))
        object.__setattr__(self, "z", tuple(np.asarray(v, dtype=float) for v in self.z))
        if (self.lambda_local is None) == (self.lambda_global is None):
            raise InputError("exactly one of lambda_local / lambda_global must be set")
        if self.lambda_local is not None:
            object.__setattr__(
                self, "lambda_local", tuple(np.asarray(v, dtype=float) for v in self.lambda_local)
            )
        else:
            object.__setattr__(self, "lambda_global", np.asarray(self.lambda_global, dtype=float))

    @classmethod
    def initial(
        cls,
        problem: PartitionedProblem,
        z: Sequence[Vector],
        engine: str = "admm",
        lambda0=None,
    ) -> "IterateState":
        """由 z⁰ 构造初始状态；λ⁰ 缺省为 0。"""
        problem.check_parts(z, "z")
        z = tuple(np.array(v, dtype=float) for v in z)
        if engine == "admm":
            lam = lambda0 if lambda0 is not None else [np.zeros(problem.n_c) for _ in problem.regions]
            state = cls(x=z, z=z, lambda_local=tuple(lam), k=0)
        elif engine == "aladin":
            lam = lambda0 if lambda0 is not None else np.zeros(problem.n_c)
            state = cls(x=z, z=z, lambda_global=lam, k=0)
        else:
            raise InputError(f"unknown engine {engine!r}")
        state.validate(problem)
        return state

    def validate(self, problem: PartitionedProblem) -> None:
        problem.check_parts(self.x, "x")
        problem.check_parts(self.z, "z")
        if self.lambda_local is not None:
            if len(self.lambda_local) != len(problem.regions):
                raise InputError("lambda_local must have one vector per region")
            for i, lam in enumerate(self.lambda_local):
                if lam.shape != (problem.n_c,):
                    raise InputError(f"[region {i}] lambda has shape {lam.shape}, expected ({problem.n_c},)")
        elif self.lambda_global.shape != (problem.n_c,):
            raise InputError(f"lambda has shape {self.lambda_global.shape}, expected ({problem.n_c},)")


# ── 全问题度量 ──────────────────────────────────────────

def consensus_gap(problem: PartitionedProblem, x: Sequence[Vector]) -> float:
    """‖Σ_i A_i x_i‖∞。"""
    problem.check_parts(x)
    if problem.n_c == 0:
        return 0.0
    total = np.zeros(problem.n_c)
    for region, xi in zip(problem.regions, x):
        total += region.A @ xi
    return float(np.max(np.abs(total)))


def primal_gap(problem: PartitionedProblem, x: Sequence[Vector], z: Sequence[Vector]) -> float:
    """max_i ‖A_i(x_i − z_i)‖∞。"""
    problem.check_parts(x)
    problem.check_parts(z, "z")
    if problem.n_c == 0:
        return 0.0
    return float(max(
        np.max(np.abs(region.A @ (xi - zi))) for region, xi, zi in zip(problem.regions, x, z)
    ))


def constraint_violation(problem: PartitionedProblem, z: Sequence[Vector]) -> float:
    """所有区域上 max(‖g_i‖∞, ‖max(h_i,0)‖∞, 盒约束违反量)。"""
    problem.check_parts(z, "z")
    worst = 0.0
    for i, (region, zi) in enumerate(zip(problem.regions, z)):
        try:
            worst = max(worst, region.violation(zi))
        except PoisonedEvaluationError as e:
            raise PoisonedEvaluationError(str(e), region=i) from e
    return worst


def objective_value(problem: PartitionedProblem, x: Sequence[Vector]) -> float:
    problem.check_parts(x)
    total = 0.0
    for i, (region, xi) in enumerate(zip(problem.regions, x)):
        try:
            total += region.objective.scalar(xi)
        except PoisonedEvaluationError as e:
            raise PoisonedEvaluationError(str(e), region=i) from e
    return total


def distance_inf(problem: PartitionedProblem, x: Sequence[Vector], x_ref: Vector) -> float:
    """‖x − x*‖∞（x* 为拼接后的全向量）。"""
    return float(np.max(np.abs(problem.concat(x) - np.asarray(x_ref, dtype=float)), initial=0.0))


# ── KKT 残差 ────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class ProblemDuals:
    """全问题 (1) 的乘子：耦合行 λ 与各区域的局部约束乘子。"""
    consensus: Vector
    eq: Tuple[Vector, ...]
    ineq: Tuple[Vector, ...]
    lower: Tuple[Vector, ...]
    upper: Tuple[Vector, ...]

    @classmethod
    def zeros(cls, problem: PartitionedProblem) -> "ProblemDuals":
        return cls(
            consensus=np.zeros(problem.n_c),
            eq=tuple(np.zeros(r.n_g) for r in problem.regions),
            ineq=tuple(np.zeros(r.n_h) for r in problem.regions),
            lower=tuple(np.zeros(r.n_xi) for r in problem.regions),
            upper=tuple(np.zeros(r.n_xi) for r in problem.regions),
        )


def _complementarity(values: Vector, duals: Vector) -> float:
    """|dual·slack| 及对偶符号违反；slack 为 inf 时对偶必须为 0。"""
    if values.size == 0:
        return 0.0
    finite = np.isfinite(values)
    prod = np.where(finite, np.abs(duals * np.where(finite, values, 0.0)), np.abs(duals))
    sign = np.maximum(-duals, 0.0)
    return float(max(prod.max(), sign.max()))


def kkt_residual(problem: PartitionedProblem, x: Sequence[Vector], duals: ProblemDuals) -> KKTResidual:
    """全问题 (1) 三块 KKT 残差的 ∞-范数。"""
    problem.check_parts(x)
    if duals.consensus.shape != (problem.n_c,):
        raise InputError("consensus duals must cover all consensus rows")

    stationarity = 0.0
    complementarity = 0.0
    for i, (region, xi) in enumerate(zip(problem.regions, x)):
        try:
            grad = region.objective.gradient(xi) + region.A.T @ duals.consensus
            if region.n_g:
                grad += region.eq_constraints.jac(xi).T @ duals.eq[i]
            if region.n_h:
                grad += region.ineq_constraints.jac(xi).T @ duals.ineq[i]
                h = region.ineq_constraints.value(xi)
                complementarity = max(complementarity, _complementarity(-h, duals.ineq[i]))
        except PoisonedEvaluationError as e:
            raise PoisonedEvaluationError(str(e), region=i) from e
        grad += duals.upper[i] - duals.lower[i]
        if region.n_xi:
            stationarity = max(stationarity, float(np.max(np.abs(grad))))
            complementarity = max(
                complementarity,
                _complementarity(xi - region.lower, duals.lower[i]),
                _complementarity(region.upper - xi, duals.upper[i]),
            )

    primal = max(consensus_gap(problem, x), constraint_violation(problem, x))
    return KKTResidual(stationarity=stationarity, primal=primal, complementarity=complementarity)


def estimate_multipliers(
    problem: PartitionedProblem,
    x: Sequence[Vector],
    active_tol: float = 1e-6,
) -> ProblemDuals:
    """
    对给定原始点求最小化平稳性残差的乘子（有界线性最小二乘）。

    只有活跃（|h_j| ≤ active_tol 或距边界 ≤ active_tol）的不等式/边界获得非负乘子，
    其余乘子为 0，因此互补性自动满足；返回值代入 kkt_residual 即为平稳性证书。
    """
    problem.check_parts(x)
    n_x = problem.n_x
    columns: List[np.ndarray] = []
    lb: List[float] = []
    ub: List[float] = []
    rhs = np.zeros(n_x)
    # (kind, region, index) 用于把解回填到 ProblemDuals
    slots: List[Tuple[str, int, int]] = []

    offsets = problem.offsets
    if problem.n_c:
        at = problem.coupling_matrix().T.toarray()
        for row in range(problem.n_c):
            columns.append(at[:, row])
            lb.append(-np.inf)
            ub.append(np.inf)
            slots.append(("consensus", -1, row))

    for i, (region, xi) in enumerate(zip(problem.regions, x)):
        o = offsets[i]
        sl = slice(o, o + region.n_xi)
        try:
            rhs[sl] = -region.objective.gradient(xi)
            if region.n_g:
                jg = region.eq_constraints.jac(xi)
                for j in range(region.n_g):
                    col = np.zeros(n_x)
                    col[sl] = jg[j]
                    columns.append(col)
                    lb.append(-np.inf)
                    ub.append(np.inf)
                    slots.append(("eq", i, j))
            if region.n_h:
                h = region.ineq_constraints.value(xi)
                jh = region.ineq_constraints.jac(xi)
                for j in np.flatnonzero(h >= -active_tol):
                    col = np.zeros(n_x)
                    col[sl] = jh[j]
                    columns.append(col)
                    lb.append(0.0)
                    ub.append(np.inf)
                    slots.append(("ineq", i, int(j)))
        except PoisonedEvaluationError as e:
            raise PoisonedEvaluationError(str(e), region=i) from e

        fixed = region.lower == region.upper
        for j in range(region.n_xi):
            col = np.zeros(n_x)
            col[o + j] = 1.0
            if fixed[j]:
                columns.append(col)
                lb.append(-np.inf)
                ub.append(np.inf)
                slots.append(("fixed", i, j))
                continue
            if xi[j] - region.lower[j] <= active_tol:
                columns.append(-col)
                lb.append(0.0)
                ub.append(np.inf)
                slots.append(("lower", i, j))
            if region.upper[j] - xi[j] <= active_tol:
                columns.append(col)
                lb.append(0.0)
                ub.append(np.inf)
                slots.append(("upper", i, j))

    duals = ProblemDuals.zeros(problem)
    if not columns:
        return duals

    M = np.column_stack(columns)
    res = lsq_linear(M, rhs, bounds=(np.array(lb), np.array(ub)), method="bvls", tol=1e-12)
    values = res.x

    consensus = duals.consensus.copy()
    eq = [v.copy() for v in duals.eq]
    ineq = [v.copy() for v in duals.ineq]
    lower = [v.copy() for v in duals.lower]
    upper = [v.copy() for v in duals.upper]
    for (kind, i, j), val in zip(slots, values):
        if kind == "consensus":
            consensus[j] = val
        elif kind == "eq":
            eq[i][j] = val
        elif kind == "ineq":
            ineq[i][j] = val
        elif kind == "lower":
            lower[i][j] = val
        elif kind == "upper":
            upper[i][j] = val
        else:
            upper[i][j] = max(val, 0.0)
            lower[i][j] = max(-val, 0.0)
    return ProblemDuals(consensus, tuple(eq), tuple(ineq), tuple(lower), tuple(upper))


def stationarity_certificate(problem: PartitionedProblem, x: Sequence[Vector], active_tol: float = 1e-6) -> float:
    """估计乘子后的全问题平稳性残差。"""
    duals = estimate_multipliers(problem, x, active_tol)
    return kkt_residual(problem, x, duals).stationarity


# ── 合并为集中问题 ──────────────────────────────────────

def merge_regions(problem: PartitionedProblem, name: str = "centralized") -> Subproblem:
    """
    把所有区域合并为一个子问题；耦合行 Σ A_i x_i = 0 追加到等式约束末尾。
    """
    n = problem.n_x
    offsets = problem.offsets
    obj = sum_functions([(r.objective, int(o)) for r, o in zip(problem.regions, offsets)], n, name=f"{name}.f")
    eq = stack_functions(
        [(r.eq_constraints, int(o)) for r, o in zip(problem.regions, offsets)],
        n,
        linear_rows=problem.coupling_matrix() if problem.n_c else None,
        name=f"{name}.g",
    )
    ineq = stack_functions(
        [(r.ineq_constraints, int(o)) for r, o in zip(problem.regions, offsets)], n, name=f"{name}.h"
    )
    return Subproblem(
        n_xi=n,
        objective=obj,
        eq_constraints=eq,
        ineq_constraints=ineq,
        lower=np.concatenate([r.lower for r in problem.regions]),
        upper=np.concatenate([r.upper for r in problem.regions]),
        A=sp.csc_matrix((0, n)),
        scaling_diag=np.concatenate([r.scaling_diag for r in problem.regions]),
        name=name,
    )


def split_merged_duals(problem: PartitionedProblem, eq_duals: Vector, ineq_duals: Vector,
                       lower: Vector, upper: Vector) -> ProblemDuals:
    """把 merge_regions 子问题的乘子拆回 ProblemDuals。"""
    g_off = np.cumsum([0] + [r.n_g for r in problem.regions])
    h_off = np.cumsum([0] + [r.n_h for r in problem.regions])
    n_g_total = int(g_off[-1])
    return ProblemDuals(
        consensus=np.asarray(eq_duals[n_g_total:n_g_total + problem.n_c], dtype=float),
        eq=tuple(eq_duals[a:b] for a, b in zip(g_off[:-1], g_off[1:])),
        ineq=tuple(ineq_duals[a:b] for a, b in zip(h_off[:-1], h_off[1:])),
        lower=tuple(problem.split(lower)),
        upper=tuple(problem.split(upper)),
    )
