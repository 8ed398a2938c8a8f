"""
对称不定 KKT 系统：LDLᵀ 分解、惯性计算与惯性修正。
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.linalg

logger = logging.getLogger("dopf.kkt")


class SingularSystemError(Exception):
    """分解后的 KKT 矩阵奇异，或惯性修正次数耗尽。"""


@dataclass(frozen=True, eq=False)
class LdlFactor:
    """scipy.linalg.ldl 的分解结果 A = L D Lᵀ（L[perm] 为单位下三角）。"""
    lu: np.ndarray
    d: np.ndarray
    perm: np.ndarray
    inertia: Tuple[int, int, int]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self.inertia[2]:
            raise SingularSystemError(f"matrix has {self.inertia[2]} zero pivots")
        lower = self.lu[self.perm]
        y = scipy.linalg.solve_triangular(lower, rhs[self.perm], lower=True, unit_diagonal=True)
        w = _solve_block_diagonal(self.d, y)
        xp = scipy.linalg.solve_triangular(lower.T, w, lower=False, unit_diagonal=True)
        x = np.empty_like(xp)
        x[self.perm] = xp
        return x


def _blocks(d: np.ndarray):
    """遍历 D 的 1×1 / 2×2 对角块，产出 (起始下标, 块大小)。"""
    n = d.shape[0]
    i = 0
    while i < n:
        if i + 1 < n and d[i + 1, i] != 0.0:
            yield i, 2
            i += 2
        else:
            yield i, 1
            i += 1


def _solve_block_diagonal(d: np.ndarray, y: np.ndarray) -> np.ndarray:
    out = np.empty_like(y)
    for i, size in _blocks(d):
        if size == 1:
            out[i] = y[i] / d[i, i]
        else:
            out[i:i + 2] = np.linalg.solve(d[i:i + 2, i:i + 2], y[i:i + 2])
    return out


def inertia_of(d: np.ndarray, zero_tol: Optional[float] = None) -> Tuple[int, int, int]:
    """块对角 D 的惯性 (正, 负, 零)。"""
    if d.shape[0] == 0:
        return 0, 0, 0
    scale = max(1.0, float(np.max(np.abs(d))))
    tol = zero_tol if zero_tol is not None else 1e-13 * scale
    pos = neg = zero = 0
    for i, size in _blocks(d):
        eigs = [d[i, i]] if size == 1 else np.linalg.eigvalsh(d[i:i + 2, i:i + 2])
        for e in eigs:
            if abs(e) <= tol:
                zero += 1
            elif e > 0:
                pos += 1
            else:
                neg += 1
    return pos, neg, zero


def factorize(K: np.ndarray) -> LdlFactor:
    """对称矩阵的 Bunch–Kaufman 分解。"""
    K = np.asarray(K, dtype=float)
    if K.shape[0] == 0:
        return LdlFactor(np.zeros((0, 0)), np.zeros((0, 0)), np.zeros(0, dtype=int), (0, 0, 0))
    lu, d, perm = scipy.linalg.ldl(K, lower=True, hermitian=True)
    return LdlFactor(lu=lu, d=d, perm=perm, inertia=inertia_of(d))


def solve_symmetric(K: np.ndarray, rhs: np.ndarray, expected_inertia: Optional[Tuple[int, int]] = None) -> np.ndarray:
    """
    直接求解对称线性系统；奇异或惯性不符时抛出 SingularSystemError。
    """
    factor = factorize(K)
    if factor.inertia[2]:
        raise SingularSystemError(f"KKT matrix is singular ({factor.inertia[2]} zero pivots)")
    if expected_inertia is not None and factor.inertia[:2] != tuple(expected_inertia):
        raise SingularSystemError(
            f"KKT inertia {factor.inertia[:2]} differs from expected {tuple(expected_inertia)}"
        )
    return factor.solve(np.asarray(rhs, dtype=float))


def assemble_kkt(H: np.ndarray, J: np.ndarray, D: np.ndarray) -> np.ndarray:
    """[[H, Jᵀ], [J, −diag(D)]]。"""
    n = H.shape[0]
    m = J.shape[0]
    K = np.zeros((n + m, n + m))
    K[:n, :n] = H
    K[n:, :n] = J
    K[:n, n:] = J.T
    K[n:, n:] = -np.diag(D)
    return K


# ── 惯性修正 ──────────────────────────────────────
# δw 的上下限与缩放系数
DELTA_W_MIN = 1e-20
DELTA_W_DECREASE = 1.0 / 3.0
DELTA_W_GROWTH_FIRST = 100.0
DELTA_W_GROWTH = 8.0
DELTA_W_MAX = 1e40


class InertiaCorrector:
    """
    惯性修正的 KKT 求解器，保存上一次成功的 δw 供下一次迭代使用。

    目标惯性为 (n, m, 0)。若零主元出现，则在等式块加入 δc = 1e-8·μ^¼。
    若正惯性不足，δw 按以下规则增加：
      - 尚无成功修正（last_delta_w == 0）：从 delta_w_init 起步，每次失败 ×100；
      - 已有成功修正：从 max(1e-20, last_delta_w/3) 起步，每次失败 ×8。
    last_delta_w 只在修正成功后更新，所以第一次修正的整个增长过程都按 ×100。
    """

    def __init__(self, max_corrections: int = 40, delta_w_init: float = 1e-4):
        self.max_corrections = max_corrections
        self.delta_w_init = delta_w_init
        self.last_delta_w = 0.0

    def next_delta_w(self, delta_w: float) -> float:
        """惯性不正确时的下一个 δw。"""
        if delta_w == 0.0:
            if self.last_delta_w == 0.0:
                return self.delta_w_init
            return max(DELTA_W_MIN, DELTA_W_DECREASE * self.last_delta_w)
        if self.last_delta_w == 0.0:
            return DELTA_W_GROWTH_FIRST * delta_w
        return DELTA_W_GROWTH * delta_w

    def solve(
        self,
        H: np.ndarray,
        J: np.ndarray,
        D: np.ndarray,
        eq_mask: np.ndarray,
        rhs: np.ndarray,
        mu: float,
    ) -> Tuple[np.ndarray, float]:
        """
        求解 [[H+δw I, Jᵀ], [J, −diag(D)−δc·eq_mask]] sol = rhs，返回 (sol, δw)。
        """
        n = H.shape[0]
        m = J.shape[0]
        delta_w = 0.0
        delta_c = 0.0
        eye = np.eye(n)
        eq_mask = np.asarray(eq_mask, dtype=float)

        for attempt in range(self.max_corrections + 1):
            K = assemble_kkt(H + delta_w * eye, J, D + delta_c * eq_mask)
            factor = factorize(K)
            pos, neg, zero = factor.inertia
            if pos == n and neg == m and zero == 0:
                if delta_w > 0:
                    self.last_delta_w = delta_w
                return factor.solve(rhs), delta_w

            if zero and delta_c == 0.0 and np.any(eq_mask):
                delta_c = 1e-8 * mu ** 0.25
                continue
            delta_w = self.next_delta_w(delta_w)
            if delta_w > DELTA_W_MAX:
                break

        raise SingularSystemError(
            f"inertia correction failed after {self.max_corrections} attempts (delta_w={delta_w:.2e})"
        )
