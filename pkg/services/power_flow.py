"""
极坐标潮流方程：π 型支路模型、向量化的支路端功率项（值 / 雅可比 / 加权 Hessian）、
节点导纳矩阵、支路潮流与牛顿-拉夫逊潮流。
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from services.matpower import Branch, CaseData
from services.nlp import SmoothFunction

logger = logging.getLogger("dopf.power_flow")


def branch_admittance(branch: Branch) -> Tuple[complex, complex, complex, complex]:
    """MATPOWER π 模型的 (Yff, Yft, Ytf, Ytt)。"""
    ys = 1.0 / complex(branch.r, branch.x)
    tap = branch.tap * np.exp(1j * branch.shift)
    half_b = 1j * branch.b / 2.0
    yff = (ys + half_b) / (tap * np.conj(tap))
    yft = -ys / np.conj(tap)
    ytf = -ys / tap
    ytt = ys + half_b
    return complex(yff), complex(yft), complex(ytf), complex(ytt)


def make_ybus(case: CaseData) -> sp.csr_matrix:
    """节点导纳矩阵（含母线并联元件）。"""
    index = case.bus_index
    n = len(case.buses)
    rows, cols, vals = [], [], []
    for br in case.active_branches:
        f, t = index[br.from_bus], index[br.to_bus]
        yff, yft, ytf, ytt = branch_admittance(br)
        rows += [f, f, t, t]
        cols += [f, t, f, t]
        vals += [yff, yft, ytf, ytt]
    for i, bus in enumerate(case.buses):
        rows.append(i)
        cols.append(i)
        vals.append(complex(bus.gs, bus.bs))
    return sp.coo_matrix((np.array(vals, dtype=complex), (rows, cols)), shape=(n, n)).tocsr()


def _end_flow(theta_a, vm_a, theta_b, vm_b, gii, bii, g, b):
    delta = theta_a - theta_b
    c, s = np.cos(delta), np.sin(delta)
    alpha = g * c + b * s
    beta = g * s - b * c
    p = vm_a ** 2 * gii + vm_a * vm_b * alpha
    q = -vm_a ** 2 * bii + vm_a * vm_b * beta
    return p, q, alpha, beta


def branch_flows(case: CaseData, theta: np.ndarray, vm: np.ndarray):
    """在运支路两端的 (Pf, Qf, Pt, Qt)，标幺值，顺序同 case.active_branches。"""
    index = case.bus_index
    out = np.zeros((4, len(case.active_branches)))
    for k, br in enumerate(case.active_branches):
        f, t = index[br.from_bus], index[br.to_bus]
        yff, yft, ytf, ytt = branch_admittance(br)
        pf, qf, _, _ = _end_flow(theta[f], vm[f], theta[t], vm[t], yff.real, yff.imag, yft.real, yft.imag)
        pt, qt, _, _ = _end_flow(theta[t], vm[t], theta[f], vm[f], ytt.real, ytt.imag, ytf.real, ytf.imag)
        out[:, k] = pf, qf, pt, qt
    return out[0], out[1], out[2], out[3]


def total_losses(case: CaseData, theta: np.ndarray, vm: np.ndarray) -> float:
    """支路有功损耗之和（标幺）。"""
    pf, _, pt, _ = branch_flows(case, theta, vm)
    return float(np.sum(pf + pt))


def bus_injections(case: CaseData, theta: np.ndarray, vm: np.ndarray) -> np.ndarray:
    """复功率注入 S = V·conj(Ybus·V)。"""
    v = vm * np.exp(1j * theta)
    return v * np.conj(make_ybus(case) @ v)


def scheduled_injection(case: CaseData, pg: np.ndarray, qg: np.ndarray) -> np.ndarray:
    """各母线 Σ 发电 − 负荷（复数，标幺）；pg/qg 顺序同 case.active_generators。"""
    index = case.bus_index
    s = np.array([-complex(bus.pd, bus.qd) for bus in case.buses])
    for gen, p, q in zip(case.active_generators, pg, qg):
        s[index[gen.bus]] += complex(p, q)
    return s


# ── 向量化潮流方程 ──────────────────────────────────────

@dataclass
class _EndTerm:
    p_row: int
    q_row: int
    theta_a: int
    vm_a: int
    theta_b: int
    vm_b: int
    gii: float
    bii: float
    g: float
    b: float
    sign: float


class PowerFlowEquations:
    """
    由线性项、常数、V² 并联项与支路端功率项拼出的潮流方程组 F(x)。

    每个支路端项计算 P_ab, Q_ab（a 端电压/相角与 b 端），分别以 sign 加到 p_row / q_row 行
    （行号为 -1 时忽略）。求值、雅可比与加权 Hessian 均为向量化实现。
    """

    def __init__(self, n: int, m: int):
        self.n = n
        self.m = m
        self._lin: List[Tuple[int, int, float]] = []
        self._const = np.zeros(m)
        self._shunts: List[Tuple[int, int, float]] = []
        self._ends: List[_EndTerm] = []

    def add_linear(self, row: int, col: int, value: float) -> None:
        self._lin.append((row, col, value))

    def add_constant(self, row: int, value: float) -> None:
        self._const[row] += value

    def add_shunt(self, row: int, vm_col: int, coef: float) -> None:
        if coef != 0.0:
            self._shunts.append((row, vm_col, coef))

    def add_branch_end(self, p_row: int, q_row: int, theta_a: int, vm_a: int, theta_b: int, vm_b: int,
                       y_self: complex, y_mutual: complex, sign: float = 1.0) -> None:
        self._ends.append(_EndTerm(p_row, q_row, theta_a, vm_a, theta_b, vm_b,
                                   y_self.real, y_self.imag, y_mutual.real, y_mutual.imag, sign))

    def build(self, name: str = "power_flow") -> SmoothFunction:
        n, m = self.n, self.m
        const = self._const.copy()
        if self._lin:
            r, c, v = zip(*self._lin)
            L = sp.coo_matrix((v, (r, c)), shape=(m, n)).tocsr()
        else:
            L = sp.csr_matrix((m, n))

        sh_row = np.array([s[0] for s in self._shunts], dtype=int)
        sh_col = np.array([s[1] for s in self._shunts], dtype=int)
        sh_coef = np.array([s[2] for s in self._shunts], dtype=float)

        ends = self._ends
        ta = np.array([e.theta_a for e in ends], dtype=int)
        va = np.array([e.vm_a for e in ends], dtype=int)
        tb = np.array([e.theta_b for e in ends], dtype=int)
        vb = np.array([e.vm_b for e in ends], dtype=int)
        gii = np.array([e.gii for e in ends])
        bii = np.array([e.bii for e in ends])
        g = np.array([e.g for e in ends])
        b = np.array([e.b for e in ends])
        sign = np.array([e.sign for e in ends])
        p_row = np.array([e.p_row for e in ends], dtype=int)
        q_row = np.array([e.q_row for e in ends], dtype=int)
        has_p = p_row >= 0
        has_q = q_row >= 0
        cols4 = np.stack([ta, va, tb, vb], axis=1) if ends else np.zeros((0, 4), dtype=int)

        def local(x):
            p, q, alpha, beta = _end_flow(x[ta], x[va], x[tb], x[vb], gii, bii, g, b)
            return p, q, alpha, beta, x[va], x[vb]

        def evaluate(x):
            out = L @ x + const
            if sh_row.size:
                np.add.at(out, sh_row, sh_coef * x[sh_col] ** 2)
            if ends:
                p, q, _, _, _, _ = local(x)
                np.add.at(out, p_row[has_p], (sign * p)[has_p])
                np.add.at(out, q_row[has_q], (sign * q)[has_q])
            return out

        def jacobian(x):
            rows = [L.tocoo().row]
            cols = [L.tocoo().col]
            vals = [L.tocoo().data]
            if sh_row.size:
                rows.append(sh_row)
                cols.append(sh_col)
                vals.append(2.0 * sh_coef * x[sh_col])
            if ends:
                _, _, alpha, beta, vma, vmb = local(x)
                vv = vma * vmb
                # 对 (θa, Va, θb, Vb) 的偏导
                dp = np.stack([-vv * beta, 2 * vma * gii + vmb * alpha, vv * beta, vma * alpha], axis=1)
                dq = np.stack([vv * alpha, -2 * vma * bii + vmb * beta, -vv * alpha, vma * beta], axis=1)
                for d, prow, mask in ((dp, p_row, has_p), (dq, q_row, has_q)):
                    rows.append(np.repeat(prow[mask], 4))
                    cols.append(cols4[mask].ravel())
                    vals.append((d * sign[:, None])[mask].ravel())
            return sp.coo_matrix(
                (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m, n)
            ).tocsr()

        def hessian(x, w):
            H = np.zeros((n, n))
            if sh_row.size:
                np.add.at(H, (sh_col, sh_col), 2.0 * sh_coef * w[sh_row])
            if not ends:
                return H
            _, _, alpha, beta, vma, vmb = local(x)
            vv = vma * vmb
            wp = np.where(has_p, w[np.where(has_p, p_row, 0)], 0.0) * sign
            wq = np.where(has_q, w[np.where(has_q, q_row, 0)], 0.0) * sign
            # 局部 4×4 Hessian，变量顺序 (θa, Va, θb, Vb)
            k = len(ends)
            hl = np.zeros((k, 4, 4))
            tt = -vv * (wp * alpha + wq * beta)
            hl[:, 0, 0] = tt
            hl[:, 2, 2] = tt
            hl[:, 0, 2] = hl[:, 2, 0] = -tt
            ta_va = vmb * (-wp * beta + wq * alpha)
            ta_vb = vma * (-wp * beta + wq * alpha)
            hl[:, 0, 1] = hl[:, 1, 0] = ta_va
            hl[:, 0, 3] = hl[:, 3, 0] = ta_vb
            hl[:, 2, 1] = hl[:, 1, 2] = -ta_va
            hl[:, 2, 3] = hl[:, 3, 2] = -ta_vb
            hl[:, 1, 1] = 2 * (wp * gii - wq * bii)
            hl[:, 1, 3] = hl[:, 3, 1] = wp * alpha + wq * beta
            ii = np.repeat(cols4, 4, axis=1)
            jj = np.tile(cols4, (1, 4))
            np.add.at(H, (ii.ravel(), jj.ravel()), hl.reshape(k, 16).ravel())
            return H

        return SmoothFunction(dim_in=n, dim_out=m, eval=evaluate, jacobian=jacobian, hessian_vlp=hessian, name=name)


# ── 牛顿-拉夫逊潮流 ─────────────────────────────────────

def newton_power_flow(
    case: CaseData,
    pg: Optional[np.ndarray] = None,
    qg: Optional[np.ndarray] = None,
    tol: float = 1e-10,
    max_iter: int = 30,
):
    """
    标准极坐标牛顿-拉夫逊潮流（PV 母线电压取 case 中的 Vm，参考母线角度为 0）。

    返回 (theta, vm, converged, iterations)。PV/参考母线的无功与参考母线有功由结果反算，
    不检查发电机限值。
    """
    gens = case.active_generators
    pg = np.array([gen.pg for gen in gens]) if pg is None else np.asarray(pg, dtype=float)
    qg = np.zeros(len(gens)) if qg is None else np.asarray(qg, dtype=float)
    Y = make_ybus(case).toarray()
    s_bus = scheduled_injection(case, pg, qg)

    types = np.array([bus.type for bus in case.buses])
    pv = np.flatnonzero(types == "PV")
    pq = np.flatnonzero(types == "PQ")
    pvpq = np.concatenate([pv, pq])
    theta = np.zeros(len(case.buses))
    vm = np.array([bus.vm if bus.type != "PQ" else 1.0 for bus in case.buses])

    def mismatch(v):
        mis = v * np.conj(Y @ v) - s_bus
        return np.concatenate([mis.real[pvpq], mis.imag[pq]])

    v = vm * np.exp(1j * theta)
    f = mismatch(v)
    for it in range(max_iter + 1):
        if np.max(np.abs(f), initial=0.0) <= tol:
            return np.angle(v), np.abs(v), True, it
        if it == max_iter:
            break
        i_bus = Y @ v
        diag_v = np.diag(v)
        diag_i = np.diag(i_bus)
        diag_vn = np.diag(v / np.abs(v))
        ds_dvm = diag_v @ np.conj(Y @ diag_vn) + np.conj(diag_i) @ diag_vn
        ds_dva = 1j * diag_v @ np.conj(diag_i - Y @ diag_v)
        J = np.block([
            [ds_dva[np.ix_(pvpq, pvpq)].real, ds_dvm[np.ix_(pvpq, pq)].real],
            [ds_dva[np.ix_(pq, pvpq)].imag, ds_dvm[np.ix_(pq, pq)].imag],
        ])
        dx = -np.linalg.solve(J, f)
        va = np.angle(v)
        vmag = np.abs(v)
        va[pvpq] += dx[:pvpq.size]
        vmag[pq] += dx[pvpq.size:]
        v = vmag * np.exp(1j * va)
        f = mismatch(v)

    logger.warning("Newton power flow did not converge (mismatch %.3e)", float(np.max(np.abs(f))))
    return np.angle(v), np.abs(v), False, max_iter
