"""
由 MATPOWER 算例和区域划分构建分区 AC-OPF。

耦合方式（边界母线复制 + 联络线功率传输变量）：联络线 (f, t)，f 属于区域 i、t 属于区域 j 时，
区域 i 持有 t 的 (θ, V) 副本、进入 f 的传输功率 P_in/Q_in（用于 f 的功率平衡）以及
由副本计算的 t 端功率 P_out/Q_out；区域 j 对称。一致性行：
  副本 θ/V 对其所有者（所有者 +1，副本 −1），每个 (区域, 外部母线) 一对；
  平衡中使用的传输功率对邻区计算的同一端功率（使用方 +1，计算方 −1）。
单条联络线共 8 行。

区域内变量顺序：θ(本区母线)、V(本区母线)、θ(副本)、V(副本)、Pg、Qg、P_in、Q_in、P_out、Q_out。
"""

import hashlib
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from config import DOPF_DEFAULT_PARTITION, DOPF_LSQ_TOL
from exceptions import InitializationError, InputError, LocalSolveError, ModelBuildError
from schemas.config import LocalSolverOptions
from schemas.trace import KKTResidual
from services.local_solver import AugmentedLocalProblem, LocalSolveResult, solve_constrained_least_squares, solve_local
from services.matpower import CaseData, parse_case
from services.nlp import (
    IterateState,
    PartitionedProblem,
    ProblemDuals,
    Subproblem,
    Vector,
    kkt_residual,
    merge_regions,
    quadratic_function,
    split_merged_duals,
    zero_function,
)
from services.power_flow import PowerFlowEquations, branch_admittance, branch_flows, newton_power_flow

logger = logging.getLogger("dopf.opf_model")

SIGMA_CHOICES = ("identity", "paper-footnote")
# θ 与 V 在 Σ 中的权重
ANGLE_VOLTAGE_SCALE = 100.0

_REGION_LINE = re.compile(r"^\s*region\s+(-?\d+)\s*:\s*(.*)$", re.IGNORECASE)


# ── 区域划分 ────────────────────────────────────────────

@dataclass(frozen=True)
class RegionSpec:
    """母线 → 区域映射；region_ids 保持文件中的顺序。"""
    assignment: Dict[int, int]
    region_ids: Tuple[int, ...]
    text: str = ""

    @property
    def regions(self) -> int:
        return len(self.region_ids)

    def buses_of(self, region_id: int) -> List[int]:
        return [bus for bus, rid in self.assignment.items() if rid == region_id]

    def validate(self, case: CaseData) -> None:
        """覆盖全部母线，且每个区域在在运支路上连通。"""
        known = set(case.bus_index)
        unknown = sorted(set(self.assignment) - known)
        if unknown:
            raise ModelBuildError(f"partition references unknown buses {unknown}")
        missing = sorted(known - set(self.assignment))
        if missing:
            raise ModelBuildError(f"partition does not assign buses {missing}")

        for rid in self.region_ids:
            members = self.buses_of(rid)
            if not members:
                raise ModelBuildError(f"region {rid} has no buses")
            local = {bus: i for i, bus in enumerate(members)}
            edges = [(local[br.from_bus], local[br.to_bus]) for br in case.active_branches
                     if br.from_bus in local and br.to_bus in local]
            graph = sp.coo_matrix(
                (np.ones(len(edges)), ([e[0] for e in edges], [e[1] for e in edges])),
                shape=(len(members), len(members)),
            )
            n_comp, _ = connected_components(graph, directed=False)
            if n_comp != 1:
                raise ModelBuildError(f"region {rid} is not connected ({n_comp} components)")


def _parse_bus_tokens(tokens: str, lineno: int) -> List[int]:
    buses = []
    for tok in tokens.replace(",", " ").split():
        try:
            if "-" in tok[1:]:
                lo, hi = tok.split("-", 1)
                buses.extend(range(int(lo), int(hi) + 1))
            else:
                buses.append(int(tok))
        except ValueError:
            raise InputError(f"partition line {lineno}: malformed bus id {tok!r}")
    return buses


def parse_partition(text: str) -> RegionSpec:
    """
    每行 `region <id>: <母线号...>`，`#` 之后为注释；母线号可用空格或逗号分隔，支持 `21-33` 区间。
    """
    assignment: Dict[int, int] = {}
    region_ids: List[int] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _REGION_LINE.match(line)
        if not m:
            raise InputError(f"partition line {lineno}: expected 'region <id>: <bus ids>'")
        rid = int(m.group(1))
        if rid in region_ids:
            raise InputError(f"partition line {lineno}: region {rid} defined twice")
        region_ids.append(rid)
        for bus in _parse_bus_tokens(m.group(2), lineno):
            if bus in assignment:
                raise InputError(f"partition line {lineno}: bus {bus} already assigned to region {assignment[bus]}")
            assignment[bus] = rid
    if not region_ids:
        raise InputError("partition defines no regions")
    return RegionSpec(assignment=assignment, region_ids=tuple(region_ids), text=text)


def single_region(case: CaseData) -> RegionSpec:
    return RegionSpec(assignment={bus.id: 1 for bus in case.buses}, region_ids=(1,))


def default_partition() -> RegionSpec:
    """随仓库提供的 case57 四区域划分。"""
    return parse_partition(Path(DOPF_DEFAULT_PARTITION).read_text(encoding="utf-8"))


# ── 变量布局 ────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class RegionLayout:
    region_id: int
    buses: Tuple[int, ...]
    copies: Tuple[int, ...]
    # case.active_generators 中的位置
    generators: Tuple[int, ...]
    # case.active_branches 中的联络线位置
    ties: Tuple[int, ...]
    _index: Dict[Tuple[str, int], int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        nb, nc, ng, nt = len(self.buses), len(self.copies), len(self.generators), len(self.ties)
        index = {}
        off = 0
        for kind, keys in (("theta", self.buses), ("vm", self.buses), ("theta", self.copies),
                           ("vm", self.copies), ("pg", self.generators), ("qg", self.generators),
                           ("p_in", self.ties), ("q_in", self.ties), ("p_out", self.ties), ("q_out", self.ties)):
            for key in keys:
                index[(kind, key)] = off
                off += 1
        assert off == 2 * nb + 2 * nc + 2 * ng + 4 * nt
        object.__setattr__(self, "_index", index)

    @property
    def n_xi(self) -> int:
        return len(self._index)

    def theta(self, bus: int) -> int:
        return self._index[("theta", bus)]

    def vm(self, bus: int) -> int:
        return self._index[("vm", bus)]

    def pg(self, gen: int) -> int:
        return self._index[("pg", gen)]

    def qg(self, gen: int) -> int:
        return self._index[("qg", gen)]

    def p_in(self, tie: int) -> int:
        return self._index[("p_in", tie)]

    def q_in(self, tie: int) -> int:
        return self._index[("q_in", tie)]

    def p_out(self, tie: int) -> int:
        return self._index[("p_out", tie)]

    def q_out(self, tie: int) -> int:
        return self._index[("q_out", tie)]

    @property
    def labels(self) -> List[str]:
        """按变量顺序的可读标签。"""
        out = [""] * self.n_xi
        owned = set(self.buses)
        for (kind, key), idx in self._index.items():
            if kind in ("theta", "vm"):
                out[idx] = f"{kind}[{key}]" if key in owned else f"{kind}_copy[{key}]"
            elif kind in ("pg", "qg"):
                out[idx] = f"{kind}[gen {key}]"
            else:
                out[idx] = f"{kind}[branch {key}]"
        return out

    def is_angle_or_voltage(self) -> np.ndarray:
        mask = np.zeros(self.n_xi, dtype=bool)
        for (kind, _), idx in self._index.items():
            mask[idx] = kind in ("theta", "vm")
        return mask


@dataclass(frozen=True, eq=False)
class OpfVariableLayout:
    regions: Tuple[RegionLayout, ...]
    # 每条一致性行的说明
    consensus_labels: Tuple[str, ...]

    @property
    def n_c(self) -> int:
        return len(self.consensus_labels)


# ── 模型构建 ────────────────────────────────────────────

def _sigma_diag(layout: RegionLayout, sigma: str) -> np.ndarray:
    if sigma == "identity":
        return np.ones(layout.n_xi)
    return np.where(layout.is_angle_or_voltage(), ANGLE_VOLTAGE_SCALE, 1.0)


def _build_region(case: CaseData, layout: RegionLayout, A: sp.csc_matrix, sigma: str) -> Subproblem:
    index = case.bus_index
    branches = case.active_branches
    gens = case.active_generators
    owned = set(layout.buses)
    nb, nt = len(layout.buses), len(layout.ties)
    n = layout.n_xi
    m = 2 * nb + 2 * nt
    row_p = {bus: i for i, bus in enumerate(layout.buses)}
    row_q = {bus: nb + i for i, bus in enumerate(layout.buses)}

    pf = PowerFlowEquations(n, m)
    for bus_id in layout.buses:
        bus = case.buses[index[bus_id]]
        pf.add_constant(row_p[bus_id], bus.pd)
        pf.add_constant(row_q[bus_id], bus.qd)
        pf.add_shunt(row_p[bus_id], layout.vm(bus_id), bus.gs)
        pf.add_shunt(row_q[bus_id], layout.vm(bus_id), -bus.bs)
    for g in layout.generators:
        pf.add_linear(row_p[gens[g].bus], layout.pg(g), -1.0)
        pf.add_linear(row_q[gens[g].bus], layout.qg(g), -1.0)

    for br in branches:
        if br.from_bus in owned and br.to_bus in owned:
            f, t = br.from_bus, br.to_bus
            yff, yft, ytf, ytt = branch_admittance(br)
            pf.add_branch_end(row_p[f], row_q[f], layout.theta(f), layout.vm(f),
                              layout.theta(t), layout.vm(t), yff, yft)
            pf.add_branch_end(row_p[t], row_q[t], layout.theta(t), layout.vm(t),
                              layout.theta(f), layout.vm(f), ytt, ytf)

    for j, k in enumerate(layout.ties):
        br = branches[k]
        yff, yft, ytf, ytt = branch_admittance(br)
        if br.from_bus in owned:
            own, far, y_far_self, y_far_mutual = br.from_bus, br.to_bus, ytt, ytf
        else:
            own, far, y_far_self, y_far_mutual = br.to_bus, br.from_bus, yff, yft
        pf.add_linear(row_p[own], layout.p_in(k), 1.0)
        pf.add_linear(row_q[own], layout.q_in(k), 1.0)
        # 远端功率定义: P_out − P_far(θ_far_copy, V_far_copy, θ_own, V_own) = 0
        r_p, r_q = 2 * nb + j, 2 * nb + nt + j
        pf.add_linear(r_p, layout.p_out(k), 1.0)
        pf.add_linear(r_q, layout.q_out(k), 1.0)
        pf.add_branch_end(r_p, r_q, layout.theta(far), layout.vm(far), layout.theta(own), layout.vm(own),
                          y_far_self, y_far_mutual, sign=-1.0)

    lower = np.full(n, -np.inf)
    upper = np.full(n, np.inf)
    for bus_id in layout.buses + layout.copies:
        bus = case.buses[index[bus_id]]
        lower[layout.vm(bus_id)] = bus.vmin
        upper[layout.vm(bus_id)] = bus.vmax
        if bus.type == "ref" and bus_id in owned:
            lower[layout.theta(bus_id)] = upper[layout.theta(bus_id)] = 0.0

    Q = np.zeros((n, n))
    c = np.zeros(n)
    const = 0.0
    for g in layout.generators:
        gen = gens[g]
        lower[layout.pg(g)], upper[layout.pg(g)] = gen.pmin, gen.pmax
        lower[layout.qg(g)], upper[layout.qg(g)] = gen.qmin, gen.qmax
        c2, c1, c0 = gen.cost_pu(case.base_mva)
        Q[layout.pg(g), layout.pg(g)] = 2.0 * c2
        c[layout.pg(g)] = c1
        const += c0

    name = f"region {layout.region_id}"
    return Subproblem(
        n_xi=n,
        objective=quadratic_function(Q, c, const, name=f"{name}.cost"),
        eq_constraints=pf.build(name=f"{name}.power_flow"),
        ineq_constraints=zero_function(n, 0, name=f"{name}.h"),
        lower=lower,
        upper=upper,
        A=A,
        scaling_diag=_sigma_diag(layout, sigma),
        name=name,
    )


def build_partitioned_opf(
    case: CaseData,
    spec: RegionSpec,
    sigma: str = "paper-footnote",
) -> Tuple[PartitionedProblem, OpfVariableLayout]:
    """按区域划分构建 PartitionedProblem 与变量布局；sigma 选择 Σ 对角（identity 或 θ/V 取 100）。"""
    if sigma not in SIGMA_CHOICES:
        raise InputError(f"sigma must be one of {SIGMA_CHOICES}")
    spec.validate(case)
    index = case.bus_index
    branches = case.active_branches
    region_of = spec.assignment
    pos = {rid: p for p, rid in enumerate(spec.region_ids)}

    owned: Dict[int, List[int]] = {rid: [] for rid in spec.region_ids}
    for bus in case.buses:
        owned[region_of[bus.id]].append(bus.id)
    gens: Dict[int, List[int]] = {rid: [] for rid in spec.region_ids}
    for g, gen in enumerate(case.active_generators):
        if gen.bus not in region_of:
            raise ModelBuildError(f"generator {g} sits on unassigned bus {gen.bus}")
        gens[region_of[gen.bus]].append(g)
    ties: Dict[int, List[int]] = {rid: [] for rid in spec.region_ids}
    copies: Dict[int, set] = {rid: set() for rid in spec.region_ids}
    tie_lines = []
    for k, br in enumerate(branches):
        ri, rj = region_of[br.from_bus], region_of[br.to_bus]
        if ri == rj:
            continue
        tie_lines.append(k)
        ties[ri].append(k)
        ties[rj].append(k)
        copies[ri].add(br.to_bus)
        copies[rj].add(br.from_bus)

    layouts = tuple(
        RegionLayout(
            region_id=rid,
            buses=tuple(owned[rid]),
            copies=tuple(sorted(copies[rid], key=index.get)),
            generators=tuple(gens[rid]),
            ties=tuple(ties[rid]),
        )
        for rid in spec.region_ids
    )

    # 一致性行: (区域位置, 列, 系数)
    entries: List[List[Tuple[int, int, float]]] = []
    labels: List[str] = []
    rowed_copies = set()
    for k in tie_lines:
        br = branches[k]
        ri, rj = region_of[br.from_bus], region_of[br.to_bus]
        li, lj = layouts[pos[ri]], layouts[pos[rj]]
        for owner, bus, copier in ((li, br.from_bus, lj), (lj, br.to_bus, li)):
            if (copier.region_id, bus) in rowed_copies:
                continue
            rowed_copies.add((copier.region_id, bus))
            for kind in ("theta", "vm"):
                col_owner = owner.theta(bus) if kind == "theta" else owner.vm(bus)
                col_copy = copier.theta(bus) if kind == "theta" else copier.vm(bus)
                entries.append([(pos[owner.region_id], col_owner, 1.0), (pos[copier.region_id], col_copy, -1.0)])
                labels.append(f"{kind}[{bus}] region {owner.region_id} = copy in region {copier.region_id}")
        for user, computer, end in ((li, lj, br.from_bus), (lj, li, br.to_bus)):
            entries.append([(pos[user.region_id], user.p_in(k), 1.0), (pos[computer.region_id], computer.p_out(k), -1.0)])
            labels.append(f"P branch {k} at bus {end}: region {user.region_id} = region {computer.region_id}")
            entries.append([(pos[user.region_id], user.q_in(k), 1.0), (pos[computer.region_id], computer.q_out(k), -1.0)])
            labels.append(f"Q branch {k} at bus {end}: region {user.region_id} = region {computer.region_id}")

    n_c = len(entries)
    A_parts = []
    for p, layout in enumerate(layouts):
        rows, cols, vals = [], [], []
        for r, entry in enumerate(entries):
            for rp, col, val in entry:
                if rp == p:
                    rows.append(r)
                    cols.append(col)
                    vals.append(val)
        A_parts.append(sp.csc_matrix((vals, (rows, cols)), shape=(n_c, layout.n_xi)))

    regions = tuple(_build_region(case, layout, A, sigma) for layout, A in zip(layouts, A_parts))
    problem = PartitionedProblem(regions=regions, n_c=n_c)
    logger.info("[%s] built %d regions, %d tie lines, %d consensus rows, n_x=%d",
                case.name or "case", len(regions), len(tie_lines), n_c, problem.n_x)
    return problem, OpfVariableLayout(regions=layouts, consensus_labels=tuple(labels))


# ── 模型包装 ────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class OpfModel:
    """算例、划分、分区问题与布局的组合；fingerprint 由算例与划分文本的 SHA-256 给出。"""
    case: CaseData
    spec: RegionSpec
    problem: PartitionedProblem
    layout: OpfVariableLayout
    fingerprint: str
    sigma: str = "paper-footnote"

    def scatter(self, theta: Vector, vm: Vector, pg: Vector, qg: Vector) -> List[Vector]:
        """
        把全网点 (θ, V, Pg, Qg) 分发到各区域；传输变量取该点上的支路端功率，因此副本与传输量完全一致。
        """
        index = self.case.bus_index
        branches = self.case.active_branches
        pf, qf, pt, qt = branch_flows(self.case, theta, vm)
        parts = []
        for layout in self.layout.regions:
            x = np.zeros(layout.n_xi)
            for bus in layout.buses + layout.copies:
                x[layout.theta(bus)] = theta[index[bus]]
                x[layout.vm(bus)] = vm[index[bus]]
            for g in layout.generators:
                x[layout.pg(g)] = pg[g]
                x[layout.qg(g)] = qg[g]
            owned = set(layout.buses)
            for k in layout.ties:
                if branches[k].from_bus in owned:
                    x[layout.p_in(k)], x[layout.q_in(k)] = pf[k], qf[k]
                    x[layout.p_out(k)], x[layout.q_out(k)] = pt[k], qt[k]
                else:
                    x[layout.p_in(k)], x[layout.q_in(k)] = pt[k], qt[k]
                    x[layout.p_out(k)], x[layout.q_out(k)] = pf[k], qf[k]
            parts.append(x)
        return parts

    def gather(self, parts: Sequence[Vector]) -> Tuple[Vector, Vector, Vector, Vector]:
        """从各区域取本区母线和发电机的值，拼回全网 (θ, V, Pg, Qg)。"""
        self.problem.check_parts(parts)
        index = self.case.bus_index
        n_b = len(self.case.buses)
        n_g = len(self.case.active_generators)
        theta, vm, pg, qg = np.zeros(n_b), np.zeros(n_b), np.zeros(n_g), np.zeros(n_g)
        for layout, x in zip(self.layout.regions, parts):
            for bus in layout.buses:
                theta[index[bus]] = x[layout.theta(bus)]
                vm[index[bus]] = x[layout.vm(bus)]
            for g in layout.generators:
                pg[g] = x[layout.pg(g)]
                qg[g] = x[layout.qg(g)]
        return theta, vm, pg, qg

    def flat_start(self, engine: str = "admm") -> IterateState:
        """V = 1、θ = 0、Pg/Qg 取 0 投影到限值内；λ⁰ = 0。"""
        theta, vm, pg, qg = self.flat_point()
        return IterateState.initial(self.problem, self.scatter(theta, vm, pg, qg), engine)

    def flat_point(self):
        gens = self.case.active_generators
        n_b = len(self.case.buses)
        vm = np.clip(np.ones(n_b), [b.vmin for b in self.case.buses], [b.vmax for b in self.case.buses])
        pg = np.clip(np.zeros(len(gens)), [g.pmin for g in gens], [g.pmax for g in gens])
        qg = np.clip(np.zeros(len(gens)), [g.qmin for g in gens], [g.qmax for g in gens])
        return np.zeros(n_b), vm, pg, qg


def build_opf_model(case_text: str, partition_text: Optional[str] = None, sigma: str = "paper-footnote",
                    name: str = "") -> OpfModel:
    case = parse_case(case_text, name=name)
    spec = parse_partition(partition_text) if partition_text is not None else single_region(case)
    problem, layout = build_partitioned_opf(case, spec, sigma)
    digest = hashlib.sha256()
    digest.update(case_text.encode())
    digest.update(b"\0")
    digest.update((partition_text or "").encode())
    return OpfModel(case=case, spec=spec, problem=problem, layout=layout,
                    fingerprint=digest.hexdigest(), sigma=sigma)


def load_opf_model(case_path, partition_path=None, sigma: str = "paper-footnote") -> OpfModel:
    case_path = Path(case_path)
    partition_text = Path(partition_path).read_text(encoding="utf-8") if partition_path is not None else None
    return build_opf_model(case_path.read_text(encoding="utf-8"), partition_text, sigma, name=case_path.stem)


# ── 可行初始化 ──────────────────────────────────────────

def feasible_init(model: OpfModel, engine: str = "admm", tol: float = DOPF_LSQ_TOL) -> IterateState:
    """
    在不分区的全网上求解带盒约束的潮流最小二乘（起点为牛顿潮流解），再分发到各区域，
    副本与传输量完全一致；λ⁰ = 0。未收敛时抛出 InitializationError（携带最优残差）。
    """
    case = model.case
    network, net_layout = build_partitioned_opf(case, single_region(case), model.sigma)
    region = network.regions[0]
    layout = net_layout.regions[0]
    gens = case.active_generators

    theta, vm, converged, _ = newton_power_flow(case)
    if not converged:
        theta, vm, _, _ = model.flat_point()
    pg = np.array([gen.pg for gen in gens])
    qg = np.array([gen.qg for gen in gens])

    start = np.zeros(layout.n_xi)
    index = case.bus_index
    for bus in layout.buses:
        start[layout.theta(bus)] = theta[index[bus]]
        start[layout.vm(bus)] = vm[index[bus]]
    for g in layout.generators:
        start[layout.pg(g)] = pg[g]
        start[layout.qg(g)] = qg[g]

    result = solve_constrained_least_squares(region.eq_constraints, (region.lower, region.upper), start, tol=tol)
    if not result.converged:
        raise InitializationError("feasible initialization did not converge", best_residual=result.residual_norm)
    logger.info("[%s] feasible initialization residual %.3e after %d evaluations",
                case.name or "case", result.residual_norm, result.nfev)

    x = result.x
    theta = np.array([x[layout.theta(bus.id)] for bus in case.buses])
    vm = np.array([x[layout.vm(bus.id)] for bus in case.buses])
    pg = np.array([x[layout.pg(g)] for g in range(len(gens))])
    qg = np.array([x[layout.qg(g)] for g in range(len(gens))])
    return IterateState.initial(model.problem, model.scatter(theta, vm, pg, qg), engine)


# ── 集中式参考解 ────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class CentralizedSolution:
    x: Vector
    objective: float
    kkt: KKTResidual
    duals: ProblemDuals
    result: LocalSolveResult


def default_start(lower: Vector, upper: Vector) -> Vector:
    """两侧有限取中点，单侧有限取该边界，否则为 0。"""
    lo_f, up_f = np.isfinite(lower), np.isfinite(upper)
    return np.where(lo_f & up_f, 0.5 * (np.where(lo_f, lower, 0) + np.where(up_f, upper, 0)),
                    np.where(lo_f, lower, np.where(up_f, upper, 0.0)))


def centralized_solve(
    problem: PartitionedProblem,
    start: Optional[Vector] = None,
    options: Optional[LocalSolverOptions] = None,
) -> CentralizedSolution:
    """合并全部区域（一致性行作为线性等式）后用局部 NLP 求解器求解，返回 x*、f* 与 KKT 残差。"""
    merged = merge_regions(problem)
    x0 = default_start(merged.lower, merged.upper) if start is None else np.asarray(start, dtype=float)
    aug = AugmentedLocalProblem(
        base=merged,
        linear_term=np.zeros(merged.n_xi),
        prox_center=x0,
        prox_weight=0.0,
        prox_metric="scaled_identity",
    )
    result = solve_local(aug, warm_start=x0, options=options)
    if not result.optimal:
        raise LocalSolveError(f"centralized solve ended with status {result.status}", status=result.status)

    duals = split_merged_duals(problem, result.eq_duals, result.ineq_duals, result.lower_duals, result.upper_duals)
    parts = problem.split(result.x_opt)
    kkt = kkt_residual(problem, parts, duals)
    objective = float(sum(r.objective.scalar(x) for r, x in zip(problem.regions, parts)))
    logger.info("centralized solve: f*=%.10g in %d iterations (stationarity %.2e, primal %.2e)",
                objective, result.iterations, kkt.stationarity, kkt.primal)
    return CentralizedSolution(x=result.x_opt, objective=objective, kkt=kkt, duals=duals, result=result)


def solve_reference(model: OpfModel, options: Optional[LocalSolverOptions] = None) -> CentralizedSolution:
    """从全网平启动点（Pg/Qg 取限值中点）求解 OPF 参考解 x*。"""
    theta, vm, _, _ = model.flat_point()
    gens = model.case.active_generators
    pg = np.array([0.5 * (g.pmin + g.pmax) for g in gens])
    qg = np.array([0.5 * (g.qmin + g.qmax) for g in gens])
    start = model.problem.concat(model.scatter(theta, vm, pg, qg))
    return centralized_solve(model.problem, start=start, options=options)
