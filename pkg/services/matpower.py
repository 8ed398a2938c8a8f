"""
MATPOWER .m 算例解析，所有电气量换算为 base_mva 上的标幺值。

支持的子集：mpc.baseMVA、mpc.bus、mpc.gen、mpc.branch、mpc.gencost（多项式成本，次数 <= 2）。
列顺序遵循 MATPOWER 手册（bus 13 列、gen 21 列、branch 13 列，允许省略末尾的结果列）。
"""

import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from exceptions import CaseParseError, UnsupportedFeatureError

logger = logging.getLogger("dopf.matpower")

BUS_PQ, BUS_PV, BUS_REF, BUS_ISOLATED = 1, 2, 3, 4
_BUS_TYPES = {BUS_PQ: "PQ", BUS_PV: "PV", BUS_REF: "ref"}

# 每个矩阵的最少列数（之后的列为潮流/OPF 结果，忽略）
_MIN_COLUMNS = {"bus": 13, "gen": 10, "branch": 11, "gencost": 4}

_ASSIGN = re.compile(r"^\s*mpc\.(\w+)\s*=\s*(.*)$")


@dataclass(frozen=True)
class Bus:
    id: int
    type: str
    pd: float
    qd: float
    gs: float
    bs: float
    vmin: float
    vmax: float
    vm: float = 1.0
    va: float = 0.0


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b: float
    tap: float
    shift: float
    status: int


@dataclass(frozen=True)
class Generator:
    bus: int
    pg: float
    qg: float
    pmin: float
    pmax: float
    qmin: float
    qmax: float
    status: int
    # 多项式成本系数（高次在前），单位 $/h，自变量为 MW
    cost: Tuple[float, ...] = ()

    def cost_pu(self, base_mva: float) -> Tuple[float, float, float]:
        """换算为以标幺 Pg 为自变量的 (c2, c1, c0)。"""
        coeffs = (0.0,) * (3 - len(self.cost)) + tuple(self.cost)
        c2, c1, c0 = coeffs
        return c2 * base_mva ** 2, c1 * base_mva, c0


@dataclass(frozen=True)
class CaseData:
    base_mva: float
    buses: Tuple[Bus, ...]
    branches: Tuple[Branch, ...]
    generators: Tuple[Generator, ...]
    name: str = ""

    @property
    def bus_index(self) -> Dict[int, int]:
        return {bus.id: i for i, bus in enumerate(self.buses)}

    @property
    def ref_bus(self) -> int:
        return next(bus.id for bus in self.buses if bus.type == "ref")

    @property
    def active_branches(self) -> Tuple[Branch, ...]:
        return tuple(br for br in self.branches if br.status)

    @property
    def active_generators(self) -> Tuple[Generator, ...]:
        return tuple(gen for gen in self.generators if gen.status)


# ── 文本扫描 ────────────────────────────────────────────

def _strip_comment(line: str) -> str:
    idx = line.find("%")
    return line if idx < 0 else line[:idx]


def _read_matrix(lines: List[str], start: int, first: str, name: str) -> Tuple[List[Tuple[int, List[float]]], int]:
    """
    从 `mpc.<name> = [` 所在行开始读取矩阵，返回 ([(行号, 数值行)], 结束行下标)。
    """
    rows: List[Tuple[int, List[float]]] = []
    text = first
    if "[" not in text:
        raise CaseParseError(f"mpc.{name}: expected '['", line=start + 1)
    text = text.split("[", 1)[1]
    idx = start
    while True:
        done = "]" in text
        if done:
            text = text.split("]", 1)[0]
        for chunk in text.split(";"):
            tokens = chunk.replace(",", " ").split()
            if not tokens:
                continue
            try:
                rows.append((idx + 1, [float(tok) for tok in tokens]))
            except ValueError:
                raise CaseParseError(f"mpc.{name}: malformed row {chunk.strip()!r}", line=idx + 1)
        if done:
            return rows, idx
        idx += 1
        if idx >= len(lines):
            raise CaseParseError(f"mpc.{name}: missing closing ']'", line=start + 1)
        text = _strip_comment(lines[idx])


def _check_widths(rows, name: str) -> None:
    minimum = _MIN_COLUMNS[name]
    width = None
    for lineno, row in rows:
        if len(row) < minimum:
            raise CaseParseError(f"mpc.{name} row has {len(row)} columns, expected at least {minimum}", line=lineno)
        if name != "gencost":
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise CaseParseError(f"mpc.{name} row has {len(row)} columns, previous rows have {width}",
                                     line=lineno)


# ── 解析入口 ────────────────────────────────────────────

def parse_case(text: str, name: str = "") -> CaseData:
    """解析 MATPOWER 算例文本；畸形行报告行号，分段线性成本抛出 UnsupportedFeatureError。"""
    lines = text.splitlines()
    base_mva: Optional[float] = None
    matrices: Dict[str, List[Tuple[int, List[float]]]] = {}

    i = 0
    while i < len(lines):
        line = _strip_comment(lines[i])
        m = _ASSIGN.match(line)
        if m:
            key, rhs = m.group(1), m.group(2)
            if key == "baseMVA":
                try:
                    base_mva = float(rhs.strip().rstrip(";").strip())
                except ValueError:
                    raise CaseParseError(f"malformed baseMVA {rhs.strip()!r}", line=i + 1)
            elif key in _MIN_COLUMNS:
                rows, i = _read_matrix(lines, i, rhs, key)
                _check_widths(rows, key)
                matrices[key] = rows
        i += 1

    if base_mva is None or not base_mva > 0:
        raise CaseParseError("missing or non-positive mpc.baseMVA")
    for key in ("bus", "gen", "branch", "gencost"):
        if key not in matrices:
            raise CaseParseError(f"missing mpc.{key} matrix")

    buses = _parse_buses(matrices["bus"], base_mva)
    known = {bus.id for bus in buses}
    branches = _parse_branches(matrices["branch"], known)
    generators = _parse_generators(matrices["gen"], matrices["gencost"], base_mva, known)

    case = CaseData(base_mva=base_mva, buses=buses, branches=branches, generators=generators, name=name)
    _check_connected(case)
    logger.info("[%s] parsed %d buses, %d branches, %d generators (baseMVA=%g)",
                name or "case", len(buses), len(branches), len(generators), base_mva)
    return case


def load_case(path) -> CaseData:
    path = Path(path)
    return parse_case(path.read_text(encoding="utf-8"), name=path.stem)


def _parse_buses(rows, base_mva: float) -> Tuple[Bus, ...]:
    buses = []
    seen = set()
    n_ref = 0
    for lineno, row in rows:
        bus_id = int(row[0])
        if bus_id in seen:
            raise CaseParseError(f"duplicate bus id {bus_id}", line=lineno)
        seen.add(bus_id)
        btype = int(row[1])
        if btype == BUS_ISOLATED:
            raise UnsupportedFeatureError(f"line {lineno}: isolated bus {bus_id} (type 4) is not supported")
        if btype not in _BUS_TYPES:
            raise CaseParseError(f"bus {bus_id} has unknown type {btype}", line=lineno)
        n_ref += btype == BUS_REF
        vmax, vmin = row[11], row[12]
        if vmin > vmax:
            raise CaseParseError(f"bus {bus_id} has Vmin > Vmax", line=lineno)
        buses.append(Bus(
            id=bus_id,
            type=_BUS_TYPES[btype],
            pd=row[2] / base_mva,
            qd=row[3] / base_mva,
            gs=row[4] / base_mva,
            bs=row[5] / base_mva,
            vmin=vmin,
            vmax=vmax,
            vm=row[7],
            va=np.deg2rad(row[8]),
        ))
    if n_ref != 1:
        raise CaseParseError(f"expected exactly one reference bus, found {n_ref}")
    return tuple(buses)


def _parse_branches(rows, known) -> Tuple[Branch, ...]:
    branches = []
    for lineno, row in rows:
        f, t = int(row[0]), int(row[1])
        for bus in (f, t):
            if bus not in known:
                raise CaseParseError(f"branch {f}-{t} references unknown bus {bus}", line=lineno)
        if row[2] == 0.0 and row[3] == 0.0:
            raise CaseParseError(f"branch {f}-{t} has zero impedance", line=lineno)
        branches.append(Branch(
            from_bus=f,
            to_bus=t,
            r=row[2],
            x=row[3],
            b=row[4],
            tap=row[8] if row[8] != 0.0 else 1.0,
            shift=np.deg2rad(row[9]),
            status=int(row[10]),
        ))
    return tuple(branches)


def _parse_generators(rows, cost_rows, base_mva: float, known) -> Tuple[Generator, ...]:
    if len(cost_rows) == 2 * len(rows):
        raise UnsupportedFeatureError("reactive power costs (2×ng gencost rows) are not supported")
    if len(cost_rows) != len(rows):
        lineno = cost_rows[-1][0] if cost_rows else None
        raise CaseParseError(f"mpc.gencost has {len(cost_rows)} rows but mpc.gen has {len(rows)}", line=lineno)

    generators = []
    for (lineno, row), (cost_line, cost) in zip(rows, cost_rows):
        bus = int(row[0])
        if bus not in known:
            raise CaseParseError(f"generator references unknown bus {bus}", line=lineno)
        model, ncost = int(cost[0]), int(cost[3])
        if model == 1:
            raise UnsupportedFeatureError(f"line {cost_line}: piecewise-linear generator costs are not supported")
        if model != 2:
            raise CaseParseError(f"unknown cost model {model}", line=cost_line)
        if ncost > 3:
            raise UnsupportedFeatureError(f"line {cost_line}: polynomial cost of degree {ncost - 1} (max 2)")
        if len(cost) < 4 + ncost:
            raise CaseParseError(f"gencost row declares {ncost} coefficients but has {len(cost) - 4}",
                                 line=cost_line)
        generators.append(Generator(
            bus=bus,
            pg=row[1] / base_mva,
            qg=row[2] / base_mva,
            qmax=row[3] / base_mva,
            qmin=row[4] / base_mva,
            status=int(row[7] > 0),
            pmax=row[8] / base_mva,
            pmin=row[9] / base_mva,
            cost=tuple(cost[4:4 + ncost]),
        ))
    return tuple(generators)


def _check_connected(case: CaseData) -> None:
    index = case.bus_index
    branches = case.active_branches
    n = len(case.buses)
    rows = [index[br.from_bus] for br in branches]
    cols = [index[br.to_bus] for br in branches]
    graph = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    n_comp, _ = connected_components(graph, directed=False)
    if n_comp != 1:
        raise CaseParseError(f"network has {n_comp} islands after removing out-of-service branches")
