"""
测试共用的小算例与可分 QP 构造器。
"""

from typing import Sequence

import numpy as np
import pytest
import scipy.sparse as sp

from config import DATA_DIR
from services.nlp import PartitionedProblem, Subproblem, quadratic_function, zero_function

TWO_BUS_TEMPLATE = """function mpc = two_bus
mpc.version = '2';
mpc.baseMVA = 100;

%% bus data
%	bus_i	type	Pd	Qd	Gs	Bs	area	Vm	Va	baseKV	zone	Vmax	Vmin
mpc.bus = [
	1	3	0	0	0	0	1	1	0	135	1	{vmax}	{vmin};
	2	1	{pd}	{qd}	0	0	1	1	0	135	1	{vmax}	{vmin};
];

%% generator data
%	bus	Pg	Qg	Qmax	Qmin	Vg	mBase	status	Pmax	Pmin
mpc.gen = [
{gens}
];

%% branch data
%	fbus	tbus	r	x	b	rateA	rateB	rateC	ratio	angle	status
mpc.branch = [
	1	2	{r}	0.1	0	0	0	0	0	0	1;
];

%% generator cost data
mpc.gencost = [
{costs}
];
"""

TWO_BUS_PARTITION = """# 每条母线单独成区
region 1: 1
region 2: 2
"""


def two_bus_case(pd=50.0, qd=10.0, r=0.01, vmin=0.9, vmax=1.1, pmax=200.0, second_gen=False) -> str:
    gens = [f"\t1\t0\t0\t100\t-100\t1\t100\t1\t{pmax}\t0;"]
    costs = ["\t2\t0\t0\t3\t0.01\t10\t0;"]
    if second_gen:
        gens.append("\t2\t0\t0\t100\t-100\t1\t100\t1\t200\t0;")
        costs.append("\t2\t0\t0\t3\t0.02\t40\t0;")
    return TWO_BUS_TEMPLATE.format(pd=pd, qd=qd, r=r, vmin=vmin, vmax=vmax,
                                   gens="\n".join(gens), costs="\n".join(costs))


def qp_region(Q, c, A, name: str = "") -> Subproblem:
    """无约束区域 f(x) = ½xᵀQx + cᵀx，盒约束为 ±inf。"""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    n = Q.shape[0]
    return Subproblem(
        n_xi=n,
        objective=quadratic_function(Q, c),
        eq_constraints=zero_function(n, 0),
        ineq_constraints=zero_function(n, 0),
        lower=np.full(n, -np.inf),
        upper=np.full(n, np.inf),
        A=sp.csc_matrix(np.atleast_2d(np.asarray(A, dtype=float))),
        scaling_diag=np.ones(n),
        name=name,
    )


def qp_problem(Qs: Sequence, cs: Sequence, As: Sequence) -> PartitionedProblem:
    regions = tuple(qp_region(Q, c, A, name=f"region {i}") for i, (Q, c, A) in enumerate(zip(Qs, cs, As)))
    return PartitionedProblem(regions=regions, n_c=regions[0].n_c)


def random_qp(rng: np.random.Generator, n_regions: int, n_i: int, n_c: int):
    """
    随机可分强凸 QP 与线性耦合，返回 (problem, x*)。x* 由集中 KKT 系统直接求得。
    """
    Qs, cs, As = [], [], []
    for _ in range(n_regions):
        M = rng.standard_normal((n_i, n_i))
        Qs.append(M @ M.T + n_i * np.eye(n_i))
        cs.append(rng.standard_normal(n_i))
        As.append(rng.standard_normal((n_c, n_i)))
    problem = qp_problem(Qs, cs, As)

    n_x = n_regions * n_i
    Q = np.zeros((n_x, n_x))
    for i, Qi in enumerate(Qs):
        Q[i * n_i:(i + 1) * n_i, i * n_i:(i + 1) * n_i] = Qi
    A = np.hstack(As)
    K = np.block([[Q, A.T], [A, np.zeros((n_c, n_c))]])
    rhs = np.concatenate([-np.concatenate(cs), np.zeros(n_c)])
    x_star = np.linalg.solve(K, rhs)[:n_x]
    return problem, x_star


@pytest.fixture
def case57_text() -> str:
    return (DATA_DIR / "case57.m").read_text()


@pytest.fixture
def case57_partition_text() -> str:
    return (DATA_DIR / "case57_4regions.txt").read_text()


@pytest.fixture
def two_bus_files(tmp_path):
    case = tmp_path / "two_bus.m"
    case.write_text(two_bus_case())
    partition = tmp_path / "two_bus_regions.txt"
    partition.write_text(TWO_BUS_PARTITION)
    return case, partition
