"""
区域划分解析、分区 AC-OPF 构建、初始化与集中式参考解。
"""

import numpy as np
import pytest

from exceptions import InitializationError, InputError, ModelBuildError
from services.local_solver import AugmentedLocalProblem, solve_local
from services.matpower import parse_case
from services.nlp import check_derivatives, consensus_gap, constraint_violation
from services.opf_model import (
    ANGLE_VOLTAGE_SCALE,
    build_opf_model,
    build_partitioned_opf,
    centralized_solve,
    default_start,
    feasible_init,
    parse_partition,
    single_region,
    solve_reference,
)
from services.power_flow import bus_injections, newton_power_flow, total_losses
from tests.conftest import TWO_BUS_PARTITION, two_bus_case


def _power_flow_point(case):
    """牛顿潮流解及对应的发电出力（发电机均在参考母线上）。"""
    theta, vm, converged, _ = newton_power_flow(case)
    assert converged
    s = bus_injections(case, theta, vm)
    index = case.bus_index
    gens = case.active_generators
    pg = np.zeros(len(gens))
    qg = np.zeros(len(gens))
    for g, gen in enumerate(gens):
        i = index[gen.bus]
        bus = case.buses[i]
        share = sum(1 for other in gens if other.bus == gen.bus)
        pg[g] = (s[i].real + bus.pd) / share
        qg[g] = (s[i].imag + bus.qd) / share
    return theta, vm, pg, qg


class TestParsePartition:

    def test_ranges_commas_and_comments(self):
        spec = parse_partition("# header\nregion 2: 1-3, 7  # tail\nregion 1: 4 5 6\n")
        assert spec.region_ids == (2, 1)
        assert spec.buses_of(2) == [1, 2, 3, 7]
        assert spec.assignment[6] == 1

    @pytest.mark.parametrize("text, match", [
        ("area 1: 1 2", "expected"),
        ("region 1: 1\nregion 1: 2", "defined twice"),
        ("region 1: 1 2\nregion 2: 2", "already assigned"),
        ("region 1: 1 x", "malformed"),
        ("# only a comment\n", "no regions"),
    ])
    def test_malformed(self, text, match):
        with pytest.raises(InputError, match=match):
            parse_partition(text)

    def test_case57_partition(self, case57_partition_text):
        spec = parse_partition(case57_partition_text)
        assert [len(spec.buses_of(r)) for r in spec.region_ids] == [14, 15, 17, 11]


class TestRegionValidation:

    def test_unknown_bus(self):
        case = parse_case(two_bus_case())
        with pytest.raises(ModelBuildError, match="unknown"):
            parse_partition("region 1: 1\nregion 2: 2 3").validate(case)

    def test_unassigned_bus(self):
        case = parse_case(two_bus_case())
        with pytest.raises(ModelBuildError, match="does not assign"):
            parse_partition("region 1: 1").validate(case)

    def test_disconnected_region(self, case57_text):
        case = parse_case(case57_text)
        rest = " ".join(str(b.id) for b in case.buses if b.id not in (1, 30))
        with pytest.raises(ModelBuildError, match="not connected"):
            parse_partition(f"region 1: 1 30\nregion 2: {rest}").validate(case)

    def test_model_build_error_is_input_error(self):
        assert issubclass(ModelBuildError, InputError)


class TestBuildPartitionedOpf:

    @pytest.fixture
    def two_bus_model(self):
        return build_opf_model(two_bus_case(), TWO_BUS_PARTITION, name="two_bus")

    def test_two_bus_layout(self, two_bus_model):
        first, second = two_bus_model.layout.regions
        assert (first.buses, first.copies, first.generators, first.ties) == ((1,), (2,), (0,), (0,))
        assert first.n_xi == 10
        assert second.n_xi == 8
        # 单条联络线：4 行副本 + 4 行传输功率
        assert two_bus_model.problem.n_c == 8
        assert len(two_bus_model.layout.consensus_labels) == 8

    def test_variable_order(self, two_bus_model):
        first = two_bus_model.layout.regions[0]
        assert first.labels == [
            "theta[1]", "vm[1]", "theta_copy[2]", "vm_copy[2]", "pg[gen 0]", "qg[gen 0]",
            "p_in[branch 0]", "q_in[branch 0]", "p_out[branch 0]", "q_out[branch 0]",
        ]

    def test_bounds(self, two_bus_model):
        region = two_bus_model.problem.regions[0]
        first = two_bus_model.layout.regions[0]
        assert region.lower[first.theta(1)] == region.upper[first.theta(1)] == 0.0
        assert region.lower[first.vm(2)] == 0.9
        assert region.upper[first.pg(0)] == pytest.approx(2.0)
        # 副本母线不是本区参考母线，相角不受限
        second = two_bus_model.layout.regions[1]
        assert np.isinf(two_bus_model.problem.regions[1].lower[second.theta(1)])

    def test_sigma_choices(self):
        case = parse_case(two_bus_case())
        spec = parse_partition(TWO_BUS_PARTITION)
        problem, layout = build_partitioned_opf(case, spec, sigma="paper-footnote")
        mask = layout.regions[0].is_angle_or_voltage()
        np.testing.assert_array_equal(problem.regions[0].scaling_diag, np.where(mask, ANGLE_VOLTAGE_SCALE, 1.0))
        problem, _ = build_partitioned_opf(case, spec, sigma="identity")
        np.testing.assert_array_equal(problem.regions[0].scaling_diag, np.ones(10))
        with pytest.raises(InputError, match="sigma"):
            build_partitioned_opf(case, spec, sigma="diag")

    def test_power_flow_point_satisfies_every_region(self, case57_text, case57_partition_text):
        model = build_opf_model(case57_text, case57_partition_text, name="case57")
        theta, vm, pg, qg = _power_flow_point(model.case)
        parts = model.scatter(theta, vm, pg, qg)
        assert consensus_gap(model.problem, parts) <= 1e-12
        for region, x in zip(model.problem.regions, parts):
            assert np.max(np.abs(region.eq_constraints.value(x))) <= 1e-8

    def test_scatter_gather(self, case57_text, case57_partition_text):
        model = build_opf_model(case57_text, case57_partition_text)
        rng = np.random.default_rng(0)
        n_b, n_g = len(model.case.buses), len(model.case.active_generators)
        point = (rng.uniform(-0.2, 0.2, n_b), rng.uniform(0.95, 1.05, n_b), rng.random(n_g), rng.random(n_g))
        for got, want in zip(model.gather(model.scatter(*point)), point):
            np.testing.assert_array_equal(got, want)

    def test_region_derivatives(self, case57_text, case57_partition_text):
        model = build_opf_model(case57_text, case57_partition_text)
        rng = np.random.default_rng(1)
        for region in model.problem.regions:
            x = np.where(np.isfinite(region.lower), region.lower, 0.0) + rng.uniform(0.0, 0.1, region.n_xi)
            w = rng.standard_normal(region.n_g)
            jac_err, hess_err = check_derivatives(region.eq_constraints, x, weights=w)
            assert jac_err <= 1e-5
            assert hess_err <= 1e-5
            jac_err, hess_err = check_derivatives(region.objective, x)
            assert jac_err <= 1e-5
            assert hess_err <= 1e-5
            # case57 无线路容量限值，不等式为空
            assert region.n_h == 0
            jac_err, hess_err = check_derivatives(region.ineq_constraints, x, weights=np.zeros(region.n_h))
            assert region.ineq_constraints.jac(x).shape == (0, region.n_xi)
            assert (jac_err, hess_err) == (0.0, 0.0)

    def test_flat_start_is_consistent(self, case57_text, case57_partition_text):
        model = build_opf_model(case57_text, case57_partition_text)
        state = model.flat_start("aladin")
        assert consensus_gap(model.problem, state.z) <= 1e-12
        assert np.all(state.lambda_global == 0.0)

    def test_fingerprint(self, case57_text, case57_partition_text):
        a = build_opf_model(case57_text, case57_partition_text)
        b = build_opf_model(case57_text, case57_partition_text)
        c = build_opf_model(case57_text, None)
        assert a.fingerprint == b.fingerprint
        assert a.fingerprint != c.fingerprint
        assert len(c.problem.regions) == 1
        assert c.problem.n_c == 0

    def test_single_region(self):
        case = parse_case(two_bus_case())
        assert single_region(case).assignment == {1: 1, 2: 1}


class TestInitialization:

    def test_feasible_init(self):
        model = build_opf_model(two_bus_case(), TWO_BUS_PARTITION)
        state = feasible_init(model, "admm")
        assert consensus_gap(model.problem, state.z) <= 1e-12
        assert constraint_violation(model.problem, state.z) <= 1e-6
        assert all(np.all(lam == 0.0) for lam in state.lambda_local)

    def test_infeasible_dispatch(self):
        model = build_opf_model(two_bus_case(pd=500.0, pmax=100.0), TWO_BUS_PARTITION)
        with pytest.raises(InitializationError) as info:
            feasible_init(model)
        assert info.value.best_residual > 1e-3

    def test_default_start(self):
        lo = np.array([0.0, -np.inf, 1.0, -np.inf])
        up = np.array([2.0, 3.0, np.inf, np.inf])
        np.testing.assert_array_equal(default_start(lo, up), [1.0, 3.0, 1.0, 0.0])


class TestReferenceSolution:

    def test_single_generator_covers_load_and_losses(self):
        model = build_opf_model(two_bus_case(), TWO_BUS_PARTITION)
        sol = solve_reference(model)
        assert sol.kkt.max() <= 1e-6
        theta, vm, pg, _ = model.gather(model.problem.split(sol.x))
        assert pg[0] == pytest.approx(0.5 + total_losses(model.case, theta, vm), abs=1e-7)
        # 成本 0.01·P² + 10·P（P 为 MW）
        p_mw = 100.0 * pg[0]
        assert sol.objective == pytest.approx(0.01 * p_mw ** 2 + 10.0 * p_mw, rel=1e-7)

    def test_single_region_matches_direct_local_solve(self):
        model = build_opf_model(two_bus_case(), None)
        (region,) = model.problem.regions
        assert model.problem.n_c == 0
        start = default_start(region.lower, region.upper)
        sol = centralized_solve(model.problem, start=start)
        direct = solve_local(
            AugmentedLocalProblem(
                base=region,
                linear_term=np.zeros(region.n_xi),
                prox_center=start,
                prox_weight=0.0,
                prox_metric="scaled_identity",
            ),
            warm_start=start,
        )
        assert direct.optimal
        np.testing.assert_allclose(sol.x, direct.x_opt, atol=1e-9)
        assert sol.objective == pytest.approx(region.objective.scalar(direct.x_opt), rel=1e-10)

    def test_cheap_generator_is_dispatched_first(self):
        model = build_opf_model(two_bus_case(second_gen=True), TWO_BUS_PARTITION)
        sol = solve_reference(model)
        _, _, pg, _ = model.gather(model.problem.split(sol.x))
        assert pg[1] == pytest.approx(0.0, abs=1e-6)
        second = model.layout.regions[1]
        assert sol.duals.lower[1][second.pg(1)] > 1.0
