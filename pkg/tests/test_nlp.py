"""
问题抽象层：SmoothFunction、分区问题、迭代状态与全问题度量。
"""

import numpy as np
import pytest
import scipy.sparse as sp

from exceptions import InputError, PoisonedEvaluationError
from services.nlp import (
    IterateState,
    PartitionedProblem,
    ProblemDuals,
    SmoothFunction,
    Subproblem,
    affine_function,
    check_derivatives,
    consensus_gap,
    constraint_violation,
    distance_inf,
    estimate_multipliers,
    kkt_residual,
    merge_regions,
    primal_gap,
    quadratic_function,
    stationarity_certificate,
    zero_function,
)
from services.opf_model import centralized_solve
from tests.conftest import qp_problem, qp_region


def _trig_function() -> SmoothFunction:
    """F(x) = [sin(x0)·x1, x0² + exp(x1)]"""

    def evaluate(x):
        return np.array([np.sin(x[0]) * x[1], x[0] ** 2 + np.exp(x[1])])

    def jacobian(x):
        return np.array([[np.cos(x[0]) * x[1], np.sin(x[0])], [2 * x[0], np.exp(x[1])]])

    def hessian(x, w):
        h0 = np.array([[-np.sin(x[0]) * x[1], np.cos(x[0])], [np.cos(x[0]), 0.0]])
        h1 = np.array([[2.0, 0.0], [0.0, np.exp(x[1])]])
        return w[0] * h0 + w[1] * h1

    return SmoothFunction(dim_in=2, dim_out=2, eval=evaluate, jacobian=jacobian, hessian_vlp=hessian, name="trig")


def _scalar_pair() -> PartitionedProblem:
    """两个标量区域，A₁=[1]、A₂=[−1]。"""
    return qp_problem([[[1.0]], [[1.0]]], [[0.0], [0.0]], [[[1.0]], [[-1.0]]])


class TestSmoothFunction:
    """回调组合与有限差分校验。"""

    def test_quadratic_derivatives(self):
        rng = np.random.default_rng(0)
        M = rng.standard_normal((4, 4))
        fn = quadratic_function(M + M.T, rng.standard_normal(4), 2.0)
        jac_err, hess_err = check_derivatives(fn, rng.standard_normal(4))
        assert jac_err <= 1e-6
        assert hess_err <= 1e-6

    def test_nonlinear_derivatives_with_weights(self):
        fn = _trig_function()
        jac_err, hess_err = check_derivatives(fn, np.array([0.3, -0.7]), weights=np.array([2.0, -0.5]))
        assert jac_err <= 1e-6
        assert hess_err <= 1e-6

    def test_quadratic_value(self):
        fn = quadratic_function(2 * np.eye(2), np.array([-2.0, 0.0]), 1.0)
        assert fn.scalar(np.array([1.0, 0.0])) == pytest.approx(0.0)
        np.testing.assert_allclose(fn.gradient(np.array([1.0, 1.0])), [0.0, 2.0])

    def test_nan_is_poisoned(self):
        fn = SmoothFunction(1, 1, lambda x: np.array([np.nan]), lambda x: np.zeros((1, 1)),
                            lambda x, w: np.zeros((1, 1)), name="bad")
        with pytest.raises(PoisonedEvaluationError, match="bad"):
            fn.value(np.zeros(1))

    def test_zero_function_has_no_rows(self):
        fn = zero_function(3)
        assert fn.value(np.ones(3)).shape == (0,)
        assert fn.hess(np.ones(3), np.zeros(0)).shape == (3, 3)


class TestPartitionedProblem:

    def test_split_concat(self):
        problem = qp_problem([np.eye(2), np.eye(3)], [np.zeros(2), np.zeros(3)],
                             [np.ones((1, 2)), -np.ones((1, 3))])
        assert problem.n_x == 5
        parts = problem.split(np.arange(5.0))
        np.testing.assert_array_equal(parts[1], [2.0, 3.0, 4.0])
        np.testing.assert_array_equal(problem.concat(parts), np.arange(5.0))

    def test_split_wrong_length(self):
        with pytest.raises(InputError):
            _scalar_pair().split(np.zeros(3))

    def test_mismatched_coupling_rows(self):
        with pytest.raises(InputError, match="n_c"):
            PartitionedProblem(regions=(qp_region([[1.0]], [0.0], [[1.0]]),
                                        qp_region([[1.0]], [0.0], [[1.0], [1.0]])), n_c=1)

    def test_row_space_basis(self):
        problem = qp_problem([np.eye(3)], [np.zeros(3)], [[[1.0, 1.0, 0.0]]])
        (U,) = problem.row_space_bases
        assert U.shape == (3, 1)
        np.testing.assert_allclose(np.abs(U[:, 0]), [2 ** -0.5, 2 ** -0.5, 0.0])

    def test_lower_above_upper(self):
        with pytest.raises(InputError, match="lower bound"):
            Subproblem(n_xi=1, objective=quadratic_function([[1.0]]), eq_constraints=zero_function(1),
                       ineq_constraints=zero_function(1), lower=[1.0], upper=[0.0],
                       A=sp.csc_matrix((0, 1)), scaling_diag=[1.0])


class TestIterateState:

    def test_exactly_one_multiplier(self):
        with pytest.raises(InputError):
            IterateState(x=(np.zeros(1),), z=(np.zeros(1),))
        with pytest.raises(InputError):
            IterateState(x=(np.zeros(1),), z=(np.zeros(1),), lambda_local=(np.zeros(1),),
                         lambda_global=np.zeros(1))

    def test_initial_shapes(self):
        problem = _scalar_pair()
        admm = IterateState.initial(problem, [np.ones(1), np.ones(1)], "admm")
        assert len(admm.lambda_local) == 2
        assert admm.lambda_local[0].shape == (1,)
        aladin = IterateState.initial(problem, [np.ones(1), np.ones(1)], "aladin")
        assert aladin.lambda_global.shape == (1,)
        np.testing.assert_array_equal(aladin.x[0], aladin.z[0])

    def test_supplied_lambda(self):
        problem = _scalar_pair()
        state = IterateState.initial(problem, [np.zeros(1), np.zeros(1)], "aladin", lambda0=np.array([3.0]))
        assert state.lambda_global[0] == 3.0

    def test_unknown_engine(self):
        with pytest.raises(InputError, match="engine"):
            IterateState.initial(_scalar_pair(), [np.zeros(1), np.zeros(1)], "sqp")


class TestMetrics:

    def test_consensus_gap_examples(self):
        problem = _scalar_pair()
        assert consensus_gap(problem, [np.zeros(1), np.zeros(1)]) == 0.0
        assert consensus_gap(problem, [np.ones(1), np.zeros(1)]) == 1.0

    def test_consensus_gap_homogeneous(self):
        rng = np.random.default_rng(3)
        problem = qp_problem([np.eye(2)] * 3, [np.zeros(2)] * 3, [rng.standard_normal((2, 2)) for _ in range(3)])
        x = [rng.standard_normal(2) for _ in range(3)]
        gap = consensus_gap(problem, x)
        for alpha in (-2.5, 0.0, 0.3, 7.0):
            assert consensus_gap(problem, [alpha * v for v in x]) == pytest.approx(abs(alpha) * gap, abs=1e-14)

    def test_primal_gap(self):
        problem = _scalar_pair()
        assert primal_gap(problem, [np.array([2.0]), np.zeros(1)], [np.array([1.5]), np.array([-1.0])]) == 1.0

    def test_violation_of_scalar_inequality(self):
        region = Subproblem(n_xi=1, objective=quadratic_function([[0.0]]), eq_constraints=zero_function(1),
                            ineq_constraints=affine_function([[1.0]], [-1.0]), lower=[-np.inf], upper=[np.inf],
                            A=sp.csc_matrix((0, 1)), scaling_diag=[1.0])
        problem = PartitionedProblem(regions=(region,), n_c=0)
        assert constraint_violation(problem, [np.array([2.0])]) == pytest.approx(1.0)
        assert constraint_violation(problem, [np.array([0.5])]) == 0.0

    def test_violation_names_region(self):
        bad = SmoothFunction(1, 1, lambda x: np.array([np.inf]), lambda x: np.zeros((1, 1)),
                             lambda x, w: np.zeros((1, 1)))
        good = qp_region([[1.0]], [0.0], np.zeros((0, 1)))
        region = Subproblem(n_xi=1, objective=quadratic_function([[1.0]]), eq_constraints=bad,
                            ineq_constraints=zero_function(1), lower=[-np.inf], upper=[np.inf],
                            A=sp.csc_matrix((0, 1)), scaling_diag=[1.0])
        problem = PartitionedProblem(regions=(good, region), n_c=0)
        with pytest.raises(PoisonedEvaluationError) as info:
            constraint_violation(problem, [np.zeros(1), np.zeros(1)])
        assert info.value.region == 1

    def test_distance_inf(self):
        problem = _scalar_pair()
        assert distance_inf(problem, [np.array([1.0]), np.array([-2.0])], np.array([0.5, 0.0])) == 2.0


class TestKKTResidual:

    def test_unconstrained_minimum(self):
        problem = PartitionedProblem(regions=(qp_region(2 * np.eye(2), np.zeros(2), np.zeros((0, 2))),), n_c=0)
        res = kkt_residual(problem, [np.zeros(2)], ProblemDuals.zeros(problem))
        assert (res.stationarity, res.primal, res.complementarity) == (0.0, 0.0, 0.0)

    def test_centralized_two_variable_qp(self):
        """min (x−1)² + (y−3)²，x − y = 0 → x = y = 2，λ = −2。"""
        problem = qp_problem([[[2.0]], [[2.0]]], [[-2.0], [-6.0]], [[[1.0]], [[-1.0]]])
        sol = centralized_solve(problem)
        np.testing.assert_allclose(sol.x, [2.0, 2.0], atol=1e-8)
        assert sol.kkt.max() <= 1e-8
        assert sol.duals.consensus[0] == pytest.approx(-2.0, abs=1e-7)

    def test_perturbed_point_is_not_stationary(self):
        problem = qp_problem([[[2.0]], [[2.0]]], [[-2.0], [-6.0]], [[[1.0]], [[-1.0]]])
        x = [np.array([2.01]), np.array([2.01])]
        assert stationarity_certificate(problem, x) > 1e-4
        assert stationarity_certificate(problem, [np.array([2.0]), np.array([2.0])]) <= 1e-10

    def test_estimated_multipliers_at_bound(self):
        """min (x−2)²，x <= 1：上界乘子为 2。"""
        region = Subproblem(n_xi=1, objective=quadratic_function([[2.0]], [-4.0], 4.0),
                            eq_constraints=zero_function(1), ineq_constraints=zero_function(1),
                            lower=[-np.inf], upper=[1.0], A=sp.csc_matrix((0, 1)), scaling_diag=[1.0])
        problem = PartitionedProblem(regions=(region,), n_c=0)
        duals = estimate_multipliers(problem, [np.array([1.0])])
        assert duals.upper[0][0] == pytest.approx(2.0)
        assert kkt_residual(problem, [np.array([1.0])], duals).max() <= 1e-10


class TestMergeRegions:

    def test_consensus_rows_appended(self):
        problem = qp_problem([np.eye(2), np.eye(1)], [np.zeros(2), np.zeros(1)],
                             [[[1.0, 0.0], [0.0, 1.0]], [[-1.0], [0.0]]])
        merged = merge_regions(problem)
        assert merged.n_xi == 3
        assert merged.n_g == 2
        assert merged.n_c == 0
        np.testing.assert_allclose(merged.eq_constraints.value(np.array([1.0, 2.0, 1.0])), [0.0, 2.0])
        assert merged.objective.scalar(np.ones(3)) == pytest.approx(1.5)
