"""
ALADIN：局部步、协调 QP、与 ADMM 的相似性替换以及凸 QP 上的收敛。
"""

import numpy as np
import pytest
import scipy.sparse as sp

from exceptions import InputError
from schemas.config import AdmmConfig, AladinConfig
from services.admm import admm_iteration
from services.aladin import (
    aladin_coordination,
    aladin_local_step,
    aladin_run,
    independent_rows,
    similarity_packs,
)
from services.engine import STATUS_CONVERGED
from services.local_solver import SensitivityPack
from services.nlp import IterateState, PartitionedProblem, Subproblem, distance_inf, quadratic_function, zero_function
from tests.conftest import qp_problem, random_qp


def _pack(B, g, C=None):
    B = np.atleast_2d(np.asarray(B, dtype=float))
    n = B.shape[0]
    C = np.zeros((0, n)) if C is None else np.asarray(C, dtype=float)
    return SensitivityPack(B=B, g=np.asarray(g, dtype=float), C=C)


class TestLocalStep:

    def test_weighted_prox(self):
        """½x² + ½(x − 1)² → x = ½"""
        problem = qp_problem([[[1.0]]], [[0.0]], [[[1.0]]])
        state = IterateState.initial(problem, [np.array([1.0])], "aladin")
        (res,) = aladin_local_step(problem, state, AladinConfig(rho=1.0, mu=1.0))
        assert res.x_opt[0] == pytest.approx(0.5, abs=1e-9)

    def test_multiplier_term(self):
        """½x² + x + ½(x − 1)² → x = 0"""
        problem = qp_problem([[[1.0]]], [[0.0]], [[[1.0]]])
        state = IterateState.initial(problem, [np.array([1.0])], "aladin", lambda0=np.array([1.0]))
        (res,) = aladin_local_step(problem, state, AladinConfig(rho=1.0, mu=1.0))
        assert res.x_opt[0] == pytest.approx(0.0, abs=1e-9)

    def test_needs_global_multiplier(self):
        problem = qp_problem([[[1.0]]], [[0.0]], [[[1.0]]])
        state = IterateState.initial(problem, [np.zeros(1)], "admm")
        with pytest.raises(InputError):
            aladin_local_step(problem, state, AladinConfig(rho=1.0, mu=1.0))


class TestCoordination:

    @pytest.fixture
    def scalar(self):
        return qp_problem([[[1.0]]], [[0.0]], [[[1.0]]])

    @pytest.mark.parametrize("mu, dx, lam_qp", [
        (1.0, -1 / 2, -1 / 2),
        (2.0, -1 / 3, -2 / 3),
        (float("inf"), 0.0, -1.0),
    ])
    def test_scalar_example(self, scalar, mu, dx, lam_qp):
        """B = 1，g = 1，A = [1]，x = 0，λ = 0。"""
        res = aladin_coordination(scalar, [np.zeros(1)], [_pack([[1.0]], [1.0])], np.zeros(1), mu)
        assert res.delta_x[0][0] == pytest.approx(dx, abs=1e-12)
        assert res.lambda_qp[0] == pytest.approx(lam_qp, abs=1e-12)
        # s = A(x + Δx)
        assert res.slack[0] == pytest.approx(dx, abs=1e-12)

    def test_stationary_point_gives_zero_step(self):
        problem = qp_problem([np.eye(2), np.eye(2)], [np.zeros(2)] * 2, [[[1.0, 0.0]], [[-1.0, 0.0]]])
        x = [np.array([0.5, 1.0]), np.array([0.5, -2.0])]
        packs = [_pack(np.eye(2), np.zeros(2)), _pack(np.eye(2), np.zeros(2))]
        res = aladin_coordination(problem, x, packs, np.zeros(1), 1e4)
        for dx in res.delta_x:
            np.testing.assert_allclose(dx, 0.0, atol=1e-14)
        np.testing.assert_allclose(res.slack, 0.0, atol=1e-14)

    def test_dependent_active_rows_are_dropped(self):
        problem = qp_problem([np.eye(2)], [np.zeros(2)], [[[1.0, 1.0]]])
        pack = _pack(np.eye(2), [1.0, 1.0], C=[[1.0, 0.0], [2.0, 0.0]])
        res = aladin_coordination(problem, [np.zeros(2)], [pack], np.zeros(1), 1.0)
        assert res.dropped_rows == (1,)
        np.testing.assert_allclose(res.delta_x[0], [0.0, -0.5], atol=1e-12)
        assert res.slack[0] == pytest.approx(-0.5, abs=1e-12)

    def test_constraints_hold_on_random_data(self):
        rng = np.random.default_rng(21)
        problem, _ = random_qp(rng, 3, 3, 2)
        x = [rng.standard_normal(3) for _ in range(3)]
        packs = []
        for _ in range(3):
            M = rng.standard_normal((3, 3))
            packs.append(_pack(M @ M.T + np.eye(3), rng.standard_normal(3), C=rng.standard_normal((1, 3))))
        lam = rng.standard_normal(2)
        res = aladin_coordination(problem, x, packs, lam, 50.0)
        moved = [xi + dx for xi, dx in zip(x, res.delta_x)]
        coupling = sum(region.A @ v for region, v in zip(problem.regions, moved))
        np.testing.assert_allclose(coupling, res.slack, atol=1e-10)
        for pack, dx in zip(packs, res.delta_x):
            np.testing.assert_allclose(pack.C @ dx, 0.0, atol=1e-10)
        np.testing.assert_allclose(res.lambda_qp, lam + 50.0 * res.slack, atol=1e-9)

    def test_slack_shrinks_with_mu(self):
        rng = np.random.default_rng(22)
        problem, _ = random_qp(rng, 2, 2, 1)
        x = [rng.standard_normal(2) for _ in range(2)]
        packs = [_pack(np.eye(2), rng.standard_normal(2)) for _ in range(2)]
        norms = [
            np.linalg.norm(aladin_coordination(problem, x, packs, np.zeros(1), mu).slack)
            for mu in (1e5, 1e7, 1e9)
        ]
        assert norms[0] >= norms[1] >= norms[2]

    def test_lambda_shape_checked(self, scalar):
        with pytest.raises(InputError, match="lambda"):
            aladin_coordination(scalar, [np.zeros(1)], [_pack([[1.0]], [1.0])], np.zeros(2), 1.0)


class TestIndependentRows:

    def test_keeps_first_of_parallel_rows(self):
        np.testing.assert_array_equal(independent_rows(np.array([[1.0, 0.0], [2.0, 0.0], [0.0, 1.0]])), [0, 2])

    def test_empty(self):
        assert independent_rows(np.zeros((0, 3))).size == 0

    def test_zero_matrix(self):
        assert independent_rows(np.zeros((2, 2))).size == 0


class TestSimilarity:

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_admm_iteration(self, seed):
        """C 置空、B_i = ρA_iᵀA_i、g_i = A_iᵀλ_i、μ = inf 时与一次 ADMM 迭代一致。"""
        rng = np.random.default_rng(300 + seed)
        problem, _ = random_qp(rng, 3, 2, 4)
        rho = 1.0
        z = [rng.standard_normal(2) for _ in range(3)]
        lam = [rng.standard_normal(4) for _ in range(3)]
        state = IterateState.initial(problem, z, "admm", lambda0=lam)
        next_state, _, consensus, _, _ = admm_iteration(problem, state, AdmmConfig(rho=rho))

        packs = similarity_packs(problem, next_state.lambda_local, rho)
        res = aladin_coordination(problem, next_state.x, packs, np.zeros(problem.n_c), float("inf"))
        for xi, dx, z_admm in zip(next_state.x, res.delta_x, consensus.z):
            np.testing.assert_allclose(xi + dx, z_admm, atol=1e-6)

    def test_needs_one_lambda_per_region(self):
        problem = qp_problem([[[1.0]]], [[0.0]], [[[1.0]]])
        with pytest.raises(InputError):
            similarity_packs(problem, [], 1.0)


class TestAladinRun:

    @pytest.mark.parametrize("mu", [1e7, float("inf")])
    @pytest.mark.parametrize("seed", range(10))
    def test_convex_qp(self, seed, mu):
        rng = np.random.default_rng(31 + seed)
        problem, x_star = random_qp(rng, 3, 2, 2)
        initial = IterateState.initial(problem, [rng.standard_normal(2) for _ in range(3)], "aladin")
        config = AladinConfig(rho=1.0, mu=mu, max_iter=10, termination_eps=1e-8)
        run = aladin_run(problem, initial, config, reference=x_star)
        assert run.status == STATUS_CONVERGED
        assert run.iterations <= 10
        assert distance_inf(problem, run.state.x, x_star) <= 1e-6
        assert run.trace.rows[-1].dist_to_ref <= 1e-6

    def test_active_bound_enters_as_constraint(self):
        """min ½(x−2)² + ½(y−2)²，x <= 1，x = y → x = y = 1。"""
        bounded = Subproblem(
            n_xi=1, objective=quadratic_function([[1.0]], [-2.0]), eq_constraints=zero_function(1),
            ineq_constraints=zero_function(1), lower=[-np.inf], upper=[1.0],
            A=sp.csc_matrix([[1.0]]), scaling_diag=[1.0],
        )
        free = Subproblem(
            n_xi=1, objective=quadratic_function([[1.0]], [-2.0]), eq_constraints=zero_function(1),
            ineq_constraints=zero_function(1), lower=[-np.inf], upper=[np.inf],
            A=sp.csc_matrix([[-1.0]]), scaling_diag=[1.0],
        )
        problem = PartitionedProblem(regions=(bounded, free), n_c=1)
        initial = IterateState.initial(problem, [np.array([0.5]), np.array([0.5])], "aladin")
        run = aladin_run(problem, initial, AladinConfig(rho=1.0, mu=1e6, max_iter=30, termination_eps=1e-7),
                         reference=np.array([1.0, 1.0]))
        assert run.status == STATUS_CONVERGED
        np.testing.assert_allclose(problem.concat(run.state.x), [1.0, 1.0], atol=1e-5)
        assert run.state.lambda_global[0] == pytest.approx(-1.0, abs=1e-4)

    def test_rejects_admm_state(self):
        problem = qp_problem([[[1.0]]], [[0.0]], [[[1.0]]])
        initial = IterateState.initial(problem, [np.zeros(1)], "admm")
        with pytest.raises(InputError):
            aladin_run(problem, initial, AladinConfig(rho=1.0, mu=1.0))
