import numpy as np
import pytest

from qproj.core import QpInstance
from qproj.solver import (
    SolveStatus,
    SolverSettings,
    kkt_residuals,
    solve_full,
    solve_qp,
)

from oracles import brute_force_min, random_pd_instance


def test_analytic_clipped_minimum():
    inst = QpInstance(Q=[[2.0]], c=[-2.0], A=[[1.0]], b=[0.5])
    res = solve_qp(inst)
    assert res.status is SolveStatus.SOLVED
    assert res.y_star[0] == pytest.approx(0.5, abs=1e-9)
    assert res.lambda_star[0] == pytest.approx(1.0, abs=1e-8)
    assert res.objective == pytest.approx(-0.75, abs=1e-9)


def test_interior_minimum():
    inst = QpInstance(Q=np.eye(2), c=[0.0, 0.0], A=[[1.0, 0.0]], b=[1.0])
    res = solve_qp(inst)
    assert res.status is SolveStatus.SOLVED
    np.testing.assert_allclose(res.y_star, [0.0, 0.0], atol=1e-9)
    assert res.lambda_star[0] == pytest.approx(0.0, abs=1e-9)
    assert res.objective == pytest.approx(0.0, abs=1e-12)


def test_solve_full_is_alias():
    inst = QpInstance(Q=[[2.0]], c=[-2.0], A=[[1.0]], b=[0.5])
    x, obj = solve_full(inst)
    res = solve_qp(inst)
    np.testing.assert_array_equal(x, res.y_star)
    assert obj == res.objective


def test_oracle_equivalence_random():
    rng = np.random.default_rng(7)
    for trial in range(50):
        n = int(rng.integers(2, 7))
        m = int(rng.integers(1, 9))
        inst = random_pd_instance(rng, n, m)
        res = solve_qp(inst)
        assert res.status is SolveStatus.SOLVED
        ref, _ = brute_force_min(inst.Q, inst.c, inst.A, inst.b)
        assert res.objective == pytest.approx(ref, abs=1e-6)


def test_kkt_residual_invariants_many():
    rng = np.random.default_rng(8)
    settings = SolverSettings()
    for trial in range(100):
        n = int(rng.integers(2, 21))
        m = int(rng.integers(0, 2 * n))
        inst = random_pd_instance(rng, n, max(m, 0))
        res = solve_qp(inst, settings)
        assert res.status is SolveStatus.SOLVED
        viol, dual, compl_res = kkt_residuals(inst, res.y_star, res.lambda_star)
        eps_pri = settings.eps_abs + settings.eps_rel * np.abs(inst.b).max(initial=0.0)
        eps_dua = settings.eps_abs + settings.eps_rel * np.abs(inst.c).max(initial=0.0)
        assert viol <= eps_pri
        assert dual <= eps_dua
        assert compl_res <= 10.0 * eps_pri
        assert res.lambda_star.min(initial=0.0) >= -1e-10


def test_determinism_bitwise():
    rng = np.random.default_rng(9)
    inst = random_pd_instance(rng, 10, 14)
    r1 = solve_qp(inst)
    r2 = solve_qp(inst)
    np.testing.assert_array_equal(r1.y_star, r2.y_star)
    np.testing.assert_array_equal(r1.lambda_star, r2.lambda_star)
    assert r1.objective == r2.objective
    assert r1.iterations == r2.iterations


def test_unconstrained_problem():
    inst = QpInstance(Q=2.0 * np.eye(3), c=[-2.0, -4.0, 2.0],
                      A=np.zeros((0, 3)), b=[])
    res = solve_qp(inst)
    assert res.status is SolveStatus.SOLVED
    np.testing.assert_allclose(res.y_star, [1.0, 2.0, -1.0], atol=1e-8)


def test_dual_infeasible_detected():
    inst = QpInstance(Q=[[1.0, 0.0], [0.0, 0.0]], c=[0.0, -1.0],
                      A=[[1.0, 0.0]], b=[1.0])
    res = solve_qp(inst)
    assert res.status is SolveStatus.DUAL_INFEASIBLE
    assert res.message


def test_primal_infeasible_detected():
    inst = QpInstance(Q=[[2.0]], c=[0.0], A=[[1.0], [-1.0]], b=[1.0, -2.0])
    res = solve_qp(inst)
    assert res.status is SolveStatus.PRIMAL_INFEASIBLE
    assert res.message


def test_max_iter_returned_not_raised():
    rng = np.random.default_rng(10)
    inst = random_pd_instance(rng, 8, 12)
    res = solve_qp(inst, SolverSettings(max_iter=3, polish=False))
    assert res.status is SolveStatus.MAX_ITER_REACHED
    assert res.y_star.shape == (8,)


def test_settings_validation():
    with pytest.raises(ValueError):
        SolverSettings(eps_abs=0.0)
    with pytest.raises(ValueError):
        SolverSettings(max_iter=0)
    with pytest.raises(ValueError):
        SolverSettings(rho=-1.0)


def test_infeasibility_agrees_with_lp_oracle():
    # random subspace restrictions of feasible QPs are sometimes infeasible;
    # the status must agree with an independent LP feasibility check
    from scipy.optimize import linprog

    from qproj.core import ProjectionMatrix, project

    rng = np.random.default_rng(2)
    seen_infeasible = 0
    for trial in range(10):
        inst = random_pd_instance(rng, 6, 5)
        q, _ = np.linalg.qr(rng.normal(size=(6, 4)))
        red = project(inst, ProjectionMatrix(P=q[:, :2]))
        res = solve_qp(red)
        lp = linprog(c=np.zeros(2), A_ub=red.A, b_ub=red.b,
                     bounds=[(None, None)] * 2, method="highs")
        if res.status is SolveStatus.PRIMAL_INFEASIBLE:
            seen_infeasible += 1
            assert lp.status != 0
        elif res.status is SolveStatus.SOLVED:
            assert lp.status == 0
    assert seen_infeasible > 0


def test_psd_singular_hessian_supported():
    # flat direction but bounded: objective constant along x2
    inst = QpInstance(Q=[[1.0, 0.0], [0.0, 0.0]], c=[-1.0, 0.0],
                      A=[[1.0, 0.0]], b=[2.0])
    res = solve_qp(inst)
    assert res.status is SolveStatus.SOLVED
    assert res.objective == pytest.approx(-0.5, abs=1e-8)
