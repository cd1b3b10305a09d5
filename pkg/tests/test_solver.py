import numpy as np
import pytest
from scipy import sparse

from lanefree.solver import (SolverConfig, check_derivatives, solve)
from lanefree.transcription import (NlpProblem, TranscriptionConfig,
                                    extract_solution, initial_guess,
                                    transcribe)


def dense_problem(n, m, fun, grad, cons, jac, hess, xl, xu, cl, cu):
    """Wrap dense callables into the sparse NlpProblem interface."""
    def jac_sparse(x):
        return sparse.csr_matrix(np.atleast_2d(jac(x)).reshape(m, n))

    def hess_sparse(x, sigma, mult):
        return sparse.csr_matrix(hess(x, sigma, mult))

    return NlpProblem(
        n=n, m=m, layout=None,
        objective=fun, gradient=grad,
        constraints=lambda x: np.atleast_1d(cons(x)),
        jacobian=jac_sparse, hessian=hess_sparse,
        x_lower=np.asarray(xl, dtype=float),
        x_upper=np.asarray(xu, dtype=float),
        c_lower=np.asarray(cl, dtype=float),
        c_upper=np.asarray(cu, dtype=float))


def test_active_bound_quadratic():
    # min (x - 3)^2 subject to x >= 5: solution sits on the bound
    prob = dense_problem(
        1, 0,
        lambda x: (x[0] - 3.0) ** 2,
        lambda x: np.array([2.0 * (x[0] - 3.0)]),
        lambda x: np.zeros(0),
        lambda x: np.zeros((0, 1)),
        lambda x, sigma, mult: np.array([[2.0 * sigma]]),
        [5.0], [np.inf], [], [])
    x, outcome = solve(prob, np.array([7.0]), SolverConfig(kkt_tol=1e-8))
    assert outcome.status == "optimal"
    assert x[0] == pytest.approx(5.0, abs=1e-6)


def test_equality_qp_matches_hand_kkt():
    # min 0.5 x'Hx + g'x  s.t.  a'x = b, H = diag(2, 4), g = (-2, -4)
    h_mat = np.diag([2.0, 4.0])
    g_vec = np.array([-2.0, -4.0])
    a_vec = np.array([1.0, 1.0])
    b_val = 3.0
    # analytic KKT: [H a; a' 0][x; y] = [-g; b]
    kkt = np.block([[h_mat, a_vec[:, None]], [a_vec[None, :],
                                              np.zeros((1, 1))]])
    sol = np.linalg.solve(kkt, np.concatenate([-g_vec, [b_val]]))
    x_star = sol[:2]

    prob = dense_problem(
        2, 1,
        lambda x: 0.5 * x @ h_mat @ x + g_vec @ x,
        lambda x: h_mat @ x + g_vec,
        lambda x: np.array([a_vec @ x]),
        lambda x: a_vec[None, :],
        lambda x, sigma, mult: sigma * h_mat,
        [-np.inf] * 2, [np.inf] * 2, [b_val], [b_val])
    x, outcome = solve(prob, np.array([0.0, 0.0]),
                       SolverConfig(kkt_tol=1e-10))
    assert outcome.status == "optimal"
    np.testing.assert_allclose(x, x_star, atol=1e-8)


def test_inequality_qp():
    # min x^2 + y^2 subject to x + y >= 2 -> x = y = 1
    prob = dense_problem(
        2, 1,
        lambda x: float(x @ x),
        lambda x: 2.0 * x,
        lambda x: np.array([x[0] + x[1]]),
        lambda x: np.array([[1.0, 1.0]]),
        lambda x, sigma, mult: 2.0 * sigma * np.eye(2),
        [-np.inf] * 2, [np.inf] * 2, [2.0], [np.inf])
    x, outcome = solve(prob, np.array([5.0, -1.0]),
                       SolverConfig(kkt_tol=1e-9))
    assert outcome.status == "optimal"
    np.testing.assert_allclose(x, [1.0, 1.0], atol=1e-7)


def test_nonconvex_problem_converges_to_kkt_point():
    # min -x0^2 subject to x0^2 + x1^2 = 1 (maximize |x0| on the circle)
    prob = dense_problem(
        2, 1,
        lambda x: -x[0] ** 2,
        lambda x: np.array([-2.0 * x[0], 0.0]),
        lambda x: np.array([x[0] ** 2 + x[1] ** 2]),
        lambda x: np.array([[2.0 * x[0], 2.0 * x[1]]]),
        lambda x, sigma, mult: np.diag([-2.0 * sigma + 2.0 * mult[0],
                                        2.0 * mult[0]]),
        [-np.inf] * 2, [np.inf] * 2, [1.0], [1.0])
    x, outcome = solve(prob, np.array([0.5, 0.8]), SolverConfig())
    assert outcome.status == "optimal"
    assert abs(x[0]) == pytest.approx(1.0, abs=1e-6)
    assert x[1] == pytest.approx(0.0, abs=1e-6)


def test_contradictory_equalities_reported_infeasible():
    prob = dense_problem(
        1, 2,
        lambda x: float(x[0] ** 2),
        lambda x: np.array([2.0 * x[0]]),
        lambda x: np.array([x[0], x[0]]),
        lambda x: np.array([[1.0], [1.0]]),
        lambda x, sigma, mult: np.array([[2.0 * sigma]]),
        [-np.inf], [np.inf], [1.0, 2.0], [1.0, 2.0])
    x, outcome = solve(prob, np.array([0.0]), SolverConfig(max_iter=200))
    assert outcome.status == "infeasible"
    assert outcome.offending_row in (0, 1)


def test_nan_constraint_is_numerical_failure():
    prob = dense_problem(
        1, 1,
        lambda x: float(x[0]),
        lambda x: np.array([1.0]),
        lambda x: np.array([np.sqrt(x[0])]),
        lambda x: np.array([[0.5 / np.sqrt(np.abs(x[0]) + 1e-300)]]),
        lambda x, sigma, mult: np.zeros((1, 1)),
        [-np.inf], [np.inf], [0.5], [np.inf])
    x, outcome = solve(prob, np.array([-1.0]), SolverConfig(max_iter=50))
    assert outcome.status == "numerical-failure"
    assert outcome.offending_row == 0


def test_determinism_bit_identical_logs():
    prob_args = dict(
        n=2, m=1,
        fun=lambda x: float(x @ x) + 0.3 * x[0] * x[1],
        grad=lambda x: 2.0 * x + 0.3 * x[::-1],
        cons=lambda x: np.array([x[0] + 2.0 * x[1]]),
        jac=lambda x: np.array([[1.0, 2.0]]),
        hess=lambda x, sigma, mult: sigma * (2.0 * np.eye(2)
                                             + 0.3 * np.eye(2)[::-1]),
        xl=[-np.inf] * 2, xu=[np.inf] * 2, cl=[1.0], cu=[np.inf])
    logs = []
    for _ in range(2):
        prob = dense_problem(**prob_args)
        _, outcome = solve(prob, np.array([2.0, 2.0]), SolverConfig())
        logs.append(list(outcome.log))
    assert logs[0] == logs[1]


def solve_straight(straight_scenario, cfg=None, solver_cfg=None,
                   trans_cfg=None):
    trans_cfg = trans_cfg or TranscriptionConfig()
    problem = transcribe(straight_scenario, trans_cfg)
    x0 = initial_guess(straight_scenario, trans_cfg, problem)
    x, outcome = solve(problem, x0, solver_cfg or SolverConfig())
    return problem, x, outcome


def test_straight_70m_minimum_time(straight_scenario):
    trans_cfg = TranscriptionConfig()     # the paper's N_p = 15, d = 5
    problem, x, outcome = solve_straight(straight_scenario,
                                         trans_cfg=trans_cfg)
    assert outcome.status == "optimal", outcome.message
    tf = x[0]
    # physics floor: 70 m from 10 m/s at 3 m/s^2 takes 4.268 s
    assert 4.268 <= tf <= 4.8
    sol = extract_solution(x, straight_scenario, trans_cfg, problem,
                           status=outcome.status)
    speeds = sol.states["e0"][:, 2]
    assert speeds.max() <= 25.0 + 1e-6
    accel = sol.inputs["e0"][:, 0]
    assert np.abs(accel).max() <= 3.0 + 1e-6


def test_filter_merit_guarantee_per_step(straight_scenario):
    # the filter guarantee: within one barrier stage no accepted step
    # increases both the constraint violation and the barrier objective
    cfg = SolverConfig()
    _, x, outcome = solve_straight(straight_scenario, solver_cfg=cfg,
                                   trans_cfg=TranscriptionConfig(
                                       n_intervals=8, degree=3))
    assert outcome.status == "optimal"
    assert len(outcome.merit_history) > 3
    by_stage = {}
    for stage, theta, phi in outcome.merit_history:
        by_stage.setdefault(stage, []).append((theta, phi))
    checked = 0
    for entries in by_stage.values():
        for (th0, ph0), (th1, ph1) in zip(entries, entries[1:]):
            slack_t = 1e-9 * max(1.0, abs(th0))
            slack_p = 1e-9 * max(1.0, abs(ph0))
            assert th1 <= th0 + slack_t or ph1 <= ph0 + slack_p
            checked += 1
    assert checked > 0


def test_log_has_documented_fields(straight_scenario):
    _, _, outcome = solve_straight(straight_scenario,
                                   trans_cfg=TranscriptionConfig(
                                       n_intervals=4, degree=2))
    for k, line in enumerate(outcome.log):
        fields = line.split()
        assert len(fields) == 5
        assert int(fields[0]) == k
        float(fields[1]), float(fields[2]), float(fields[3]), float(fields[4])


def test_check_derivatives_on_scenario(straight_scenario):
    trans_cfg = TranscriptionConfig(n_intervals=4, degree=3)
    problem = transcribe(straight_scenario, trans_cfg)
    x0 = initial_guess(straight_scenario, trans_cfg, problem)
    report = check_derivatives(problem, x0)
    assert report.max_relative_error <= 1e-6
    # grouped differencing should need orders of magnitude fewer
    # evaluations than one per column
    assert report.n_groups < problem.n / 5


def test_check_derivatives_flags_corrupted_jacobian(straight_scenario):
    trans_cfg = TranscriptionConfig(n_intervals=3, degree=2)
    problem = transcribe(straight_scenario, trans_cfg)
    x0 = initial_guess(straight_scenario, trans_cfg, problem)

    good_jac = problem.jacobian

    def bad_jac(x):
        jac = good_jac(x).tolil()
        jac[5, 3] = jac[5, 3] + 0.5    # poison one defect-row entry
        return jac.tocsr()

    problem.jacobian = bad_jac
    report = check_derivatives(problem, x0)
    assert report.max_relative_error > 1e-3
    assert report.worst_block.startswith("defect")


def test_fd_mode_rejects_broken_derivatives(straight_scenario):
    trans_cfg = TranscriptionConfig(n_intervals=3, degree=2)
    problem = transcribe(straight_scenario, trans_cfg)
    x0 = initial_guess(straight_scenario, trans_cfg, problem)
    good_jac = problem.jacobian

    def bad_jac(x):
        jac = good_jac(x).tolil()
        jac[5, 3] = jac[5, 3] + 0.5
        return jac.tocsr()

    problem.jacobian = bad_jac
    _, outcome = solve(problem, x0, SolverConfig(
        derivative_mode="finite-difference-check", max_iter=5))
    assert outcome.status == "numerical-failure"
    assert "derivative check failed" in outcome.message
