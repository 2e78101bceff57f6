import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fjmpc import QpProblem, QpWorkspace, SolverError, solve_qp
from fjmpc.qp import INFEASIBLE, MAX_ITERATIONS, OPTIMAL, kkt_residuals

from oracles import dual_projected_gradient, random_qp


def _problem(H, g, G, h, lo, up):
    return QpProblem(H, g, G, h, lo, up)


def test_unconstrained_minimum_inside_box():
    p = _problem(np.eye(2), [-0.3, 0.4], np.zeros((0, 2)), [], -1.0, 1.0)
    sol = solve_qp(p)
    assert sol.status == OPTIMAL
    np.testing.assert_allclose(sol.z_star, [0.3, -0.4], atol=1e-8)


def test_clamped_scalar_minimum():
    # (z - 2)^2 up to a constant
    p = _problem([[2.0]], [-4.0], np.zeros((0, 1)), [], 0.0, 1.0)
    assert solve_qp(p).z_star[0] == pytest.approx(1.0, abs=1e-8)
    assert solve_qp(p, polish=True).z_star[0] == 1.0


def test_identity_with_free_optimum_inside_box():
    sol = solve_qp(_problem(np.eye(5), np.zeros(5), np.zeros((0, 5)), [], -1.0, 1.0))
    np.testing.assert_allclose(sol.z_star, 0.0, atol=1e-12)


def test_box_clips_the_minimizer():
    p = _problem(np.eye(2), [-3.0, 3.0], np.zeros((0, 2)), [], 0.0, 1.0)
    sol = solve_qp(p)
    np.testing.assert_allclose(sol.z_star, [1.0, 0.0], atol=1e-8)
    assert sol.objective == pytest.approx(-2.5, abs=1e-8)


def test_single_inequality_active():
    # minimize 0.5|z|^2 - z1 - z2 with z1 + z2 <= 1 -> z = (0.5, 0.5)
    p = _problem(np.eye(2), [-1.0, -1.0], [[1.0, 1.0]], [1.0], 0.0, 5.0)
    sol = solve_qp(p)
    np.testing.assert_allclose(sol.z_star, [0.5, 0.5], atol=1e-7)
    assert sol.duals[0] == pytest.approx(0.5, abs=1e-6)
    stat, feas, comp = kkt_residuals(p, sol.z_star, sol.duals)
    assert max(stat, feas, comp) <= 1e-6


def test_kkt_residuals_of_a_known_point():
    p = _problem(np.eye(1), [-2.0], np.zeros((0, 1)), [], 0.0, 1.0)
    assert kkt_residuals(p, [1.0], []) == (0.0, 0.0, 0.0)
    stat, feas, comp = kkt_residuals(p, [0.5], [])
    assert stat == 0.0 and feas == 0.0 and comp == pytest.approx(0.75)
    assert kkt_residuals(p, [1.5], [])[1] == pytest.approx(0.5)


def test_kkt_residuals_of_the_zero_problem():
    p = _problem(np.zeros((3, 3)), np.zeros(3), np.zeros((0, 3)), [], -np.inf, np.inf)
    assert kkt_residuals(p, np.zeros(3), []) == (0.0, 0.0, 0.0)


def test_problem_validation():
    with pytest.raises(SolverError, match="symmetric"):
        _problem([[1.0, 1.0], [0.0, 1.0]], [0, 0], np.zeros((0, 2)), [], 0, 1)
    with pytest.raises(SolverError, match="box"):
        _problem(np.eye(1), [0.0], np.zeros((0, 1)), [], 1.0, 0.0)


@pytest.mark.parametrize("seed", range(25))
def test_matches_dual_oracle(seed):
    rng = np.random.default_rng(seed)
    H, g, G, h, lo, up = random_qp(rng)
    p = _problem(H, g, G, h, lo, up)
    sol = solve_qp(p, tol_p=1e-9, tol_d=1e-9, polish=True)
    assert sol.status == OPTIMAL
    _, f_star, _ = dual_projected_gradient(H, g, G, h, lo, up)
    assert abs(sol.objective - f_star) <= 1e-6
    assert max(kkt_residuals(p, sol.z_star, sol.duals)) <= 1e-6


def test_detects_infeasible_constraints():
    # z in [0, 1]^2 but z1 + z2 <= -1
    p = _problem(np.eye(2), [0.0, 0.0], [[1.0, 1.0]], [-1.0], 0.0, 1.0)
    sol = solve_qp(p, max_iter=20_000)
    assert sol.status == INFEASIBLE


def test_iteration_cap_returns_best_iterate_in_box():
    rng = np.random.default_rng(3)
    H, g, G, h, lo, up = random_qp(rng, d=8, m=12)
    p = _problem(H, g, G, h, lo, up)
    sol = solve_qp(p, max_iter=3, tol_p=1e-14, tol_d=1e-14)
    assert sol.status == MAX_ITERATIONS
    assert sol.iterations == 3
    assert np.all(sol.z_star >= lo) and np.all(sol.z_star <= up)


def test_callback_sees_every_check():
    p = _problem(np.diag([1.0, 10.0]), [1.0, -1.0], [[1.0, 2.0]], [0.5], -1.0, 1.0)
    seen = []
    sol = solve_qp(p, check_every=1, callback=lambda it, z, f: seen.append((it, f)))
    assert [it for it, _ in seen] == list(range(1, sol.iterations + 1))
    assert all(np.isfinite(f) for _, f in seen)


@pytest.mark.parametrize("seed", range(5))
def test_best_objective_envelope_is_monotone(seed):
    H, g, G, h, lo, up = random_qp(np.random.default_rng(seed), d=6, m=8)
    values = []
    solve_qp(_problem(H, g, G, h, lo, up), check_every=1, callback=lambda it, z, f: values.append(f))
    envelope = np.minimum.accumulate(values)
    assert np.all(np.diff(envelope) <= 0)
    assert envelope[-1] <= values[0]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 100.0))
def test_cost_scaling_leaves_the_minimizer(seed, scale):
    H, g, G, h, lo, up = random_qp(np.random.default_rng(seed))
    a = solve_qp(_problem(H, g, G, h, lo, up), tol_p=1e-10, tol_d=1e-10, polish=True)
    b = solve_qp(_problem(scale * H, scale * g, G, h, lo, up), tol_p=1e-10, tol_d=1e-10 * scale,
                 polish=True)
    np.testing.assert_allclose(a.z_star, b.z_star, atol=1e-8)


def test_warm_start_from_the_solution_is_fast():
    H, g, G, h, lo, up = random_qp(np.random.default_rng(7), d=8, m=10)
    p = _problem(H, g, G, h, lo, up)
    cold = solve_qp(p, tol_p=1e-9, tol_d=1e-9)
    warm = solve_qp(p, tol_p=1e-9, tol_d=1e-9,
                    warm_start=(cold.z_star, cold.duals, cold.box_duals))
    assert warm.status == OPTIMAL
    assert warm.iterations <= cold.iterations
    np.testing.assert_allclose(warm.z_star, cold.z_star, atol=1e-6)


def test_workspace_reuse_across_linear_terms():
    rng = np.random.default_rng(11)
    H, g, G, h, lo, up = random_qp(rng, d=6, m=5)
    H.setflags(write=False)
    ws = QpWorkspace(H, G)
    for _ in range(5):
        g2 = rng.standard_normal(6)
        p = _problem(H, g2, G, h, lo, up)
        assert ws.matches(p)
        shared = solve_qp(p, workspace=ws, polish=True, tol_p=1e-9, tol_d=1e-9)
        fresh = solve_qp(p, polish=True, tol_p=1e-9, tol_d=1e-9)
        np.testing.assert_allclose(shared.z_star, fresh.z_star, atol=1e-6)


def test_solution_respects_box_exactly():
    for seed in range(10):
        H, g, G, h, lo, up = random_qp(np.random.default_rng(100 + seed))
        sol = solve_qp(_problem(H, g, G, h, lo, up))
        assert np.all(sol.z_star >= lo) and np.all(sol.z_star <= up)
