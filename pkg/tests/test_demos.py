import numpy as np
import pytest

from koopman_ioc.demos import (
    OcSolverError,
    OcConfig,
    eval_objective,
    input_gradient,
    pendulum_feature_spec,
    pendulum_features,
    pmp_residual,
    solve_oc,
)
from koopman_ioc.dynamics import PendulumParams, Trajectory, pendulum_system, simulate
from koopman_ioc.numdiff import central_gradient, central_jacobian, relative_error

GOAL = np.array([np.pi, 0.0])
DESK = PendulumParams(mass=1.0, length=1.0, gravity=10.0, dt=0.1)


def test_features_vanish_at_goal():
    phi, jx, ju = pendulum_features(GOAL, 0.0, GOAL)
    np.testing.assert_array_equal(phi, np.zeros(3))
    np.testing.assert_array_equal(jx, np.zeros((3, 2)))
    np.testing.assert_array_equal(ju, np.zeros((3, 1)))


def test_features_at_origin():
    phi, jx, _ = pendulum_features(np.zeros(2), 1.0, GOAL)
    np.testing.assert_allclose(phi, [np.pi**2, 0.0, 1.0], atol=1e-14)
    np.testing.assert_allclose(jx[0], [-2 * np.pi, 0.0], atol=1e-14)


def test_feature_jacobians_match_finite_differences():
    feat = pendulum_feature_spec(GOAL)
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(50):
        x = rng.normal(size=2)
        u = rng.normal(size=1)
        worst = max(
            worst,
            relative_error(feat.x_jacobian(x, u), central_jacobian(lambda xx: feat.eval(xx, u), x)),
            relative_error(feat.u_jacobian(x, u), central_jacobian(lambda uu: feat.eval(x, uu), u)),
        )
    assert worst < 1e-5


def test_objective_zero_at_goal_and_zero_weights():
    feat = pendulum_feature_spec(GOAL)
    traj = Trajectory(states=np.tile(GOAL, (5, 1)), inputs=np.zeros((5, 1)))
    assert eval_objective(traj, feat, np.array([2.0, 1.0, 1.0])) == 0.0
    rng = np.random.default_rng(0)
    rand = Trajectory(states=rng.normal(size=(5, 2)), inputs=rng.normal(size=(5, 1)))
    assert eval_objective(rand, feat, np.zeros(3)) == 0.0


def test_objective_single_step():
    feat = pendulum_feature_spec(GOAL)
    traj = Trajectory(states=np.zeros((1, 2)), inputs=np.zeros((1, 1)))
    assert eval_objective(traj, feat, np.array([2.0, 1.0, 1.0])) == pytest.approx(2 * np.pi**2)


def test_objective_weight_length_checked():
    feat = pendulum_feature_spec(GOAL)
    traj = Trajectory(states=np.zeros((2, 2)), inputs=np.zeros((2, 1)))
    with pytest.raises(ValueError):
        eval_objective(traj, feat, np.zeros(2))


def test_adjoint_gradient_matches_finite_differences():
    spec = pendulum_system(DESK)
    feat = pendulum_feature_spec(GOAL)
    w = np.array([2.0, 1.0, 1.0])
    rng = np.random.default_rng(5)
    T = 6
    u_dec = rng.normal(scale=0.5, size=(T, 1))
    inputs = np.vstack([u_dec, np.zeros((1, 1))])
    x0 = np.array([0.3, -0.2])
    traj = simulate(spec, x0, inputs)
    g = input_gradient(traj, spec, feat, w)

    def obj(u_flat):
        u = np.vstack([u_flat.reshape(T, 1), np.zeros((1, 1))])
        return eval_objective(simulate(spec, x0, u), feat, w)

    fd = central_gradient(obj, u_dec.ravel())
    assert relative_error(g.ravel(), fd) < 1e-4


def test_pmp_residual_behaviour():
    spec = pendulum_system(DESK)
    feat = pendulum_feature_spec(GOAL)
    w = np.array([2.0, 1.0, 1.0])
    sol = solve_oc(spec, feat, w, np.zeros(2), 10)
    assert sol.pmp_residual < 1e-8

    bumped = sol.trajectory.inputs.copy()
    bumped[4, 0] += 0.1
    traj_b = simulate(spec, sol.trajectory.states[0], bumped)
    assert pmp_residual(traj_b, spec, feat, w) > sol.pmp_residual

    pinned = Trajectory(states=np.tile(GOAL, (6, 1)), inputs=np.zeros((6, 1)))
    assert pmp_residual(pinned, spec, feat, w) == 0.0


def test_solve_oc_at_goal_stays_put():
    spec = pendulum_system(DESK)
    feat = pendulum_feature_spec(GOAL)
    sol = solve_oc(spec, feat, np.array([2.0, 1.0, 1.0]), GOAL, 5)
    # u = 0 holds the inverted equilibrium exactly (sin(pi) = 0 numerically)
    assert sol.objective < 1e-25
    np.testing.assert_allclose(sol.trajectory.inputs, 0.0, atol=1e-14)
    np.testing.assert_allclose(sol.trajectory.states, np.tile(GOAL, (6, 1)), atol=1e-12)


def test_solve_oc_scaling_invariance():
    spec = pendulum_system(DESK)
    feat = pendulum_feature_spec(GOAL)
    w = np.array([2.0, 1.0, 1.0])
    a = solve_oc(spec, feat, w, np.zeros(2), 8)
    b = solve_oc(spec, feat, 2.0 * w, np.zeros(2), 8)
    np.testing.assert_allclose(a.trajectory.inputs, b.trajectory.inputs, atol=1e-7)
    assert b.objective == pytest.approx(2.0 * a.objective, rel=1e-9)


def test_solve_oc_validation():
    spec = pendulum_system(DESK)
    feat = pendulum_feature_spec(GOAL)
    with pytest.raises(ValueError):
        solve_oc(spec, feat, np.zeros(3), np.zeros(2), 10)
    with pytest.raises(ValueError):
        solve_oc(spec, feat, np.ones(3), np.zeros(2), 1)
    with pytest.warns(UserWarning):
        # a negative component makes the objective unbounded below; the solver
        # must warn, and may legitimately fail to converge
        try:
            solve_oc(spec, feat, np.array([2.0, 1.0, -1e-9]), np.zeros(2), 5, OcConfig(grad_tol=1e-6))
        except OcSolverError:
            pass


def test_solve_oc_deterministic():
    spec = pendulum_system(DESK)
    feat = pendulum_feature_spec(GOAL)
    w = np.array([2.0, 1.0, 1.0])
    a = solve_oc(spec, feat, w, np.zeros(2), 10)
    b = solve_oc(spec, feat, w, np.zeros(2), 10)
    assert np.array_equal(a.trajectory.inputs, b.trajectory.inputs)
    assert a.objective == b.objective
