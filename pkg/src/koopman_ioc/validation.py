"""Self-contained oracle and property checks, runnable from the CLI.

Each check returns (name, passed, detail); the runner prints one line per
check. These mirror the oracle tests in the test suite so an installed package
can be smoke-verified without pytest.
"""

from __future__ import annotations

from typing import Callable, List, Tuple

import numpy as np

from . import numdiff
from .demos import eval_objective, input_gradient
from .dynamics import (
    PendulumParams,
    Trajectory,
    linear_system,
    pendulum_system,
    simulate,
    slice_segments,
)
from .harness import ExperimentConfig, make_dataset, train_dkr
from .ioc import assemble_pmp, solve_weights
from .koopman import (
    build_matrices,
    concat_matrices,
    dkr_max_recon_error,
    fit_model,
    solve_C,
    solve_K,
    update_C,
    update_K,
)
from .observables import MlpConfig, identity_observable, mlp_observable

Check = Tuple[str, bool, str]


def _check_pendulum_jacobians() -> Check:
    p = PendulumParams(mass=1.0, length=1.0, gravity=10.0, dt=0.05)
    spec = pendulum_system(p)
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        x = rng.normal(scale=2.0, size=2)
        u = rng.normal(scale=2.0, size=1)
        fd_x = numdiff.central_jacobian(lambda xx: spec.step(xx, u), x)
        fd_u = numdiff.central_jacobian(lambda uu: spec.step(x, uu), u)
        worst = max(worst, numdiff.relative_error(spec.state_jacobian(x, u), fd_x))
        worst = max(worst, numdiff.relative_error(spec.input_jacobian(x, u), fd_u))
    return ("pendulum jacobians vs finite differences", worst < 1e-5, f"max rel err {worst:.2e}")


def _check_mlp_derivatives() -> Check:
    obs = mlp_observable(MlpConfig(input_dim=2, output_dim=5, hidden=(8, 6), seed=11))
    rng = np.random.default_rng(4)
    worst_j = 0.0
    worst_g = 0.0
    for _ in range(10):
        x = rng.normal(size=2)
        s = rng.normal(size=5)
        fd_j = numdiff.central_jacobian(obs.forward, x)
        worst_j = max(worst_j, numdiff.relative_error(obs.state_jacobian(x), fd_j))
        fd_g = numdiff.central_gradient(
            lambda th: float(s @ obs.with_theta(th).forward(x)), obs.theta
        )
        worst_g = max(worst_g, numdiff.relative_error(obs.param_gradient(x, s), fd_g))
    ok = worst_j < 1e-5 and worst_g < 1e-4
    return ("network derivatives vs finite differences", ok, f"jac {worst_j:.2e}, grad {worst_g:.2e}")


def _check_adjoint_gradient() -> Check:
    cfg = ExperimentConfig()
    spec, feat = cfg.system(), cfg.features()
    w = np.asarray(cfg.omega_true, dtype=float)
    rng = np.random.default_rng(5)
    inputs = np.vstack([rng.normal(scale=0.5, size=(6, 1)), np.zeros((1, 1))])
    traj = simulate(spec, np.array([0.3, -0.2]), inputs)
    g = input_gradient(traj, spec, feat, w)

    def obj(u_flat):
        u = np.vstack([u_flat.reshape(6, 1), np.zeros((1, 1))])
        return eval_objective(simulate(spec, np.array([0.3, -0.2]), u), feat, w)

    fd = numdiff.central_gradient(obj, inputs[:6].ravel())
    err = numdiff.relative_error(g.ravel(), fd)
    return ("adjoint trajectory gradient vs finite differences", err < 1e-4, f"rel err {err:.2e}")


def _check_linear_exactness() -> Check:
    rng = np.random.default_rng(6)
    A = np.array([[0.9, 0.12], [-0.08, 0.85]])
    B = np.array([[0.3], [0.7]])
    spec = linear_system(A, B)
    inputs = rng.normal(size=(25, 1))
    traj = simulate(spec, rng.normal(size=2), inputs)
    seg = slice_segments(traj, [(0, traj.T)])[0]
    dm = build_matrices(seg, identity_observable(2))
    K = solve_K(dm, ridge=0.0)
    C = solve_C(dm)
    err = max(np.linalg.norm(K - np.hstack([A, B])), np.linalg.norm(C - np.eye(2)))
    return ("linear system exact recovery", err < 1e-8, f"max err {err:.2e}")


def _check_recursive_equals_batch() -> Check:
    rng = np.random.default_rng(7)
    obs = identity_observable(2)
    segs = []
    for _ in range(3):
        traj = Trajectory(states=rng.normal(size=(7, 2)), inputs=rng.normal(size=(7, 1)))
        segs.append(slice_segments(traj, [(0, 6)])[0])
    model = fit_model(build_matrices(segs[0], obs), ridge=0.0)
    for seg in segs[1:]:
        dm = build_matrices(seg, obs)
        model = update_K(model, dm)
        model = update_C(model, dm)
    dm_all = concat_matrices(segs, obs)
    K_batch = solve_K(dm_all, ridge=0.0)
    C_batch = solve_C(dm_all)
    rel_K = np.linalg.norm(model.K - K_batch) / np.linalg.norm(K_batch)
    rel_C = np.linalg.norm(model.C - C_batch) / max(np.linalg.norm(C_batch), 1e-30)
    ok = rel_K < 1e-6 and rel_C < 1e-6
    return ("recursive updates equal batch solves", ok, f"K {rel_K:.2e}, C {rel_C:.2e}")


def _check_oracle_recovery() -> Check:
    cfg = ExperimentConfig()
    demo, _ = make_dataset(cfg)
    seg = slice_segments(demo.trajectory, [(0, cfg.T)])[0]
    system = assemble_pmp(seg, cfg.features(), cfg.system())
    est = solve_weights(system, omega_true=np.asarray(cfg.omega_true))
    ok = est.weight_error is not None and est.weight_error < 1e-4
    return ("weight recovery from true dynamics", ok, f"weight err {est.weight_error:.2e}")


def _check_prediction_bound() -> Check:
    cfg = ExperimentConfig(train_steps=60)
    _, dataset = make_dataset(cfg)
    model, obs, _ = train_dkr(cfg, dataset, seed=0)
    diag = dkr_max_recon_error(model, dataset, obs)
    ok = diag.one_step_error_max <= diag.bound + 1e-9
    return (
        "one-step error within empirical bound",
        ok,
        f"measured {diag.one_step_error_max:.2e} vs bound {diag.bound:.2e}",
    )


ALL_CHECKS: List[Callable[[], Check]] = [
    _check_pendulum_jacobians,
    _check_mlp_derivatives,
    _check_adjoint_gradient,
    _check_linear_exactness,
    _check_recursive_equals_batch,
    _check_oracle_recovery,
    _check_prediction_bound,
]


def run_validation(verbose: bool = True) -> bool:
    all_ok = True
    for check in ALL_CHECKS:
        name, ok, detail = check()
        all_ok = all_ok and ok
        if verbose:
            print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return all_ok
