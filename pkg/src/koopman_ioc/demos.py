"""Demonstration generation: forward optimal control for a known weighted objective.

The stage cost is w' phi(x_t, u_t) summed over t = 0..T. Solving the forward
problem to tight stationarity gives trajectories whose segments genuinely
satisfy the optimality conditions the inverse solver relies on, with the
violation measured by the same costate recursion.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Tuple

import numpy as np

from .dynamics import Array, SystemSpec, Trajectory

__all__ = [
    "FeatureSpec",
    "OcConfig",
    "OcSolution",
    "OcSolverError",
    "pendulum_features",
    "pendulum_feature_spec",
    "eval_objective",
    "costates",
    "input_gradient",
    "pmp_residual",
    "solve_oc",
]


@dataclass(frozen=True)
class FeatureSpec:
    """Feature basis phi(x, u) with analytic Jacobians and the goal it encodes.

    ``eval`` maps (x, u) to a length-r vector; ``x_jacobian`` returns (r, n),
    ``u_jacobian`` returns (r, m).
    """

    r: int
    eval: Callable[[Array, Array], Array]
    x_jacobian: Callable[[Array, Array], Array]
    u_jacobian: Callable[[Array, Array], Array]
    goal: Array


def pendulum_features(x: Array, u, goal: Array) -> Tuple[Array, Array, Array]:
    """Quadratic distance-to-goal features for the pendulum.

    phi = [(angle - goal_angle)^2, (rate - goal_rate)^2, ||u||^2].
    Returns (phi, dphi/dx, dphi/du).
    """
    x = np.asarray(x, dtype=float)
    u_arr = np.atleast_1d(np.asarray(u, dtype=float))
    goal = np.asarray(goal, dtype=float)
    da = x[0] - goal[0]
    dr = x[1] - goal[1]
    phi = np.array([da**2, dr**2, float(u_arr @ u_arr)])
    dphi_dx = np.array([[2.0 * da, 0.0], [0.0, 2.0 * dr], [0.0, 0.0]])
    dphi_du = np.array([[0.0], [0.0], [2.0 * u_arr[0]]])
    return phi, dphi_dx, dphi_du


def pendulum_feature_spec(goal=(np.pi, 0.0)) -> FeatureSpec:
    goal = np.asarray(goal, dtype=float)
    return FeatureSpec(
        r=3,
        eval=lambda x, u: pendulum_features(x, u, goal)[0],
        x_jacobian=lambda x, u: pendulum_features(x, u, goal)[1],
        u_jacobian=lambda x, u: pendulum_features(x, u, goal)[2],
        goal=goal,
    )


def quadratic_feature_spec(n: int, m: int, goal: Array) -> FeatureSpec:
    """Per-coordinate squared state deviation plus squared input norm.

    r = n + 1 features; the pendulum basis is the n = 2, m = 1 case.
    """
    goal = np.asarray(goal, dtype=float)

    def _eval(x, u):
        x = np.asarray(x, dtype=float)
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return np.concatenate([(x - goal) ** 2, [float(u @ u)]])

    def _jx(x, u):
        x = np.asarray(x, dtype=float)
        J = np.zeros((n + 1, n))
        J[:n, :n] = np.diag(2.0 * (x - goal))
        return J

    def _ju(x, u):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        J = np.zeros((n + 1, m))
        J[n, :] = 2.0 * u
        return J

    return FeatureSpec(r=n + 1, eval=_eval, x_jacobian=_jx, u_jacobian=_ju, goal=goal)


def eval_objective(traj: Trajectory, feat: FeatureSpec, weights: Array) -> float:
    """Sum of w' phi(x_t, u_t) over t = 0..T."""
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (feat.r,):
        raise ValueError(f"weights must have shape ({feat.r},), got {weights.shape}")
    total = 0.0
    for t in range(traj.T + 1):
        total += float(weights @ feat.eval(traj.states[t], traj.inputs[t]))
    return total


def costates(traj: Trajectory, spec: SystemSpec, feat: FeatureSpec, weights: Array) -> Array:
    """Backward costate recursion, shape (T+1, n).

    lam[T] = dphi/dx_T' w, then
    lam[t] = dphi/dx_t' w + df/dx_t' lam[t+1] for t = T-1..0.
    """
    weights = np.asarray(weights, dtype=float)
    T = traj.T
    lam = np.empty((T + 1, traj.n))
    lam[T] = feat.x_jacobian(traj.states[T], traj.inputs[T]).T @ weights
    for t in range(T - 1, -1, -1):
        x, u = traj.states[t], traj.inputs[t]
        lam[t] = feat.x_jacobian(x, u).T @ weights + spec.state_jacobian(x, u).T @ lam[t + 1]
    return lam


def input_gradient(traj: Trajectory, spec: SystemSpec, feat: FeatureSpec, weights: Array) -> Array:
    """Gradient of the objective w.r.t. u_0..u_{T-1}, shape (T, m).

    By the adjoint recursion this equals the per-step stationarity defect
    dphi/du_t' w + df/du_t' lam[t+1].
    """
    weights = np.asarray(weights, dtype=float)
    lam = costates(traj, spec, feat, weights)
    g = np.empty((traj.T, traj.m))
    for t in range(traj.T):
        x, u = traj.states[t], traj.inputs[t]
        g[t] = feat.u_jacobian(x, u).T @ weights + spec.input_jacobian(x, u).T @ lam[t + 1]
    return g


def pmp_residual(traj: Trajectory, spec: SystemSpec, feat: FeatureSpec, weights: Array) -> float:
    """Worst per-step violation of input stationarity along the trajectory."""
    if traj.T == 0:
        return 0.0
    g = input_gradient(traj, spec, feat, weights)
    return float(np.max(np.linalg.norm(g, axis=1)))


@dataclass(frozen=True)
class OcConfig:
    grad_tol: float = 1e-9
    pmp_tol: float = 1e-8
    max_iters: int = 20000
    step_init: float = 0.25
    step_shrink: float = 0.5
    armijo: float = 1e-4
    min_step: float = 1e-18


@dataclass
class OcSolution:
    """A converged forward solve: trajectory, its weights, and optimality evidence."""

    trajectory: Trajectory
    weights: Array
    objective: float
    grad_norm: float
    pmp_residual: float
    iterations: int


class OcSolverError(RuntimeError):
    def __init__(self, message: str, grad_norm: float, iterations: int):
        super().__init__(f"{message} (grad_norm={grad_norm:.3e} after {iterations} iterations)")
        self.grad_norm = grad_norm
        self.iterations = iterations


def _rollout(spec: SystemSpec, x0: Array, u_dec: Array) -> Trajectory:
    # u_dec holds u_0..u_{T-1}; u_T is pinned to zero (free of dynamics, and
    # zero is stationary for any even-in-u stage cost).
    T = u_dec.shape[0]
    inputs = np.zeros((T + 1, u_dec.shape[1]))
    inputs[:T] = u_dec
    states = np.empty((T + 1, spec.n))
    states[0] = x0
    for t in range(T):
        states[t + 1] = spec.step(states[t], inputs[t])
    return Trajectory(states=states, inputs=inputs)


def solve_oc(
    spec: SystemSpec,
    feat: FeatureSpec,
    weights: Array,
    x0: Array,
    T: int,
    cfg: OcConfig = OcConfig(),
) -> OcSolution:
    """Minimize the weighted feature objective over the input sequence.

    Gradient descent with backtracking (Armijo) line search on the stacked
    inputs, gradients from the costate recursion, zero initialization.
    Deterministic for fixed arguments. Raises :class:`OcSolverError` when the
    stationarity tolerance is not met within ``cfg.max_iters``.
    """
    weights = np.asarray(weights, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    if T < 2:
        raise ValueError(f"solve_oc needs T >= 2, got {T}")
    if weights.shape != (feat.r,):
        raise ValueError(f"weights must have shape ({feat.r},), got {weights.shape}")
    if np.all(weights == 0.0):
        raise ValueError("weights must not be all zero")
    if np.any(weights < 0.0):
        warnings.warn("solve_oc called with negative weight components; the problem may be unbounded")

    u = np.zeros((T, spec.m))
    traj = _rollout(spec, x0, u)
    J = eval_objective(traj, feat, weights)
    g = input_gradient(traj, spec, feat, weights)
    prev_u = None
    prev_g = None
    iterations = 0
    grad_inf = float(np.max(np.abs(g)))

    for iterations in range(1, cfg.max_iters + 1):
        if not np.isfinite(J) or not np.isfinite(grad_inf):
            raise OcSolverError("non-finite objective during rollout", grad_inf, iterations)
        if grad_inf <= cfg.grad_tol:
            break

        # Barzilai-Borwein scaling of the gradient step; the Armijo check below
        # keeps the iteration monotone.
        step = cfg.step_init
        if prev_u is not None:
            s = u - prev_u
            y = g - prev_g
            sy = float(np.sum(s * y))
            if sy > 0.0:
                step = float(np.sum(s * s)) / sy
            step = min(max(step, 1e-12), 1e6)

        g_sq = float(np.sum(g * g))
        alpha = step
        accepted = False
        while alpha >= cfg.min_step:
            u_try = u - alpha * g
            # overflow during a trial rollout is handled by the finiteness check
            with np.errstate(over="ignore", invalid="ignore"):
                traj_try = _rollout(spec, x0, u_try)
                J_try = eval_objective(traj_try, feat, weights)
            if np.isfinite(J_try) and J_try <= J - cfg.armijo * alpha * g_sq:
                prev_u, prev_g = u, g
                u, traj, J = u_try, traj_try, J_try
                with np.errstate(over="ignore", invalid="ignore"):
                    g = input_gradient(traj, spec, feat, weights)
                grad_inf = float(np.max(np.abs(g)))
                accepted = True
                break
            alpha *= cfg.step_shrink
        if not accepted:
            raise OcSolverError("line search stalled before reaching tolerance", grad_inf, iterations)
    else:
        raise OcSolverError("gradient tolerance not reached", grad_inf, cfg.max_iters)

    res = pmp_residual(traj, spec, feat, weights)
    if res > cfg.pmp_tol:
        raise OcSolverError(f"stationarity residual {res:.3e} above pmp_tol", grad_inf, iterations)
    return OcSolution(
        trajectory=traj,
        weights=weights.copy(),
        objective=J,
        grad_norm=float(np.linalg.norm(input_gradient(traj, spec, feat, weights))),
        pmp_residual=res,
        iterations=iterations,
    )
