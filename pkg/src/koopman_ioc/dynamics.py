"""Discrete-time dynamical systems, the pendulum benchmark, and trajectory data.

State/input conventions: states are length-``n`` float vectors, inputs length-``m``.
A trajectory over horizon ``T`` stores ``T+1`` states and ``T+1`` inputs; the last
input is carried so stage costs exist at every index, but it never enters the
dynamics rollout.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Sequence, Tuple

import numpy as np

Array = np.ndarray


@dataclass(frozen=True)
class SystemSpec:
    """A discrete-time system x_{t+1} = step(x_t, u_t) with analytic Jacobians.

    Attributes
    ----------
    n, m : int
        State and input dimension.
    step : callable
        (state, input) -> next state, length n.
    state_jacobian : callable
        (state, input) -> d(step)/dx, shape (n, n).
    input_jacobian : callable
        (state, input) -> d(step)/du, shape (n, m).
    """

    n: int
    m: int
    step: Callable[[Array, Array], Array]
    state_jacobian: Callable[[Array, Array], Array]
    input_jacobian: Callable[[Array, Array], Array]


@dataclass(frozen=True)
class PendulumParams:
    """Physical parameters of the torque-driven pendulum (SI units).

    Defaults: unit mass, 10 m arm, g = 10 m/s^2, 1 ms Euler step.
    """

    mass: float = 1.0
    length: float = 10.0
    gravity: float = 10.0
    dt: float = 1e-3

    def __post_init__(self):
        for name in ("mass", "length", "gravity", "dt"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0.0):
                raise ValueError(f"PendulumParams.{name} must be strictly positive, got {v}")


def pendulum_step(x: Array, u, p: PendulumParams) -> Array:
    """One explicit-Euler step of the pendulum.

    ``x = [angle (rad), angular rate (rad/s)]``, ``u`` = applied torque (N m).
    Continuous dynamics: m l^2 a'' + m g l sin(a) = torque.
    """
    x = np.asarray(x, dtype=float)
    u_arr = np.atleast_1d(np.asarray(u, dtype=float))
    if x.shape != (2,):
        raise ValueError(f"pendulum state must have shape (2,), got {x.shape}")
    if u_arr.shape != (1,):
        raise ValueError(f"pendulum input must be scalar, got shape {u_arr.shape}")
    if not (np.all(np.isfinite(x)) and np.isfinite(u_arr[0])):
        raise ValueError("pendulum_step requires finite state and input")
    angle, rate = x
    accel = (u_arr[0] - p.mass * p.gravity * p.length * np.sin(angle)) / (p.mass * p.length**2)
    return x + p.dt * np.array([rate, accel])


def pendulum_system(p: PendulumParams) -> SystemSpec:
    """SystemSpec wrapper around :func:`pendulum_step` with analytic Jacobians."""

    def step(x, u):
        return pendulum_step(x, u, p)

    def dfdx(x, u):
        angle = float(np.asarray(x, dtype=float)[0])
        return np.array(
            [
                [1.0, p.dt],
                [-p.dt * (p.gravity / p.length) * np.cos(angle), 1.0],
            ]
        )

    def dfdu(x, u):
        return np.array([[0.0], [p.dt / (p.mass * p.length**2)]])

    return SystemSpec(n=2, m=1, step=step, state_jacobian=dfdx, input_jacobian=dfdu)


def linear_system(A: Array, B: Array) -> SystemSpec:
    """SystemSpec for x_{t+1} = A x + B u (constant Jacobians)."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"A must be square, got {A.shape}")
    if B.ndim != 2 or B.shape[0] != A.shape[0]:
        raise ValueError(f"B must be ({A.shape[0]}, m), got {B.shape}")
    n, m = B.shape
    return SystemSpec(
        n=n,
        m=m,
        step=lambda x, u: A @ x + B @ u,
        state_jacobian=lambda x, u: A,
        input_jacobian=lambda x, u: B,
    )


@dataclass
class Trajectory:
    """A state-input sequence x_0..x_T, u_0..u_T.

    ``states`` has shape (T+1, n) and ``inputs`` shape (T+1, m); the final input
    exists so the stage cost is defined at t = T.
    """

    states: Array
    inputs: Array

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        if self.inputs.shape[0] != self.states.shape[0]:
            raise ValueError(
                f"inputs must have T+1 = {self.states.shape[0]} rows, got {self.inputs.shape[0]}"
            )

    @property
    def n(self) -> int:
        return self.states.shape[1]

    @property
    def m(self) -> int:
        return self.inputs.shape[1]

    @property
    def T(self) -> int:
        return self.states.shape[0] - 1


@dataclass
class Segment:
    """A contiguous slice x_{start:end}, u_{start:end} of a trajectory (inclusive)."""

    start: int
    end: int
    states: Array
    inputs: Array

    def __post_init__(self):
        if self.end <= self.start:
            raise ValueError(f"segment needs end > start, got [{self.start}, {self.end}]")
        expected = self.end - self.start + 1
        if self.states.shape[0] != expected or self.inputs.shape[0] != expected:
            raise ValueError(
                f"segment [{self.start}, {self.end}] expects {expected} rows, "
                f"got {self.states.shape[0]} states / {self.inputs.shape[0]} inputs"
            )

    @property
    def steps(self) -> int:
        """Number of transitions covered, end - start."""
        return self.end - self.start

    @property
    def n(self) -> int:
        return self.states.shape[1]

    @property
    def m(self) -> int:
        return self.inputs.shape[1]


Dataset = List[Segment]


def simulate(spec: SystemSpec, x0: Array, inputs: Array) -> Trajectory:
    """Roll the system forward from ``x0`` under ``inputs`` (shape (T+1, m)).

    Only inputs[0..T-1] drive the dynamics; inputs[T] is stored untouched.
    """
    x0 = np.asarray(x0, dtype=float)
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    if x0.shape != (spec.n,):
        raise ValueError(f"x0 must have shape ({spec.n},), got {x0.shape}")
    if inputs.shape[1] != spec.m:
        raise ValueError(f"inputs must have {spec.m} columns, got {inputs.shape[1]}")
    T = inputs.shape[0] - 1
    states = np.empty((T + 1, spec.n))
    states[0] = x0
    for t in range(T):
        states[t + 1] = spec.step(states[t], inputs[t])
    return Trajectory(states=states, inputs=inputs.copy())


def slice_segments(traj: Trajectory, windows: Sequence[Tuple[int, int]]) -> Dataset:
    """Cut ``traj`` into segments at the given (start, end) index pairs.

    Segment arrays are views into the trajectory, so shared entries are
    bit-identical across overlapping windows.
    """
    out: Dataset = []
    for start, end in windows:
        if start < 0 or end > traj.T:
            raise ValueError(f"window ({start}, {end}) outside trajectory horizon 0..{traj.T}")
        out.append(
            Segment(
                start=start,
                end=end,
                states=traj.states[start : end + 1],
                inputs=traj.inputs[start : end + 1],
            )
        )
    return out


# ---------------------------------------------------------------------------
# serialization

def trajectory_to_dict(traj: Trajectory) -> dict:
    return {
        "n": traj.n,
        "m": traj.m,
        "T": traj.T,
        "states": traj.states.tolist(),
        "inputs": traj.inputs.tolist(),
    }


def trajectory_from_dict(d: dict) -> Trajectory:
    traj = Trajectory(states=np.array(d["states"], dtype=float), inputs=np.array(d["inputs"], dtype=float))
    if traj.n != d["n"] or traj.m != d["m"] or traj.T != d["T"]:
        raise ValueError("trajectory dict header does not match array shapes")
    return traj


def save_trajectory_json(traj: Trajectory, path) -> None:
    Path(path).write_text(json.dumps(trajectory_to_dict(traj), indent=2) + "\n")


def load_trajectory_json(path) -> Trajectory:
    return trajectory_from_dict(json.loads(Path(path).read_text()))


def save_trajectory_csv(traj: Trajectory, path) -> None:
    """One row per step: t, x_1..x_n, u_1..u_m. Floats written with repr so the
    round trip is bit-exact."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["t"]
            + [f"x_{i + 1}" for i in range(traj.n)]
            + [f"u_{i + 1}" for i in range(traj.m)]
        )
        for t in range(traj.T + 1):
            writer.writerow(
                [t]
                + [repr(float(v)) for v in traj.states[t]]
                + [repr(float(v)) for v in traj.inputs[t]]
            )


def load_trajectory_csv(path) -> Trajectory:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    n = sum(1 for c in header if c.startswith("x_"))
    m = sum(1 for c in header if c.startswith("u_"))
    states = np.array([[float(v) for v in row[1 : 1 + n]] for row in rows[1:]])
    inputs = np.array([[float(v) for v in row[1 + n : 1 + n + m]] for row in rows[1:]])
    return Trajectory(states=states, inputs=inputs)
