"""Weight recovery from optimal trajectory segments via stationarity conditions.

For a segment [start, end] of an optimal trajectory, the costate recursion and
input stationarity form a homogeneous linear system F nu = 0 in the unknowns
nu = [lambda_{start+1..end}; w; lambda_{end+1}]. F is assembled from feature
Jacobians plus dynamics derivatives taken either from the identified operator
model (d f/dx = C K_x dpsi/dx, d f/du = C K_u) or from the true system's
Jacobians in the same block pattern. The weights are the minimizer of |F nu|^2
under sum(w) = 1, solved through the KKT stationarity system.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .dynamics import Array, Segment, SystemSpec
from .demos import FeatureSpec
from .koopman import KoopmanModel
from .observables import ObservableFn

__all__ = [
    "PmpSystem",
    "WeightEstimate",
    "assemble_pmp",
    "stack_segments",
    "solve_weights",
    "weight_error",
    "estimate_report",
]

DerivSource = Union[SystemSpec, Tuple[KoopmanModel, ObservableFn]]


@dataclass
class PmpSystem:
    """The assembled stationarity system F nu = 0 and its column layout.

    ``lambda_cols`` holds one (interior, terminal) slice pair per segment;
    ``omega_cols`` locates the shared weight block. For single-segment systems
    the constituent blocks are kept for inspection.
    """

    F: Array
    n: int
    m: int
    r: int
    provenance: str
    segment_steps: List[int]
    omega_cols: slice
    lambda_cols: List[Tuple[slice, slice]]
    blocks: Optional[Dict[str, Array]] = None

    @property
    def segments_used(self) -> int:
        return len(self.segment_steps)


def _deriv_transposes(seg: Segment, source: DerivSource):
    """(df/dx)' and (df/du)' evaluated at every segment index 0..steps."""
    if isinstance(source, SystemSpec):
        dfdx_T = [
            source.state_jacobian(seg.states[k], seg.inputs[k]).T for k in range(seg.steps + 1)
        ]
        dfdu_T = [
            source.input_jacobian(seg.states[k], seg.inputs[k]).T for k in range(seg.steps + 1)
        ]
        return dfdx_T, dfdu_T, "true"
    model, obs = source
    CKx_T = (model.C @ model.Kx).T
    CKu_T = (model.C @ model.Ku).T
    jac = obs.state_jacobian_batch(np.ascontiguousarray(seg.states.T))
    dfdx_T = [jac[k].T @ CKx_T for k in range(seg.steps + 1)]
    dfdu_T = [CKu_T for _ in range(seg.steps + 1)]
    return dfdx_T, dfdu_T, "koopman"


def assemble_pmp(seg: Segment, feat: FeatureSpec, source: DerivSource) -> PmpSystem:
    """Build F for one segment.

    Row blocks: for t = start+1..end the costate identity
    lambda_t - (df/dx_t)' lambda_{t+1} - (dphi/dx_t)' w = 0 (the last row keeps
    lambda_{end+1} via the terminal column block), and for t = start..end-1 the
    stationarity (df/du_t)' lambda_{t+1} + (dphi/du_t)' w = 0.
    """
    steps = seg.steps
    if steps < 2:
        raise ValueError("segments must cover at least two transitions to couple costates")
    n, m, r = seg.n, seg.m, feat.r
    dfdx_T, dfdu_T, provenance = _deriv_transposes(seg, source)

    A = np.zeros((steps * n, steps * n))
    V = np.zeros((steps * n, n))
    Phi_x = np.zeros((steps * n, r))
    B = np.zeros((steps * m, steps * n))
    Phi_u = np.zeros((steps * m, r))

    for i in range(steps):
        rows = slice(i * n, (i + 1) * n)
        A[rows, rows] = np.eye(n)
        k = i + 1  # segment index of time start+1+i
        Phi_x[rows] = feat.x_jacobian(seg.states[k], seg.inputs[k]).T
        if i < steps - 1:
            A[rows, (i + 1) * n : (i + 2) * n] = -dfdx_T[k]
        else:
            V[rows] = dfdx_T[steps]
        urows = slice(i * m, (i + 1) * m)
        B[urows, (i) * n : (i + 1) * n] = dfdu_T[i]
        Phi_u[urows] = feat.u_jacobian(seg.states[i], seg.inputs[i]).T

    F = np.block([[A, -Phi_x, -V], [B, Phi_u, np.zeros((steps * m, n))]])
    return PmpSystem(
        F=F,
        n=n,
        m=m,
        r=r,
        provenance=provenance,
        segment_steps=[steps],
        omega_cols=slice(steps * n, steps * n + r),
        lambda_cols=[(slice(0, steps * n), slice(steps * n + r, steps * n + r + n))],
        blocks={"A": A, "B": B, "Phi_x": Phi_x, "Phi_u": Phi_u, "V": V},
    )


def stack_segments(systems: Sequence[PmpSystem]) -> PmpSystem:
    """Couple several segment systems through the shared weight block.

    Each segment keeps its own costate unknowns (block diagonal); the weight
    columns of all systems land in one trailing block. Stacking a single
    system returns it unchanged.
    """
    if not systems:
        raise ValueError("nothing to stack")
    if len(systems) == 1:
        return systems[0]
    first = systems[0]
    for s in systems[1:]:
        if s.r != first.r or s.n != first.n or s.m != first.m:
            raise ValueError("all systems must share feature count and dimensions")
        if s.provenance != first.provenance:
            raise ValueError("cannot mix derivative provenances in one stack")
    rows = sum(s.F.shape[0] for s in systems)
    lam_width = sum(s.F.shape[1] - s.r for s in systems)
    F = np.zeros((rows, lam_width + first.r))
    lambda_cols: List[Tuple[slice, slice]] = []
    steps_all: List[int] = []
    row0 = 0
    col0 = 0
    for s in systems:
        for interior, terminal in s.lambda_cols:
            i_width = interior.stop - interior.start
            t_width = terminal.stop - terminal.start
            F[row0 : row0 + s.F.shape[0], col0 : col0 + i_width] = s.F[:, interior]
            F[row0 : row0 + s.F.shape[0], col0 + i_width : col0 + i_width + t_width] = s.F[:, terminal]
            lambda_cols.append(
                (slice(col0, col0 + i_width), slice(col0 + i_width, col0 + i_width + t_width))
            )
            col0 += i_width + t_width
        F[row0 : row0 + s.F.shape[0], lam_width : lam_width + s.r] = s.F[:, s.omega_cols]
        row0 += s.F.shape[0]
        steps_all.extend(s.segment_steps)
    return PmpSystem(
        F=F,
        n=first.n,
        m=first.m,
        r=first.r,
        provenance=first.provenance,
        segment_steps=steps_all,
        omega_cols=slice(lam_width, lam_width + first.r),
        lambda_cols=lambda_cols,
        blocks=None,
    )


@dataclass
class WeightEstimate:
    """Recovered weights, costates, and fit diagnostics."""

    omega_hat: Array
    omega_rescaled: Array
    costates: List[Array]
    residual: float
    condition_number: float
    provenance: str
    segments_used: int
    weight_error: Optional[float] = None
    kkt_singular: bool = False


def solve_weights(
    system: PmpSystem,
    omega_true: Optional[Array] = None,
    rescale_sum: Optional[float] = None,
) -> WeightEstimate:
    """Minimize |F nu|^2 subject to sum of weight entries = 1.

    Solved exactly through the KKT stationarity system of the equality
    constrained quadratic program. On a singular KKT matrix the minimum-norm
    least-squares solution is returned and flagged. ``omega_rescaled`` is the
    estimate scaled to sum to sum(omega_true) (or ``rescale_sum``) so it can be
    compared against weights reported on the true scale.
    """
    F = system.F
    cols = F.shape[1]
    H = 2.0 * (F.T @ F)
    a = np.zeros(cols)
    a[system.omega_cols] = 1.0
    kkt = np.zeros((cols + 1, cols + 1))
    kkt[:cols, :cols] = H
    kkt[:cols, cols] = a
    kkt[cols, :cols] = a
    rhs = np.zeros(cols + 1)
    rhs[cols] = 1.0

    singular = False
    try:
        sol = np.linalg.solve(kkt, rhs)
        if not np.all(np.isfinite(sol)):
            raise np.linalg.LinAlgError("non-finite KKT solution")
    except np.linalg.LinAlgError:
        singular = True
        sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    nu = sol[:cols]
    omega = nu[system.omega_cols]
    total = float(np.sum(omega))
    if abs(total) < 1e-300:
        raise np.linalg.LinAlgError("weight normalization collapsed; system is degenerate")
    nu = nu / total  # pin the constraint exactly against solver roundoff
    omega = nu[system.omega_cols].copy()

    costates = []
    for (interior, terminal), steps in zip(system.lambda_cols, system.segment_steps):
        lam = np.vstack([nu[interior].reshape(steps, system.n), nu[terminal].reshape(1, system.n)])
        costates.append(lam)

    factor = 1.0
    if omega_true is not None:
        factor = float(np.sum(np.asarray(omega_true, dtype=float)))
    elif rescale_sum is not None:
        factor = float(rescale_sum)
    rescaled = omega * factor
    err = None
    if omega_true is not None:
        err = weight_error(rescaled, omega_true)

    return WeightEstimate(
        omega_hat=omega,
        omega_rescaled=rescaled,
        costates=costates,
        residual=float(np.linalg.norm(F @ nu)),
        condition_number=float(np.linalg.cond(F)),
        provenance=system.provenance,
        segments_used=system.segments_used,
        weight_error=err,
        kkt_singular=singular,
    )


def weight_error(omega_rescaled: Array, omega_true: Array) -> float:
    """Euclidean distance between the rescaled estimate and the true weights."""
    omega_rescaled = np.asarray(omega_rescaled, dtype=float)
    omega_true = np.asarray(omega_true, dtype=float)
    if omega_rescaled.shape != omega_true.shape:
        raise ValueError(f"weight shapes differ: {omega_rescaled.shape} vs {omega_true.shape}")
    return float(np.linalg.norm(omega_rescaled - omega_true))


def estimate_report(est: WeightEstimate) -> dict:
    return {
        "omega_hat": est.omega_hat.tolist(),
        "omega_rescaled": est.omega_rescaled.tolist(),
        "residual": est.residual,
        "weight_error": est.weight_error,
        "segments_used": est.segments_used,
        "provenance": est.provenance,
        "condition_number": est.condition_number,
    }
