"""Linear-operator identification on lifted states, with recursive batch updates.

Given segments of a trajectory and an observable psi, the one-step evolution is
fit as psi(x_{t+1}) ~ K [psi(x_t); u_t] together with a reconstruction
x_t ~ C psi(x_t). Both matrices have closed-form least-squares solutions; new
segments fold in through rank-tau updates that reproduce the batch solution on
all accumulated data exactly (same ridge, same Grams). The observable's
parameters are trained separately against the summed prediction and
reconstruction losses while K and C stay frozen.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .dynamics import Array, Segment
from .observables import ObservableFn, empirical_lipschitz

__all__ = [
    "DataMatrices",
    "KoopmanModel",
    "TrainConfig",
    "TrainResult",
    "ReconDiagnostics",
    "SingularGramError",
    "build_matrices",
    "solve_K",
    "solve_C",
    "fit_model",
    "concat_matrices",
    "refit_model",
    "update_K",
    "update_C",
    "loss_K",
    "loss_C",
    "total_loss_and_grad",
    "train_theta",
    "dkr_max_recon_error",
]

DEFAULT_RIDGE = 1e-8


class SingularGramError(np.linalg.LinAlgError):
    pass


@dataclass
class DataMatrices:
    """Time-aligned data columns for one segment.

    ``psi_x`` holds psi at x_{start..end-1}, ``psi_x1`` the same columns shifted
    one step forward, ``U`` the inputs u_{start..end-1}, ``X`` the raw states at
    x_{start..end-1}. All have tau = end - start columns.
    """

    psi_x: Array
    psi_x1: Array
    U: Array
    X: Array

    def __post_init__(self):
        tau = self.psi_x.shape[1]
        for name in ("psi_x1", "U", "X"):
            if getattr(self, name).shape[1] != tau:
                raise ValueError(f"{name} must have {tau} columns like psi_x")
        if self.psi_x1.shape[0] != self.psi_x.shape[0]:
            raise ValueError("psi_x and psi_x1 must have equal row counts")

    @property
    def tau(self) -> int:
        return self.psi_x.shape[1]

    @property
    def Z(self) -> Array:
        """Stacked [psi_x; U], shape (N + m, tau)."""
        return np.vstack([self.psi_x, self.U])


def build_matrices(seg: Segment, obs: ObservableFn) -> DataMatrices:
    if seg.steps < 1:
        raise ValueError("segment must cover at least one transition")
    if seg.n != obs.n:
        raise ValueError(f"segment state dimension {seg.n} != observable input dimension {obs.n}")
    lifted = obs.forward_batch(seg.states.T)
    return DataMatrices(
        psi_x=lifted[:, :-1].copy(),
        psi_x1=lifted[:, 1:].copy(),
        U=seg.inputs[:-1].T.copy(),
        X=seg.states[:-1].T.copy(),
    )


def _gram_solve(cross: Array, gram: Array, ridge: float) -> Array:
    """Solve M @ gram_ridged = cross for M, with symmetric gram."""
    dim = gram.shape[0]
    if ridge < 0.0:
        raise ValueError("ridge must be nonnegative")
    if ridge == 0.0 and np.linalg.matrix_rank(gram) < dim:
        raise SingularGramError(
            f"gram matrix is rank deficient (dim {dim}); pass a positive ridge or add data"
        )
    return np.linalg.solve(gram + ridge * np.eye(dim), cross.T).T


def solve_K(dm: DataMatrices, ridge: float = DEFAULT_RIDGE) -> Array:
    """Closed-form operator fit K = psi_x1 Z' (Z Z' + ridge I)^-1."""
    Z = dm.Z
    return _gram_solve(dm.psi_x1 @ Z.T, Z @ Z.T, ridge)


def solve_C(dm: DataMatrices) -> Array:
    """Closed-form reconstruction C = X pinv(psi_x) (minimum-norm on rank deficiency)."""
    rank = np.linalg.matrix_rank(dm.psi_x)
    if rank < dm.psi_x.shape[0]:
        import warnings

        warnings.warn(
            f"psi_x is rank deficient ({rank} < {dm.psi_x.shape[0]}); using minimum-norm solution"
        )
    return dm.X @ np.linalg.pinv(dm.psi_x)


@dataclass
class KoopmanModel:
    """Operator K = [K_x | K_u], reconstruction C, and accumulated Grams.

    ``G_Z`` and ``G_psi`` are the raw sums of Z Z' and psi_x psi_x' over the
    incorporated batches; the ridge is added at every inversion, which keeps
    the recursive updates exactly equal to the batch solves on all data.
    """

    K: Array
    C: Array
    G_Z: Array
    G_psi: Array
    ridge: float = DEFAULT_RIDGE
    batches: int = 1

    @property
    def N(self) -> int:
        return self.K.shape[0]

    @property
    def m(self) -> int:
        return self.K.shape[1] - self.K.shape[0]

    @property
    def n(self) -> int:
        return self.C.shape[0]

    @property
    def Kx(self) -> Array:
        return self.K[:, : self.N]

    @property
    def Ku(self) -> Array:
        return self.K[:, self.N :]


def fit_model(dm: DataMatrices, ridge: float = DEFAULT_RIDGE) -> KoopmanModel:
    """Analytic K and C from the first batch, caching its Grams."""
    Z = dm.Z
    K = solve_K(dm, ridge)
    if ridge == 0.0:
        C = solve_C(dm)
    else:
        C = _gram_solve(dm.X @ dm.psi_x.T, dm.psi_x @ dm.psi_x.T, ridge)
    return KoopmanModel(K=K, C=C, G_Z=Z @ Z.T, G_psi=dm.psi_x @ dm.psi_x.T, ridge=ridge, batches=1)


def concat_matrices(segments: Sequence[Segment], obs: ObservableFn) -> DataMatrices:
    """Column-concatenated data matrices over several segments."""
    dms = [build_matrices(seg, obs) for seg in segments]
    return DataMatrices(
        psi_x=np.hstack([d.psi_x for d in dms]),
        psi_x1=np.hstack([d.psi_x1 for d in dms]),
        U=np.hstack([d.U for d in dms]),
        X=np.hstack([d.X for d in dms]),
    )


def refit_model(segments: Sequence[Segment], obs: ObservableFn, ridge: Optional[float]) -> KoopmanModel:
    """Batch re-solve of K and C over all segments at the observable's current
    parameters.

    ``ridge=None`` selects the minimum-norm pseudoinverse solution for both
    matrices (the rank-deficient tie-break); otherwise the ridge-regularized
    Gram solves are used.
    """
    dm = concat_matrices(segments, obs)
    Z = dm.Z
    if ridge is None:
        K = dm.psi_x1 @ np.linalg.pinv(Z)
        C = dm.X @ np.linalg.pinv(dm.psi_x)
        ridge = 0.0
    else:
        K = solve_K(dm, ridge)
        C = _gram_solve(dm.X @ dm.psi_x.T, dm.psi_x @ dm.psi_x.T, ridge)
    return KoopmanModel(
        K=K,
        C=C,
        G_Z=Z @ Z.T,
        G_psi=dm.psi_x @ dm.psi_x.T,
        ridge=ridge,
        batches=len(segments),
    )


def _rls_step(M: Array, target: Array, data: Array, gram: Array, ridge: float) -> Array:
    """One rank-tau recursive update of M fit against (target, data) columns."""
    dim = gram.shape[0]
    if ridge == 0.0 and np.linalg.matrix_rank(gram) < dim:
        raise SingularGramError("accumulated gram is singular; a positive ridge is required")
    ginv_data = np.linalg.solve(gram + ridge * np.eye(dim), data)
    gain = np.eye(data.shape[1]) + data.T @ ginv_data
    return M + (target - M @ data) @ np.linalg.solve(gain, ginv_data.T)


def update_K(model: KoopmanModel, dm_new: DataMatrices) -> KoopmanModel:
    """Fold a new batch into K; the result matches solve_K on all data seen."""
    Z = dm_new.Z
    if Z.shape[0] != model.G_Z.shape[0]:
        raise ValueError("batch dimensions do not match the model")
    K = _rls_step(model.K, dm_new.psi_x1, Z, model.G_Z, model.ridge)
    return KoopmanModel(
        K=K,
        C=model.C,
        G_Z=model.G_Z + Z @ Z.T,
        G_psi=model.G_psi,
        ridge=model.ridge,
        batches=model.batches + 1,
    )


def update_C(model: KoopmanModel, dm_new: DataMatrices) -> KoopmanModel:
    """Mirror of :func:`update_K` for the reconstruction matrix."""
    P = dm_new.psi_x
    if P.shape[0] != model.G_psi.shape[0]:
        raise ValueError("batch dimensions do not match the model")
    C = _rls_step(model.C, dm_new.X, P, model.G_psi, model.ridge)
    return KoopmanModel(
        K=model.K,
        C=C,
        G_Z=model.G_Z,
        G_psi=model.G_psi + P @ P.T,
        ridge=model.ridge,
        batches=model.batches,
    )


def loss_K(model: KoopmanModel, seg: Segment, obs: ObservableFn) -> float:
    dm = build_matrices(seg, obs)
    E = dm.psi_x1 - model.K @ dm.Z
    return float(np.sum(E * E) / dm.tau)


def loss_C(model: KoopmanModel, seg: Segment, obs: ObservableFn) -> float:
    dm = build_matrices(seg, obs)
    D = dm.X - model.C @ dm.psi_x
    return float(np.sum(D * D) / dm.tau)


# ---------------------------------------------------------------------------
# observable-parameter training


@dataclass(frozen=True)
class TrainConfig:
    max_steps: int = 200
    step_init: float = 0.05
    step_shrink: float = 0.5
    armijo: float = 1e-4
    min_step: float = 1e-16
    lc_target: Optional[float] = None
    check_every: int = 5


@dataclass
class TrainResult:
    observable: ObservableFn
    losses: List[float]
    steps: int
    reached_target: bool


def total_loss_and_grad(model: KoopmanModel, segments: Sequence[Segment], obs: ObservableFn, want_grad: bool = True):
    """Sum over segments of prediction + reconstruction loss, and its theta gradient."""
    Kx, Ku, C = model.Kx, model.Ku, model.C
    total = 0.0
    grad = np.zeros(obs.param_count) if want_grad else None
    for j, seg in enumerate(segments):
        X0 = np.ascontiguousarray(seg.states[:-1].T)
        X1 = np.ascontiguousarray(seg.states[1:].T)
        U = seg.inputs[:-1].T
        tau = X0.shape[1]
        A0 = obs.forward_batch(X0)
        A1 = obs.forward_batch(X1)
        E = A1 - Kx @ A0 - Ku @ U
        D = X0 - C @ A0
        contrib = (np.sum(E * E) + np.sum(D * D)) / tau
        if not np.isfinite(contrib):
            raise FloatingPointError(f"non-finite training loss on segment {j}")
        total += contrib
        if want_grad and obs.param_count:
            grad += obs.param_gradient_batch(X1, (2.0 / tau) * E)
            grad += obs.param_gradient_batch(X0, (-2.0 / tau) * (Kx.T @ E + C.T @ D))
    return total, grad


def _lc_max(model: KoopmanModel, segments: Sequence[Segment], obs: ObservableFn) -> float:
    states = np.vstack([seg.states for seg in segments]).T
    recon = model.C @ obs.forward_batch(np.ascontiguousarray(states))
    return float(np.max(np.linalg.norm(states - recon, axis=0)))


def train_theta(
    model: KoopmanModel,
    segments: Sequence[Segment],
    obs: ObservableFn,
    cfg: TrainConfig = TrainConfig(),
) -> TrainResult:
    """Gradient descent on the summed losses over theta, K and C frozen.

    Backtracking line search guarantees the returned loss never exceeds the
    starting loss. Stops early once the maximum reconstruction error over the
    dataset falls below ``cfg.lc_target`` (when set) or when the line search
    can no longer make progress.
    """
    loss, grad = total_loss_and_grad(model, segments, obs)
    losses = [loss]
    if obs.param_count == 0 or cfg.max_steps == 0:
        reached = cfg.lc_target is not None and _lc_max(model, segments, obs) <= cfg.lc_target
        return TrainResult(observable=obs, losses=losses, steps=0, reached_target=reached)

    theta = obs.theta.copy()
    prev_theta = None
    prev_grad = None
    reached = False
    steps_done = 0
    for it in range(1, cfg.max_steps + 1):
        g_sq = float(grad @ grad)
        if g_sq == 0.0:
            break
        # Barzilai-Borwein step scaling, safeguarded by the Armijo backtracking
        step = cfg.step_init
        if prev_theta is not None:
            s = theta - prev_theta
            y = grad - prev_grad
            sy = float(s @ y)
            if sy > 0.0:
                step = float(s @ s) / sy
            step = min(max(step, 1e-12), 1e6)
        improved = False
        alpha = step
        while alpha >= cfg.min_step:
            cand = obs.with_theta(theta - alpha * grad)
            try:
                loss_try, grad_try = total_loss_and_grad(model, segments, cand)
            except FloatingPointError:
                alpha *= cfg.step_shrink
                continue
            if loss_try <= loss - cfg.armijo * alpha * g_sq:
                prev_theta, prev_grad = theta, grad
                theta = cand.theta
                obs = cand
                loss, grad = loss_try, grad_try
                improved = True
                break
            alpha *= cfg.step_shrink
        losses.append(loss)
        steps_done = it
        if not improved:
            break
        if cfg.lc_target is not None and it % cfg.check_every == 0:
            if _lc_max(model, segments, obs) <= cfg.lc_target:
                reached = True
                break
    if cfg.lc_target is not None and not reached:
        reached = _lc_max(model, segments, obs) <= cfg.lc_target
    return TrainResult(observable=obs, losses=losses, steps=steps_done, reached_target=reached)


# ---------------------------------------------------------------------------
# diagnostics


@dataclass
class ReconDiagnostics:
    """Reconstruction and one-step prediction quality over a dataset.

    ``bound`` is the error ceiling (|C Kx| mu_g + 1) mu_x + |C Ku| mu_u + lc_max
    evaluated with the empirical constants; ``one_step_error_max`` is the
    measured worst prediction error it should dominate.
    """

    lc_max: float
    bound: float
    mu_x: float
    mu_u: float
    mu_g: float
    one_step_error_max: float


def dkr_max_recon_error(
    model: KoopmanModel,
    segments: Sequence[Segment],
    obs: ObservableFn,
    lipschitz_samples: int = 128,
    seed: int = 0,
) -> ReconDiagnostics:
    if not segments:
        raise ValueError("dataset must contain at least one segment")
    lc = _lc_max(model, segments, obs)
    mu_x = 0.0
    mu_u = 0.0
    one_step = 0.0
    for seg in segments:
        mu_x = max(mu_x, float(np.max(np.linalg.norm(np.diff(seg.states, axis=0), axis=1))))
        if seg.inputs.shape[0] > 1:
            mu_u = max(mu_u, float(np.max(np.linalg.norm(np.diff(seg.inputs, axis=0), axis=1))))
        dm = build_matrices(seg, obs)
        pred = model.C @ (model.K @ dm.Z)
        one_step = max(one_step, float(np.max(np.linalg.norm(seg.states[1:].T - pred, axis=0))))
    all_states = np.vstack([seg.states for seg in segments])
    low = all_states.min(axis=0)
    high = all_states.max(axis=0)
    if np.any(high > low):
        mu_g = empirical_lipschitz(obs, low, high, lipschitz_samples, seed=seed)
    else:
        mu_g = 0.0
    ck_x = float(np.linalg.norm(model.C @ model.Kx, 2))
    ck_u = float(np.linalg.norm(model.C @ model.Ku, 2))
    bound = (ck_x * mu_g + 1.0) * mu_x + ck_u * mu_u + lc
    return ReconDiagnostics(
        lc_max=lc, bound=bound, mu_x=mu_x, mu_u=mu_u, mu_g=mu_g, one_step_error_max=one_step
    )


# ---------------------------------------------------------------------------
# checkpoints


def model_to_dict(model: KoopmanModel, observable_ref: Optional[str] = None) -> dict:
    return {
        "K": model.K.tolist(),
        "C": model.C.tolist(),
        "G_Z": model.G_Z.tolist(),
        "G_Psi": model.G_psi.tolist(),
        "ridge": model.ridge,
        "observable": observable_ref,
        "batches_incorporated": model.batches,
    }


def model_from_dict(d: dict) -> KoopmanModel:
    return KoopmanModel(
        K=np.asarray(d["K"], dtype=float),
        C=np.asarray(d["C"], dtype=float),
        G_Z=np.asarray(d["G_Z"], dtype=float),
        G_psi=np.asarray(d["G_Psi"], dtype=float),
        ridge=float(d["ridge"]),
        batches=int(d["batches_incorporated"]),
    )


def save_model(model: KoopmanModel, path, observable_ref: Optional[str] = None) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model, observable_ref)) + "\n")


def load_model(path) -> KoopmanModel:
    return model_from_dict(json.loads(Path(path).read_text()))
