"""Observable functions psi(x, theta) lifting states for the linear-operator fit.

Two implementations: the identity map (parameter-free, exact oracle for tests
on systems that are already linear) and a trainable multilayer perceptron with
exact state Jacobians and parameter gradients, computed by the kernels in
:mod:`koopman_ioc._kernels`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from . import _kernels
from .dynamics import Array


class ObservableFn:
    """Interface: forward map, exact state Jacobian, exact parameter VJP.

    ``theta`` is a flat float64 vector (empty for fixed observables). Instances
    are treated as immutable; training produces new instances via
    :meth:`with_theta`.
    """

    n: int
    N: int
    theta: Array

    @property
    def param_count(self) -> int:
        return self.theta.size

    def forward(self, x: Array) -> Array:
        return self.forward_batch(np.asarray(x, dtype=float).reshape(-1, 1))[:, 0]

    def forward_batch(self, X: Array) -> Array:
        """(n, B) -> (N, B)."""
        raise NotImplementedError

    def state_jacobian(self, x: Array) -> Array:
        return self.state_jacobian_batch(np.asarray(x, dtype=float).reshape(-1, 1))[0]

    def state_jacobian_batch(self, X: Array) -> Array:
        """(n, B) -> (B, N, n)."""
        raise NotImplementedError

    def param_gradient(self, x: Array, sensitivity: Array) -> Array:
        """Gradient of sensitivity' psi(x, theta) w.r.t. theta, shape (q,)."""
        return self.param_gradient_batch(
            np.asarray(x, dtype=float).reshape(-1, 1),
            np.asarray(sensitivity, dtype=float).reshape(-1, 1),
        )

    def param_gradient_batch(self, X: Array, S: Array) -> Array:
        """Sum over columns of the per-sample parameter VJPs."""
        raise NotImplementedError

    def with_theta(self, theta: Array) -> "ObservableFn":
        raise NotImplementedError


class IdentityObservable(ObservableFn):
    """psi(x) = x; N = n, no parameters."""

    def __init__(self, n: int):
        if n < 1:
            raise ValueError(f"state dimension must be >= 1, got {n}")
        self.n = n
        self.N = n
        self.theta = np.zeros(0)

    def forward_batch(self, X: Array) -> Array:
        return np.asarray(X, dtype=float).copy()

    def state_jacobian_batch(self, X: Array) -> Array:
        B = np.asarray(X).shape[1]
        return np.broadcast_to(np.eye(self.n), (B, self.n, self.n)).copy()

    def param_gradient_batch(self, X: Array, S: Array) -> Array:
        return np.zeros(0)

    def with_theta(self, theta: Array) -> "IdentityObservable":
        if np.asarray(theta).size != 0:
            raise ValueError("identity observable has no parameters")
        return self


def identity_observable(n: int) -> IdentityObservable:
    return IdentityObservable(n)


@dataclass(frozen=True)
class MlpConfig:
    """Architecture and initialization of the observable network.

    ``hidden`` holds the hidden-layer widths (at least one layer), tanh
    activation throughout the hidden stack, affine output of size
    ``output_dim``. Hidden weights are seeded normal draws scaled by
    ``init_scale / sqrt(fan_in)``; biases start at zero. When
    ``readout_scale`` is set, the output layer uses that per-entry scale with
    no fan-in normalization (a raw random-features read-out), so wider hidden
    banks carry proportionally more energy into the lifted space.
    """

    input_dim: int
    output_dim: int
    hidden: Tuple[int, ...] = (64,)
    activation: str = "tanh"
    seed: int = 0
    init_scale: float = 1.0
    readout_scale: Optional[float] = None

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("input_dim and output_dim must be >= 1")
        if len(self.hidden) < 1 or any(h < 1 for h in self.hidden):
            raise ValueError(f"need at least one hidden layer of positive width, got {self.hidden}")
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r} (only 'tanh')")

    @property
    def layer_shapes(self) -> Array:
        dims = (self.input_dim,) + tuple(self.hidden) + (self.output_dim,)
        return np.array([[dims[k + 1], dims[k]] for k in range(len(dims) - 1)], dtype=np.int64)


class MlpObservable(ObservableFn):
    def __init__(self, cfg: MlpConfig, theta: Optional[Array] = None):
        self.cfg = cfg
        self.n = cfg.input_dim
        self.N = cfg.output_dim
        self._shapes = cfg.layer_shapes
        if theta is None:
            theta = _init_theta(cfg, self._shapes)
        theta = np.ascontiguousarray(theta, dtype=float)
        if theta.size != _kernels.param_count(self._shapes):
            raise ValueError(
                f"theta has {theta.size} entries, architecture needs {_kernels.param_count(self._shapes)}"
            )
        self.theta = theta

    def forward_batch(self, X: Array) -> Array:
        X = np.ascontiguousarray(np.atleast_2d(X), dtype=float)
        if X.shape[0] != self.n:
            raise ValueError(f"expected ({self.n}, B) input, got {X.shape}")
        return _kernels.mlp_forward(self.theta, self._shapes, X)

    def state_jacobian_batch(self, X: Array) -> Array:
        X = np.ascontiguousarray(np.atleast_2d(X), dtype=float)
        return _kernels.mlp_jacobian_batch(self.theta, self._shapes, X)

    def param_gradient_batch(self, X: Array, S: Array) -> Array:
        X = np.ascontiguousarray(np.atleast_2d(X), dtype=float)
        S = np.ascontiguousarray(np.atleast_2d(S), dtype=float)
        if S.shape != (self.N, X.shape[1]):
            raise ValueError(f"sensitivity must have shape ({self.N}, {X.shape[1]}), got {S.shape}")
        return _kernels.mlp_vjp_theta(self.theta, self._shapes, X, S)

    def with_theta(self, theta: Array) -> "MlpObservable":
        return MlpObservable(self.cfg, theta)


def _init_theta(cfg: MlpConfig, shapes: Array) -> Array:
    rng = np.random.default_rng(cfg.seed)
    parts = []
    last = len(shapes) - 1
    for k, (out_dim, in_dim) in enumerate(shapes):
        if k == last and cfg.readout_scale is not None:
            scale = cfg.readout_scale
        else:
            scale = cfg.init_scale / np.sqrt(in_dim)
        parts.append(rng.normal(size=(out_dim, in_dim)).ravel() * scale)
        parts.append(np.zeros(out_dim))
    return np.concatenate(parts)


def mlp_observable(cfg: MlpConfig) -> MlpObservable:
    """Build the network observable; identical configs give identical parameters."""
    return MlpObservable(cfg)


def empirical_lipschitz(obs: ObservableFn, low, high, samples: int, seed: int = 0) -> float:
    """Largest ||psi(x) - psi(y)|| / ||x - y|| over sampled point pairs in a box.

    The sample stream is prefix-stable in ``samples`` for a fixed seed, so the
    estimate is nondecreasing as the budget grows.
    """
    if samples < 2:
        raise ValueError(f"need at least 2 samples, got {samples}")
    low = np.asarray(low, dtype=float)
    high = np.asarray(high, dtype=float)
    if low.shape != (obs.n,) or high.shape != (obs.n,):
        raise ValueError(f"region bounds must have shape ({obs.n},)")
    if not np.any(high > low):
        raise ValueError("degenerate region: no extent in any coordinate")
    rng = np.random.default_rng(seed)
    pts = low + (high - low) * rng.random((samples, obs.n))
    vals = obs.forward_batch(pts.T).T
    best = 0.0
    for i in range(samples - 1):
        dx = np.linalg.norm(pts[i + 1 :] - pts[i], axis=1)
        dv = np.linalg.norm(vals[i + 1 :] - vals[i], axis=1)
        mask = dx > 0.0
        if np.any(mask):
            best = max(best, float(np.max(dv[mask] / dx[mask])))
    return best


# ---------------------------------------------------------------------------
# checkpoints

def observable_to_dict(obs: ObservableFn) -> dict:
    if isinstance(obs, IdentityObservable):
        return {"layers": [], "activation": "identity", "seed": None, "n": obs.n}
    if not isinstance(obs, MlpObservable):
        raise TypeError(f"cannot checkpoint observable of type {type(obs).__name__}")
    layers = []
    for W, b in _kernels.unpack_params(obs.theta, obs._shapes):
        layers.append(
            {"rows": int(W.shape[0]), "cols": int(W.shape[1]), "w": W.ravel().tolist(), "b": b.tolist()}
        )
    return {"layers": layers, "activation": obs.cfg.activation, "seed": obs.cfg.seed}


def observable_from_dict(d: dict) -> ObservableFn:
    if d.get("activation") == "identity":
        return IdentityObservable(int(d["n"]))
    layers = d["layers"]
    cfg = MlpConfig(
        input_dim=int(layers[0]["cols"]),
        output_dim=int(layers[-1]["rows"]),
        hidden=tuple(int(l["rows"]) for l in layers[:-1]),
        activation=d["activation"],
        seed=0 if d.get("seed") is None else int(d["seed"]),
    )
    theta = np.concatenate([np.concatenate([np.asarray(l["w"], dtype=float), np.asarray(l["b"], dtype=float)]) for l in layers])
    return MlpObservable(cfg, theta)


def save_observable(obs: ObservableFn, path) -> None:
    Path(path).write_text(json.dumps(observable_to_dict(obs)) + "\n")


def load_observable(path) -> ObservableFn:
    return observable_from_dict(json.loads(Path(path).read_text()))
