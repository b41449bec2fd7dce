"""MLP compute kernels: numba-jitted hot paths with a pure-numpy fallback.

Parameters live in one flat float64 vector; ``shapes`` is an int64 array of
(out_dim, in_dim) rows, one per layer, and each layer is stored as
row-major W followed by b. Hidden layers use tanh, the output layer is affine.

Backend selection happens at import time: numba when importable, unless the
environment variable ``KOOPMAN_IOC_PURE_NUMPY`` is set truthy. The active
backend name is exposed as ``BACKEND``; both implementations stay importable
(``*_numpy`` / ``*_numba``) for equivalence tests and benchmarks.
"""

from __future__ import annotations

import os

import numpy as np

ENV_FLAG = "KOOPMAN_IOC_PURE_NUMPY"

try:
    from numba import njit
    from numba.typed import List as _TypedList

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only without numba installed
    NUMBA_AVAILABLE = False


def _pure_numpy_requested() -> bool:
    return os.environ.get(ENV_FLAG, "").strip().lower() in {"1", "true", "yes", "on"}


def unpack_params(theta: np.ndarray, shapes: np.ndarray):
    """Views (W, b) per layer into the flat parameter vector."""
    layers = []
    offset = 0
    for out_dim, in_dim in shapes:
        W = theta[offset : offset + out_dim * in_dim].reshape(out_dim, in_dim)
        offset += out_dim * in_dim
        b = theta[offset : offset + out_dim]
        offset += out_dim
        layers.append((W, b))
    return layers


def param_count(shapes: np.ndarray) -> int:
    return int(sum(o * i + o for o, i in shapes))


# ---------------------------------------------------------------------------
# numpy reference implementations

def mlp_forward_numpy(theta, shapes, X):
    """Observable values for a batch of states. X is (n, B); returns (N, B)."""
    A = X
    layers = unpack_params(theta, shapes)
    for k, (W, b) in enumerate(layers):
        A = W @ A + b[:, None]
        if k < len(layers) - 1:
            A = np.tanh(A)
    return A


def mlp_jacobian_batch_numpy(theta, shapes, X):
    """d(output)/d(input) per sample; X is (n, B), returns (B, N, n)."""
    layers = unpack_params(theta, shapes)
    B = X.shape[1]
    A = X
    M = np.broadcast_to(layers[0][0], (B,) + layers[0][0].shape).copy()  # (B, h1, n)
    A = np.tanh(layers[0][0] @ A + layers[0][1][:, None])
    M *= (1.0 - A.T**2)[:, :, None]
    for k in range(1, len(layers) - 1):
        W, b = layers[k]
        M = np.einsum("oh,bhn->bon", W, M)
        A = np.tanh(W @ A + b[:, None])
        M *= (1.0 - A.T**2)[:, :, None]
    return np.einsum("oh,bhn->bon", layers[-1][0], M)


def mlp_vjp_theta_numpy(theta, shapes, X, S):
    """Sum over the batch of d(psi(x_b))/d(theta)' s_b.

    X is (n, B), S is (N, B); returns the flat (q,) parameter gradient.
    """
    layers = unpack_params(theta, shapes)
    acts = [X]
    A = X
    for k, (W, b) in enumerate(layers[:-1]):
        A = np.tanh(W @ A + b[:, None])
        acts.append(A)
    grad = np.zeros_like(theta)
    g_layers = unpack_params(grad, shapes)
    delta = S
    for k in range(len(layers) - 1, -1, -1):
        gW, gb = g_layers[k]
        gW += delta @ acts[k].T
        gb += delta.sum(axis=1)
        if k > 0:
            delta = (layers[k][0].T @ delta) * (1.0 - acts[k] ** 2)
    return grad


# ---------------------------------------------------------------------------
# numba kernels

if NUMBA_AVAILABLE:

    @njit(cache=True)
    def mlp_forward_numba(theta, shapes, X):
        L = shapes.shape[0]
        A = X
        offset = 0
        for k in range(L):
            out_dim = shapes[k, 0]
            in_dim = shapes[k, 1]
            W = theta[offset : offset + out_dim * in_dim].reshape(out_dim, in_dim)
            offset += out_dim * in_dim
            b = theta[offset : offset + out_dim]
            offset += out_dim
            Z = np.dot(W, A) + b.copy().reshape(out_dim, 1)
            if k < L - 1:
                Z = np.tanh(Z)
            A = Z
        return A

    @njit(cache=True)
    def mlp_jacobian_batch_numba(theta, shapes, X):
        L = shapes.shape[0]
        n = X.shape[0]
        B = X.shape[1]
        N = shapes[L - 1, 0]
        out = np.empty((B, N, n))
        for s in range(B):
            x = X[:, s].copy()
            offset = 0
            M = np.empty((0, 0))
            a = x
            for k in range(L):
                out_dim = shapes[k, 0]
                in_dim = shapes[k, 1]
                W = theta[offset : offset + out_dim * in_dim].reshape(out_dim, in_dim)
                offset += out_dim * in_dim
                b = theta[offset : offset + out_dim]
                offset += out_dim
                z = np.dot(W, a) + b
                if k == 0:
                    M = W.copy()
                else:
                    M = np.dot(W, M)
                if k < L - 1:
                    a = np.tanh(z)
                    for i in range(out_dim):
                        d = 1.0 - a[i] * a[i]
                        for j in range(n):
                            M[i, j] *= d
                else:
                    a = z
            out[s] = M
        return out

    @njit(cache=True)
    def mlp_vjp_theta_numba(theta, shapes, X, S):
        L = shapes.shape[0]
        grad = np.zeros_like(theta)
        offsets = np.empty(L, dtype=np.int64)
        o = 0
        for k in range(L):
            offsets[k] = o
            o += shapes[k, 0] * shapes[k, 1] + shapes[k, 0]
        # forward pass, keeping activations per layer
        acts = _TypedList()
        acts.append(X.copy())
        for k in range(L - 1):
            out_dim = shapes[k, 0]
            in_dim = shapes[k, 1]
            off = offsets[k]
            W = theta[off : off + out_dim * in_dim].reshape(out_dim, in_dim)
            b = theta[off + out_dim * in_dim : off + out_dim * in_dim + out_dim]
            Z = np.dot(W, acts[k]) + b.copy().reshape(out_dim, 1)
            acts.append(np.tanh(Z))
        # backward pass
        delta = S
        for k in range(L - 1, -1, -1):
            out_dim = shapes[k, 0]
            in_dim = shapes[k, 1]
            off = offsets[k]
            a_prev = acts[k]
            gW = np.dot(delta, a_prev.T)
            grad[off : off + out_dim * in_dim] = gW.ravel()
            grad[off + out_dim * in_dim : off + out_dim * in_dim + out_dim] = np.sum(delta, axis=1)
            if k > 0:
                W = theta[off : off + out_dim * in_dim].reshape(out_dim, in_dim)
                delta = np.dot(W.T, delta) * (1.0 - a_prev * a_prev)
        return grad


if NUMBA_AVAILABLE and not _pure_numpy_requested():
    BACKEND = "numba"
    mlp_forward = mlp_forward_numba
    mlp_jacobian_batch = mlp_jacobian_batch_numba
    mlp_vjp_theta = mlp_vjp_theta_numba
else:
    BACKEND = "numpy"
    mlp_forward = mlp_forward_numpy
    mlp_jacobian_batch = mlp_jacobian_batch_numpy
    mlp_vjp_theta = mlp_vjp_theta_numpy
