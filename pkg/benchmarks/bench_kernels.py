#!/usr/bin/env python3
"""Benchmark the jitted observable kernels against the pure-numpy fallback.

Times the three hot kernels (batched forward, batched state Jacobian, batched
parameter VJP) across hidden widths and batch sizes.

Usage:
    python benchmarks/bench_kernels.py
    python benchmarks/bench_kernels.py --widths 64 256 1024 --batches 16 128
    python benchmarks/bench_kernels.py --output results.json
"""

import argparse
import json
import time

import numpy as np

from koopman_ioc import _kernels


def _problem(width, batch, seed=0):
    shapes = np.array([[width, 2], [32, width]], dtype=np.int64)
    rng = np.random.default_rng(seed)
    theta = rng.normal(size=_kernels.param_count(shapes)) * 0.1
    X = np.ascontiguousarray(rng.normal(size=(2, batch)))
    S = np.ascontiguousarray(rng.normal(size=(32, batch)))
    return shapes, theta, X, S


def _time(fn, *args, repeat=5, number=20):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        for _ in range(number):
            fn(*args)
        best = min(best, (time.perf_counter() - t0) / number)
    return best


def warmup_jit(widths, batches):
    if not _kernels.NUMBA_AVAILABLE:
        return
    print("warming up JIT compilation...")
    for width in widths:
        shapes, theta, X, S = _problem(width, batches[0])
        _kernels.mlp_forward_numba(theta, shapes, X)
        _kernels.mlp_jacobian_batch_numba(theta, shapes, X)
        _kernels.mlp_vjp_theta_numba(theta, shapes, X, S)
    print("done.\n")


def run(widths, batches, repeat):
    kernels = [
        ("forward", lambda s, t, X, S: (t, s, X)),
        ("jacobian", lambda s, t, X, S: (t, s, X)),
        ("vjp_theta", lambda s, t, X, S: (t, s, X, S)),
    ]
    numba_fns = {
        "forward": getattr(_kernels, "mlp_forward_numba", None),
        "jacobian": getattr(_kernels, "mlp_jacobian_batch_numba", None),
        "vjp_theta": getattr(_kernels, "mlp_vjp_theta_numba", None),
    }
    numpy_fns = {
        "forward": _kernels.mlp_forward_numpy,
        "jacobian": _kernels.mlp_jacobian_batch_numpy,
        "vjp_theta": _kernels.mlp_vjp_theta_numpy,
    }
    rows = []
    header = f"{'kernel':>10} {'width':>6} {'batch':>6} {'numpy (us)':>12} {'numba (us)':>12} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for name, pack in kernels:
        for width in widths:
            for batch in batches:
                shapes, theta, X, S = _problem(width, batch)
                args = pack(shapes, theta, X, S)
                t_np = _time(numpy_fns[name], *args, repeat=repeat)
                row = {"kernel": name, "width": width, "batch": batch, "numpy_s": t_np}
                if _kernels.NUMBA_AVAILABLE:
                    t_nb = _time(numba_fns[name], *args, repeat=repeat)
                    row["numba_s"] = t_nb
                    row["speedup"] = t_np / t_nb
                    print(
                        f"{name:>10} {width:>6} {batch:>6} {t_np * 1e6:>12.1f} "
                        f"{t_nb * 1e6:>12.1f} {t_np / t_nb:>8.2f}"
                    )
                else:
                    print(f"{name:>10} {width:>6} {batch:>6} {t_np * 1e6:>12.1f} {'n/a':>12} {'n/a':>8}")
                rows.append(row)
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--widths", type=int, nargs="+", default=[64, 128, 256])
    parser.add_argument("--batches", type=int, nargs="+", default=[8, 64])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--output", help="write results as JSON")
    args = parser.parse_args()

    print(f"active backend: {_kernels.BACKEND} (numba available: {_kernels.NUMBA_AVAILABLE})\n")
    warmup_jit(args.widths, args.batches)
    rows = run(args.widths, args.batches, args.repeat)
    if args.output:
        with open(args.output, "w") as fh:
            json.dump(rows, fh, indent=2)
        print(f"\nresults written to {args.output}")


if __name__ == "__main__":
    main()
