"""Command-line interface.

Subcommands: demo (generate demonstrations), train (identification only),
estimate (weight recovery on given data and model), run (full iterative
algorithm), table1 / table2 (grid experiments), validate (oracle checks).
Exits nonzero on any failed assertion or trend violation.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .demos import pmp_residual
from .dynamics import (
    load_trajectory_json,
    save_trajectory_csv,
    save_trajectory_json,
    slice_segments,
)
from .harness import (
    ExperimentConfig,
    TrendViolation,
    generate_demo,
    load_config,
    make_dataset,
    run_algorithm1,
    run_table1,
    run_table2,
    run_result_trace,
    train_dkr,
    traj_error,
    write_table_outputs,
)
from .ioc import assemble_pmp, estimate_report, solve_weights, stack_segments
from .koopman import load_model, save_model
from .observables import load_observable, save_observable
from .validation import run_validation


def _floats(text: str):
    return tuple(float(v) for v in text.split(","))


def _windows(text: str):
    out = []
    for part in text.split(","):
        lo, hi = part.split(":")
        out.append((int(lo), int(hi)))
    return tuple(out)


def _load_cfg(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seeds=(args.seed,) + tuple(s for s in cfg.seeds if s != args.seed))
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out if args.out else "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_demo(args) -> int:
    cfg = _load_cfg(args)
    overrides = {}
    if args.T is not None:
        overrides["T"] = args.T
    if args.x0 is not None:
        overrides["x0"] = _floats(args.x0)
    if args.goal is not None:
        overrides["goal"] = _floats(args.goal)
    if args.weights is not None:
        overrides["omega_true"] = _floats(args.weights)
    if args.grad_tol is not None:
        overrides["grad_tol"] = args.grad_tol
    if args.pmp_tol is not None:
        overrides["pmp_tol"] = args.pmp_tol
    if overrides:
        cfg = replace(cfg, **overrides)
    out = _out_dir(args)
    sol = generate_demo(cfg)
    save_trajectory_json(sol.trajectory, out / "demo.json")
    save_trajectory_csv(sol.trajectory, out / "demo.csv")
    meta = {
        "omega_true": list(cfg.omega_true),
        "objective": sol.objective,
        "grad_norm": sol.grad_norm,
        "pmp_residual": sol.pmp_residual,
        "iterations": sol.iterations,
        "seed": None,  # the forward solver is deterministic
        "settings": cfg.to_dict(),
    }
    (out / "demo_meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    print(f"demo written to {out} (residual {sol.pmp_residual:.3e})")
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args)
    if args.demo:
        traj = load_trajectory_json(args.demo)
        dataset = slice_segments(traj, cfg.segment_windows)
    else:
        _, dataset = make_dataset(cfg)
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    model, obs, trace = train_dkr(cfg, dataset, seed=seed)
    save_observable(obs, out / "observable.json")
    save_model(model, out / "model.json", observable_ref="observable.json")
    (out / "train_trace.json").write_text(json.dumps({"seed": seed, "iterations": trace}, indent=2) + "\n")
    print(f"model written to {out} (final lc_max trace in train_trace.json)")
    return 0


def cmd_estimate(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args)
    traj = load_trajectory_json(args.demo) if args.demo else generate_demo(cfg).trajectory
    windows = _windows(args.windows) if args.windows else cfg.segment_windows
    dataset = slice_segments(traj, windows)
    feat = cfg.features()
    if args.provenance == "true":
        source = cfg.system()
    else:
        if not args.model:
            print("estimate with koopman provenance needs --model", file=sys.stderr)
            return 2
        model = load_model(args.model)
        obs_path = args.observable or str(Path(args.model).parent / "observable.json")
        source = (model, load_observable(obs_path))
    systems = [assemble_pmp(seg, feat, source) for seg in dataset]
    est = solve_weights(stack_segments(systems), omega_true=np.asarray(cfg.omega_true))
    report = estimate_report(est)
    (out / "estimate.json").write_text(json.dumps(report, indent=2) + "\n")
    print(json.dumps(report, indent=2))
    return 0


def cmd_run(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args)
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    demo, dataset = make_dataset(cfg)
    rr = run_algorithm1(cfg, dataset, seed=seed, demo=demo)
    (out / "trace.json").write_text(json.dumps(run_result_trace(rr), indent=2, sort_keys=True) + "\n")
    (out / "meta.json").write_text(
        json.dumps({"wall_time_s": rr.wall_time_s, "version": __version__}, indent=2) + "\n"
    )
    print(
        f"run complete: weight error {rr.estimate.weight_error:.4g}, "
        f"traj error {rr.traj_error:.4g}, lc_max {rr.lc_max:.3e}"
    )
    return 0


def _cmd_table(args, runner, name: str) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args)
    try:
        result = runner(cfg, strict=True)
    except TrendViolation as exc:
        print(f"trend assertion failed: {exc}", file=sys.stderr)
        result = runner(cfg, strict=False)
        write_table_outputs(result, out, name)
        return 1
    paths = write_table_outputs(result, out, name)
    for med in result.medians:
        print(
            f"{result.label}={med[result.label]}: median weight error {med['weight_error']:.4g}, "
            f"median traj error {med['traj_error']:.4g}"
        )
    print(f"outputs: {', '.join(str(p) for p in paths)}")
    return 0


def cmd_validate(args) -> int:
    return 0 if run_validation() else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="koopman-ioc",
        description="Identify unknown dynamics through a learned linear operator "
        "and recover objective weights from optimal trajectory segments.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", help="experiment config JSON")
        p.add_argument("--out", help="output directory (default ./out)")
        if seed:
            p.add_argument("--seed", type=int, help="override the first seed")

    p = sub.add_parser("demo", help="generate a demonstration trajectory")
    common(p)
    p.add_argument("--T", type=int, help="horizon in steps")
    p.add_argument("--x0", help="initial state, comma separated")
    p.add_argument("--goal", help="goal state, comma separated")
    p.add_argument("--weights", help="true weights, comma separated")
    p.add_argument("--grad-tol", dest="grad_tol", type=float)
    p.add_argument("--pmp-tol", dest="pmp_tol", type=float)
    p.set_defaults(func=cmd_demo)

    p = sub.add_parser("train", help="fit the operator model only")
    common(p)
    p.add_argument("--demo", help="trajectory JSON to train on (default: generate from config)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("estimate", help="recover weights from data and a model")
    common(p)
    p.add_argument("--demo", help="trajectory JSON (default: generate from config)")
    p.add_argument("--model", help="model checkpoint JSON")
    p.add_argument("--observable", help="observable checkpoint JSON")
    p.add_argument("--windows", help="segment windows like 0:4,2:6")
    p.add_argument("--provenance", choices=("koopman", "true"), default="koopman")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("run", help="full iterative identification + recovery")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("table1", help="sweep reconstruction-error thresholds")
    common(p, seed=False)
    p.set_defaults(func=lambda a: _cmd_table(a, run_table1, "table1"))

    p = sub.add_parser("table2", help="sweep hidden-layer widths")
    common(p, seed=False)
    p.set_defaults(func=lambda a: _cmd_table(a, run_table2, "table2"))

    p = sub.add_parser("validate", help="run the oracle/property checks")
    p.set_defaults(func=cmd_validate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
