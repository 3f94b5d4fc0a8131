"""Command-line front end: train, run, sweep, baseline.

Exit codes: 0 on success, 1 on runtime failure, 2 on configuration errors.
Every command writes a run manifest into its output directory so results can
be reproduced from the manifest alone. The default output root comes from
the ENKPLAN_OUT_ROOT environment variable (falling back to ./runs).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import (ConfigError, config_hash, load_json,
                     parse_scenario_config, parse_training_config)
from .dynamics import BicycleParams, load_model, save_model
from .scenario import RECORD_SCHEMA_VERSION, run_scenario, summarize
from .training import generate_dataset, init_model, train, validation_rmse

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def _out_dir(args, default_name):
    if args.out:
        root = Path(args.out)
    else:
        root = Path(os.environ.get("ENKPLAN_OUT_ROOT", "runs")) / default_name
    root.mkdir(parents=True, exist_ok=True)
    return root


def write_manifest(out_dir: Path, config_path, doc, seed):
    manifest = {
        "config_path": str(config_path),
        "config_hash": config_hash(doc),
        "seed": seed,
        "package_version": __version__,
        "record_schema_version": RECORD_SCHEMA_VERSION,
        "output_dir": str(out_dir),
        "created_unix": time.time(),
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    return manifest


def cmd_train(args):
    doc = load_json(args.config)
    config = parse_training_config(doc)
    if args.seed is not None:
        config = dataclasses.replace(config, rng_seed=args.seed)
    out = _out_dir(args, "train")
    write_manifest(out, args.config, doc, config.rng_seed)
    params = BicycleParams()
    data = generate_dataset(config, params)
    hidden = tuple(doc.get("hidden_sizes", [128, 128]))
    model0 = init_model(hidden, np.random.default_rng(config.rng_seed))
    model, history = train(model0, data, config)
    model_path = out / "model.json"
    save_model(model, model_path)
    with open(out / "loss_history.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_mse", "val_mse"])
        for row in history:
            writer.writerow([row[0], f"{row[1]:.10g}", f"{row[2]:.10g}"])
    rmse = validation_rmse(model, data)
    print(f"trained {hidden} model -> {model_path}")
    print("validation RMSE per component: "
          + " ".join(f"{v:.5g}" for v in rmse))
    threshold = doc.get("validation_rmse_threshold")
    if threshold is not None and float(np.max(rmse)) > float(threshold):
        print(f"validation RMSE exceeds threshold {threshold}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _scenario_from_args(args, seed_override=None):
    doc = load_json(args.config)
    config = parse_scenario_config(doc)
    seed = seed_override if seed_override is not None else args.seed
    if seed is not None:
        config.rng_seed = int(seed)
    model_path = getattr(args, "model", None) or doc.get("model_path")
    use_true = doc.get("use_true_dynamics", False)
    return doc, config, model_path, use_true


def _vehicle_hook(config, model_path, use_true):
    if use_true:
        from .dynamics import ControlInput, VehicleState, true_step

        bicycle = config.bicycle
        dt = config.planner.dt

        def step(states, controls):
            out = np.empty_like(states)
            for i in range(len(states)):
                nxt = true_step(VehicleState.from_array(states[i]),
                                ControlInput.from_array(controls[i]),
                                bicycle, dt)
                out[i] = nxt.as_array()
            return out

        return None, step
    if not model_path:
        raise ConfigError("model_path",
                          "missing (or set use_true_dynamics: true)")
    return load_model(model_path), None


def cmd_run(args):
    doc, config, model_path, use_true = _scenario_from_args(args)
    out = _out_dir(args, "run")
    write_manifest(out, args.config, doc, config.rng_seed)
    config.records_path = str(out / "records.csv")
    config.summary_path = str(out / "summary.json")
    model, hook = _vehicle_hook(config, model_path, use_true)
    records, summary = run_scenario(config, model=model, vehicle_step=hook)
    print(f"steps={summary.completed_steps} total_cost={summary.total_cost:.2f} "
          f"min_distance={summary.min_distance:.3f} "
          f"mean_plan_time={summary.mean_plan_time * 1e3:.1f}ms")
    if summary.failed:
        print(f"scenario aborted: {summary.failure_message}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _run_sweep_cell(payload):
    """Worker for one (method, n, h, seed) sweep cell."""
    import dataclasses as dc

    (doc, cell, model_path, use_true, out_dir) = payload
    from .config import parse_scenario_config

    config = parse_scenario_config(doc)
    config.rng_seed = cell["seed"]
    config.planner.horizon = cell["horizon"]
    config.planner.smoother = dc.replace(config.planner.smoother,
                                         n_members=cell["n_members"])
    cell_dir = Path(out_dir) / (f"{cell['method']}_N{cell['n_members']}"
                                f"_H{cell['horizon']}_s{cell['seed']}")
    cell_dir.mkdir(parents=True, exist_ok=True)
    config.records_path = str(cell_dir / "records.csv")
    config.summary_path = str(cell_dir / "summary.json")
    row = dict(cell)
    try:
        if cell["method"] == "enks":
            model, hook = _vehicle_hook(config, model_path, use_true)
            if cell.get("steps"):
                config.steps = int(cell["steps"])
            _, summary = run_scenario(config, model=model, vehicle_step=hook)
            row.update(total_cost=summary.total_cost,
                       avg_plan_time=summary.mean_plan_time,
                       min_distance=summary.min_distance,
                       violations=summary.collision_violations
                       + summary.boundary_violations,
                       failed=summary.failed)
        elif cell["method"] == "penalty":
            row.update(_penalty_cell(config, model_path, use_true,
                                     cell.get("steps", 5)))
        else:
            row.update(failed=True, error=f"unknown method {cell['method']}")
    except Exception as exc:  # cell failures recorded in-row, sweep continues
        row.update(failed=True, error=str(exc))
    return row


def _penalty_cell(config, model_path, use_true, probe_steps):
    """Closed-loop penalty-method probe over a few steps."""
    from .baselines import penalty_nmpc_solve
    from .dynamics import true_step
    from .planner import Scene, build_reference, stage_cost
    from .road import build_road
    from .scenario import _place_on_road, rollout_obstacles

    model, hook = _vehicle_hook(config, model_path, use_true)
    if hook is None:
        from .planner import make_surrogate_stepper

        hook = make_surrogate_stepper(model, config.planner.dt)
    road = build_road(config.road_spec)
    state = _place_on_road(road, config.ev_start_arclength,
                           config.ev_lane_offset, config.ev_speed)
    obstacles = rollout_obstacles(road, config.obstacles, probe_steps,
                                  config.planner.dt, config.planner.constraints)
    times, costs = [], []
    u_prev = None
    for k in range(probe_steps):
        scene = Scene(road=road, obstacles=obstacles[k],
                      target_speed=config.target_speed)
        controls, _, wall = penalty_nmpc_solve(hook, scene, state,
                                               config.planner, u_init=u_prev)
        u_prev = np.vstack([controls[1:], controls[-1:]])
        times.append(wall)
        u = np.clip(controls[0], config.planner.constraints.u_min,
                    config.planner.constraints.u_max)
        ref = build_reference(road, state, 1, config.planner.dt,
                              config.target_speed)[0]
        costs.append(stage_cost(state.as_array(), u, ref,
                                config.planner.noise.control_weight,
                                config.planner.noise.state_weight))
        from .dynamics import ControlInput

        state = true_step(state, ControlInput.from_array(u), config.bicycle,
                          config.planner.dt)
    return {"total_cost": float(np.sum(costs)),
            "avg_plan_time": float(np.mean(times)),
            "probe_steps": probe_steps, "failed": False}


def cmd_sweep(args):
    doc = load_json(args.config)
    matrix = doc.get("matrix")
    if not isinstance(matrix, dict):
        raise ConfigError("matrix", "missing or not a mapping")
    scenario_doc = doc.get("scenario")
    if not isinstance(scenario_doc, dict):
        raise ConfigError("scenario", "missing or not a mapping")
    methods = matrix.get("methods", ["enks"])
    sizes = matrix.get("n_members", [200])
    horizons = matrix.get("horizons", [40])
    seeds = matrix.get("seeds", [0])
    steps = matrix.get("steps")
    out = _out_dir(args, "sweep")
    write_manifest(out, args.config, doc, seeds[0] if seeds else 0)
    model_path = getattr(args, "model", None) or scenario_doc.get("model_path")
    use_true = scenario_doc.get("use_true_dynamics", False)
    cells = [
        {"method": method, "n_members": n, "horizon": h, "seed": seed,
         "steps": steps}
        for method in methods for n in sizes for h in horizons for seed in seeds
    ]
    payloads = [(scenario_doc, cell, model_path, use_true, str(out))
                for cell in cells]
    if args.threads > 1:
        with ProcessPoolExecutor(max_workers=args.threads) as pool:
            rows = list(pool.map(_run_sweep_cell, payloads))
    else:
        rows = [_run_sweep_cell(p) for p in payloads]

    # aggregate over seeds per (method, N, H)
    groups = {}
    for row in rows:
        key = (row["method"], row["n_members"], row["horizon"])
        groups.setdefault(key, []).append(row)
    agg = []
    for (method, n, h), rs in sorted(groups.items()):
        ok = [r for r in rs if not r.get("failed")]
        agg.append({
            "method": method, "n_members": n, "horizon": h,
            "seeds": len(rs), "failed_cells": len(rs) - len(ok),
            "total_cost": float(np.mean([r["total_cost"] for r in ok]))
            if ok else float("nan"),
            "avg_plan_time": float(np.mean([r["avg_plan_time"] for r in ok]))
            if ok else float("nan"),
        })
    agg = summarize(agg, baseline_index=0)

    per_cell_cols = ["method", "n_members", "horizon", "seed", "total_cost",
                     "avg_plan_time", "min_distance", "violations", "failed",
                     "error"]
    with open(out / "cells.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=per_cell_cols, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)
    agg_cols = ["method", "n_members", "horizon", "seeds", "failed_cells",
                "total_cost", "avg_plan_time", "relative_cost_change_pct",
                "relative_time_change_pct"]
    with open(out / "aggregate.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=agg_cols, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(agg)
    for row in agg:
        print(f"{row['method']} N={row['n_members']} H={row['horizon']}: "
              f"cost={row['total_cost']:.1f} time={row['avg_plan_time']:.4f}s")
    return EXIT_OK


def cmd_baseline(args):
    doc, config, model_path, use_true = _scenario_from_args(args)
    out = _out_dir(args, "baseline")
    write_manifest(out, args.config, doc, config.rng_seed)
    result = _penalty_cell(config, model_path, use_true, args.steps)
    with open(out / "baseline.json", "w") as fh:
        json.dump(result, fh, indent=2)
    print(f"penalty baseline over {args.steps} steps: "
          f"cost={result['total_cost']:.2f} "
          f"avg_solve_time={result['avg_plan_time']:.2f}s")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="enkplan",
        description="ensemble-Kalman receding-horizon motion planner")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--threads", type=int, default=1)

    p_train = sub.add_parser("train", help="train the surrogate model")
    common(p_train)
    p_train.set_defaults(func=cmd_train)

    p_run = sub.add_parser("run", help="run a closed-loop scenario")
    common(p_run)
    p_run.add_argument("--model", default=None, help="model JSON path")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a (method, N, H, seed) matrix")
    common(p_sweep)
    p_sweep.add_argument("--model", default=None)
    p_sweep.set_defaults(func=cmd_sweep)

    p_base = sub.add_parser("baseline", help="penalty-method baseline probe")
    common(p_base)
    p_base.add_argument("--model", default=None)
    p_base.add_argument("--steps", type=int, default=3,
                        help="closed-loop probe steps")
    p_base.set_defaults(func=cmd_baseline)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
