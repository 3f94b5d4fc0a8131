"""Closed-loop overtaking simulation and metric logging.

The plant always advances with the ground-truth RK4 bicycle integrator; the
planner only ever sees the surrogate (or whichever vehicle-step hook the
caller supplies). Obstacle vehicles follow the road centerline at a fixed
lane offset and constant speed, independent of the ego vehicle. Per-step
records go to CSV, run summaries to JSON.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .constraints import (BarrierConfig, ConstraintConfig, ObstacleState,
                          boundary_violation, obstacle_from_state,
                          vehicle_distance)
from .dynamics import BicycleParams, ControlInput, VehicleState, true_step
from .enks import SmootherConfig, SmootherNumericsError
from .planner import (PlannerConfig, Scene, build_reference,
                      make_surrogate_stepper, plan_step, stage_cost)
from .road import RoadGeometry, build_road
from .virtual import NoiseModel


@dataclass
class ObstacleSpec:
    start_arclength: float
    lane_offset: float
    speed: float


@dataclass
class ScenarioConfig:
    road_spec: dict
    ev_start_arclength: float
    ev_lane_offset: float
    ev_speed: float
    obstacles: list          # of ObstacleSpec
    target_speed: float
    steps: int
    planner: PlannerConfig
    bicycle: BicycleParams = field(default_factory=BicycleParams)
    rng_seed: int = 0
    records_path: str = None
    summary_path: str = None

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        for ob in self.obstacles:
            if ob.speed < 0.0:
                raise ValueError("obstacle speeds must be >= 0")


@dataclass
class StepRecord:
    k: int
    state: VehicleState
    control: ControlInput
    ov_distances: list
    boundary_violation: float
    stage_cost: float
    plan_time: float
    max_innovation: float
    max_cond_estimate: float


@dataclass
class RunSummary:
    completed_steps: int
    total_cost: float
    min_distance: float
    mean_plan_time: float
    max_plan_time: float
    collision_violations: int
    boundary_violations: int
    failed: bool = False
    failure_message: str = ""

    def as_dict(self):
        return {
            "completed_steps": self.completed_steps,
            "total_cost": self.total_cost,
            "min_distance": self.min_distance,
            "mean_plan_time": self.mean_plan_time,
            "max_plan_time": self.max_plan_time,
            "collision_violations": self.collision_violations,
            "boundary_violations": self.boundary_violations,
            "failed": self.failed,
            "failure_message": self.failure_message,
        }


def _place_on_road(road: RoadGeometry, s, lane_offset, speed) -> VehicleState:
    point = road.offset_point(s, lane_offset)
    return VehicleState(float(point[0]), float(point[1]),
                        float(road.heading_at(s)), float(speed))


def rollout_obstacles(road: RoadGeometry, specs, steps, dt,
                      config: ConstraintConfig):
    """Obstacle snapshots for k = 0..steps, independent of the ego vehicle."""
    offsets = tuple(config.disc_offsets())
    by_step = []
    for k in range(steps + 1):
        snap = []
        for spec in specs:
            s = spec.start_arclength + spec.speed * dt * k
            point = road.offset_point(s, spec.lane_offset)
            snap.append(ObstacleState(
                position=(float(point[0]), float(point[1])),
                heading=float(road.heading_at(s)), speed=spec.speed,
                disc_offsets=offsets,
                disc_radius=config.vehicle_disc_radius))
        by_step.append(snap)
    return by_step


def run_scenario(config: ScenarioConfig, model=None, vehicle_step=None):
    """Run the closed loop for config.steps steps.

    Either a trained surrogate ``model`` or an explicit ``vehicle_step`` hook
    must be provided for the planner side. Returns (records, RunSummary);
    on a planner failure the partial records are returned with the summary
    flagged as failed.
    """
    if vehicle_step is None:
        if model is None:
            raise ValueError("need a surrogate model or a vehicle_step hook")
        vehicle_step = make_surrogate_stepper(model, config.planner.dt)
    road = build_road(config.road_spec)
    pcfg = config.planner
    dt = pcfg.dt

    state = _place_on_road(road, config.ev_start_arclength,
                           config.ev_lane_offset, config.ev_speed)
    obstacles_by_step = rollout_obstacles(road, config.obstacles, config.steps,
                                          dt, pcfg.constraints)
    records = []
    ensemble = None
    failed = False
    failure_message = ""
    for k in range(config.steps):
        rng = np.random.default_rng([config.rng_seed, k])
        scene = Scene(road=road, obstacles=obstacles_by_step[k],
                      target_speed=config.target_speed)
        try:
            result, ensemble = plan_step(state, ensemble, scene, pcfg,
                                         vehicle_step, rng)
        except SmootherNumericsError as exc:
            failed = True
            failure_message = str(exc)
            break
        u = result.control
        ref_now = build_reference(road, state, 1, dt, config.target_speed)[0]
        cost = stage_cost(state.as_array(), u.as_array(), ref_now,
                          pcfg.noise.control_weight, pcfg.noise.state_weight)
        dists = [vehicle_distance(state, ob, pcfg.constraints)
                 for ob in obstacles_by_step[k]]
        records.append(StepRecord(
            k=k, state=state, control=u, ov_distances=dists,
            boundary_violation=boundary_violation(state, road,
                                                  pcfg.constraints.road_half_width),
            stage_cost=cost, plan_time=result.plan_time,
            max_innovation=result.max_innovation,
            max_cond_estimate=result.max_cond_estimate))
        state = true_step(state, u, config.bicycle, dt)
    summary = summarize_records(records, config, failed, failure_message)
    if config.records_path:
        write_records_csv(records, config.records_path, len(config.obstacles))
    if config.summary_path:
        with open(config.summary_path, "w") as fh:
            json.dump(summary.as_dict(), fh, indent=2)
    return records, summary


def summarize_records(records, config: ScenarioConfig, failed=False,
                      failure_message="") -> RunSummary:
    d_min = config.planner.constraints.d_min if config.planner.constraints else 0.0
    if not records:
        return RunSummary(0, 0.0, float("inf"), 0.0, 0.0, 0, 0, failed,
                          failure_message)
    all_dists = [d for rec in records for d in rec.ov_distances]
    min_dist = min(all_dists) if all_dists else float("inf")
    plan_times = [rec.plan_time for rec in records]
    return RunSummary(
        completed_steps=len(records),
        total_cost=float(sum(rec.stage_cost for rec in records)),
        min_distance=float(min_dist),
        mean_plan_time=float(np.mean(plan_times)),
        max_plan_time=float(np.max(plan_times)),
        collision_violations=sum(
            1 for rec in records for d in rec.ov_distances if d < d_min),
        boundary_violations=sum(
            1 for rec in records if rec.boundary_violation > 0.0),
        failed=failed, failure_message=failure_message)


RECORD_SCHEMA_VERSION = 1


def record_columns(n_obstacles):
    cols = ["k", "x", "y", "heading", "speed", "accel", "steer"]
    cols += [f"dist_ov{i}" for i in range(n_obstacles)]
    cols += ["boundary_violation", "stage_cost", "plan_time_s",
             "max_innovation", "max_cond_estimate"]
    return cols


def write_records_csv(records, path, n_obstacles):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"# schema_version={RECORD_SCHEMA_VERSION}"])
        writer.writerow(record_columns(n_obstacles))
        for rec in records:
            row = [rec.k, rec.state.x_pos, rec.state.y_pos, rec.state.heading,
                   rec.state.speed, rec.control.accel, rec.control.steer]
            row += list(rec.ov_distances)
            row += [rec.boundary_violation, rec.stage_cost, rec.plan_time,
                    rec.max_innovation, rec.max_cond_estimate]
            writer.writerow([f"{v:.12g}" if isinstance(v, float) else v
                             for v in row])


def summarize(rows, baseline_index=0):
    """Comparison table over per-run summary rows.

    Each row is a mapping with at least method, n_members, horizon,
    total_cost and avg_plan_time. Adds relative cost/time change columns (in
    percent) against the designated baseline row.
    """
    if not rows:
        raise ValueError("no rows to summarize")
    base = rows[baseline_index]
    out = []
    for row in rows:
        entry = dict(row)
        base_cost = base.get("total_cost")
        base_time = base.get("avg_plan_time")
        entry["relative_cost_change_pct"] = (
            100.0 * (row["total_cost"] - base_cost) / base_cost
            if base_cost else None)
        entry["relative_time_change_pct"] = (
            100.0 * (row["avg_plan_time"] - base_time) / base_time
            if base_time else None)
        out.append(entry)
    return out
