"""Receding-horizon planning step built on the ensemble smoother.

Each call smooths one horizon of the virtual system against observations
(reference waypoint, zero barrier), reads the first control of the smoothed
mean trajectory, and saturates it to the hard control bounds. The returned
ensemble seeds the next call's warmstart.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .constraints import BarrierConfig, ConstraintConfig, constraint_dim
from .dynamics import CONTROL_DIM, STATE_DIM, ControlInput, VehicleState
from .enks import SmootherConfig, TrajectoryEnsemble, smooth_horizon
from .road import RoadGeometry
from .virtual import (AUG_DIM, ConstraintContext, NoiseModel,
                      measurement_batch, predicted_obstacles)


@dataclass
class PlannerConfig:
    horizon: int
    dt: float
    smoother: SmootherConfig
    noise: NoiseModel
    barrier: BarrierConfig = None     # None disables the constraint channel
    constraints: ConstraintConfig = None

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not self.dt > 0.0:
            raise ValueError("dt must be positive")
        if (self.barrier is None) != (self.constraints is None):
            raise ValueError("barrier and constraints must be set together")


@dataclass
class Scene:
    road: RoadGeometry
    obstacles: list
    target_speed: float


@dataclass
class PlanResult:
    control: ControlInput          # saturated first control
    mean_trajectory: np.ndarray    # (H+1, 6) smoothed augmented trajectory
    plan_time: float
    max_innovation: float
    max_cond_estimate: float


def build_reference(road: RoadGeometry, state: VehicleState, horizon: int,
                    dt: float, target_speed: float) -> np.ndarray:
    """Reference waypoints r_0..r_H along the centerline at the target speed.

    Waypoint t sits target_speed*dt*t ahead of the vehicle's arclength
    projection; arclength clamps at the road end. Each waypoint carries the
    centerline point, its tangent heading and the target speed.
    """
    s0, _ = road.project(np.array([state.x_pos, state.y_pos]))
    s = np.minimum(s0 + target_speed * dt * np.arange(horizon + 1), road.length)
    refs = np.empty((horizon + 1, STATE_DIM))
    refs[:, :2] = road.point_at(s)
    refs[:, 2] = road.heading_at(s)
    refs[:, 3] = target_speed
    return refs


def stage_cost(state, control, reference, control_weight, state_weight) -> float:
    """Quadratic tracking-plus-effort cost of one step."""
    dx = np.asarray(state, dtype=float) - np.asarray(reference, dtype=float)
    u = np.asarray(control, dtype=float)
    return float(dx @ np.asarray(state_weight) @ dx + u @ np.asarray(control_weight) @ u)


def warmstart(prev_ensemble: TrajectoryEnsemble, measured_state: VehicleState) -> np.ndarray:
    """Initial members for the next step from the previous smoothed ensemble.

    Takes each member's slice at time index 1 (the one-step shift) and
    overwrites the vehicle block with the newly measured state, which is
    known exactly.
    """
    members = np.array(prev_ensemble.slice(1), dtype=float)
    members[:, :STATE_DIM] = measured_state.as_array()
    return members


def _initial_members(state: VehicleState, noise: NoiseModel, n_members, rng) -> np.ndarray:
    members = np.empty((n_members, AUG_DIM))
    members[:, :STATE_DIM] = state.as_array()
    members[:, STATE_DIM:] = noise.sample_controls(n_members, rng)
    return members


def build_observations(references, n_g: int) -> np.ndarray:
    """Observed virtual measurements: the reference, and zero for every
    barrier entry."""
    refs = np.asarray(references, dtype=float)
    obs = np.zeros((len(refs), STATE_DIM + n_g))
    obs[:, :STATE_DIM] = refs
    return obs


def plan_step(state: VehicleState, prev_ensemble, scene: Scene,
              config: PlannerConfig, vehicle_step, rng=None, references=None):
    """One receding-horizon planning step.

    vehicle_step : callable (states (N,4), controls (N,2)) -> (N,4), the
        planner-side one-step dynamics (the surrogate in normal use).
    prev_ensemble : smoothed ensemble from the previous step, or None for a
        cold start.
    references : optional (H+1, 4) waypoint override; by default waypoints
        come from the scene road and target speed.
    Returns (PlanResult, ensemble) where the ensemble seeds the next
    warmstart.
    """
    t_start = time.perf_counter()
    if rng is None:
        rng = np.random.default_rng(config.smoother.rng_seed)
    noise = config.noise
    n = config.smoother.n_members

    if prev_ensemble is None:
        members = _initial_members(state, noise, n, rng)
    else:
        if prev_ensemble.length != config.horizon + 1:
            raise ValueError("previous ensemble length does not match horizon")
        members = warmstart(prev_ensemble, state)

    if references is None:
        refs = build_reference(scene.road, state, config.horizon, config.dt,
                               scene.target_speed)
    else:
        refs = np.asarray(references, dtype=float)
        if refs.shape != (config.horizon + 1, STATE_DIM):
            raise ValueError("references must be (horizon + 1, 4)")

    use_barrier = config.barrier is not None
    if use_barrier:
        n_g = constraint_dim(len(scene.obstacles))
        s_lo, _ = scene.road.project(np.array([state.x_pos, state.y_pos]))
        window = (s_lo - 15.0,
                  s_lo + scene.target_speed * config.dt * config.horizon + 25.0)
        contexts = [
            ConstraintContext(
                obstacles=predicted_obstacles(scene.obstacles, t, config.dt),
                road=scene.road, constraint=config.constraints,
                barrier=config.barrier, s_window=window)
            for t in range(config.horizon + 1)
        ]

        def measurement(states, t):
            return measurement_batch(states, noise, contexts[t], rng)
    else:
        n_g = 0

        def measurement(states, t):
            return states[:, :STATE_DIM] + noise.sample_reference_noise(
                len(states), rng)

    observations = build_observations(refs, n_g)
    assert np.all(observations[:, STATE_DIM:] == 0.0)

    def transition(states, t):
        out = np.empty_like(states)
        out[:, :STATE_DIM] = vehicle_step(states[:, :STATE_DIM],
                                          states[:, STATE_DIM:])
        out[:, STATE_DIM:] = noise.sample_controls(len(states), rng)
        return out

    ensemble, stats, diag = smooth_horizon(
        members, config.horizon, transition, measurement, observations,
        config.smoother)

    mean_traj = stats.mean.reshape(config.horizon + 1, AUG_DIM)
    u = mean_traj[0, STATE_DIM:]
    if config.constraints is not None:
        u = np.clip(u, config.constraints.u_min, config.constraints.u_max)
    result = PlanResult(
        control=ControlInput.from_array(u),
        mean_trajectory=mean_traj,
        plan_time=time.perf_counter() - t_start,
        max_innovation=max(diag.innovation_norms),
        max_cond_estimate=diag.max_cond_estimate,
    )
    return result, ensemble


def make_surrogate_stepper(model, dt):
    """Vehicle-step callable backed by the learned surrogate model."""
    from .dynamics import surrogate_step_array

    def step(states, controls):
        return surrogate_step_array(model, states, controls, dt)

    return step
