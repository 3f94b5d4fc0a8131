"""Planning inequality constraints and their softplus barrier.

The stacked constraint vector g has one entry per obstacle (minimum-distance
keep-out), one road-boundary entry, and four control-bound entries; every
entry is <= 0 exactly when the constraint holds. The barrier maps g
elementwise to a value near zero on the feasible side and asymptotically
linear (slope beta/alpha) on the violated side.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .dynamics import VehicleState, ControlInput
from .road import RoadGeometry


@dataclass(frozen=True)
class ConstraintConfig:
    d_min: float = 1.0
    road_half_width: float = 3.5
    u_min: tuple = (-3.0, -0.5)
    u_max: tuple = (3.0, 0.5)
    vehicle_disc_radius: float = 1.0
    discs_per_vehicle: int = 2
    vehicle_length: float = 4.2

    def __post_init__(self):
        if not self.d_min > 0.0:
            raise ValueError("d_min must be positive")
        if not self.road_half_width > 0.0:
            raise ValueError("road_half_width must be positive")
        if not all(lo < hi for lo, hi in zip(self.u_min, self.u_max)):
            raise ValueError("u_min must be below u_max componentwise")
        if not self.vehicle_disc_radius > 0.0:
            raise ValueError("vehicle_disc_radius must be positive")
        if self.discs_per_vehicle < 1:
            raise ValueError("discs_per_vehicle must be >= 1")

    def disc_offsets(self) -> np.ndarray:
        return disc_offsets(self.vehicle_length, self.vehicle_disc_radius,
                            self.discs_per_vehicle)


@lru_cache(maxsize=64)
def disc_offsets(length, radius, count) -> np.ndarray:
    """Longitudinal disc-center offsets covering a body of the given length."""
    if count == 1:
        return np.zeros(1)
    half = max(length / 2.0 - radius, 0.0)
    return np.linspace(-half, half, count)


@dataclass(frozen=True)
class BarrierConfig:
    alpha: float = 1.0
    beta: float = 5.0
    r_eta: float = 1e-4  # variance of the barrier pseudo-measurement noise

    def __post_init__(self):
        if not (self.alpha > 0.0 and self.beta > 0.0 and self.r_eta > 0.0):
            raise ValueError("alpha, beta and r_eta must all be positive")


@dataclass(frozen=True)
class ObstacleState:
    """Snapshot of one obstacle vehicle: pose, speed and disc footprint."""

    position: tuple    # (x, y) meters
    heading: float
    speed: float
    disc_offsets: tuple = (-1.1, 1.1)
    disc_radius: float = 1.0

    def __post_init__(self):
        if not self.disc_radius > 0.0:
            raise ValueError("disc_radius must be positive")

    def disc_centers(self) -> np.ndarray:
        d = np.array([np.cos(self.heading), np.sin(self.heading)])
        return np.asarray(self.position, dtype=float) + \
            np.asarray(self.disc_offsets)[:, None] * d


def obstacle_from_state(state: VehicleState, config: ConstraintConfig) -> ObstacleState:
    """View the ego vehicle's footprint as an obstacle record (for symmetric
    distance computations and logging)."""
    return ObstacleState(position=(state.x_pos, state.y_pos),
                         heading=state.heading, speed=state.speed,
                         disc_offsets=tuple(config.disc_offsets()),
                         disc_radius=config.vehicle_disc_radius)


def _ego_disc_centers(states, config):
    """Disc centers for a batch of ego states (N,4) -> (N, D, 2)."""
    states = np.asarray(states, dtype=float)
    heads = states[:, 2]
    d = np.stack([np.cos(heads), np.sin(heads)], axis=-1)   # (N, 2)
    offs = config.disc_offsets()
    return states[:, None, :2] + offs[None, :, None] * d[:, None, :]


def vehicle_distance_batch(states, obstacle: ObstacleState,
                           config: ConstraintConfig) -> np.ndarray:
    """Surface-to-surface distance from each ego state (N,4) to one obstacle.

    Minimum over all disc pairs of center distance minus both radii; negative
    on overlap.
    """
    ego = _ego_disc_centers(states, config)                  # (N, De, 2)
    obs = obstacle.disc_centers()                            # (Do, 2)
    gaps = ego[:, :, None, :] - obs[None, None, :, :]        # (N, De, Do, 2)
    dist = np.sqrt(np.sum(gaps ** 2, axis=-1))
    dist -= config.vehicle_disc_radius + obstacle.disc_radius
    return dist.min(axis=(1, 2))


def vehicle_distance(ev_state: VehicleState, obstacle: ObstacleState,
                     config: ConstraintConfig) -> float:
    return float(vehicle_distance_batch(ev_state.as_array()[None, :],
                                        obstacle, config)[0])


def boundary_violation_batch(states, road: RoadGeometry, half_width,
                             s_window=None) -> np.ndarray:
    """Signed boundary margin per state: positive means outside the road."""
    pts = np.asarray(states, dtype=float)[:, :2]
    _, lateral = road.project(pts, s_window=s_window)
    return np.abs(lateral) - half_width


def boundary_violation(ev_state: VehicleState, road: RoadGeometry,
                       half_width) -> float:
    return float(boundary_violation_batch(ev_state.as_array()[None, :],
                                          road, half_width)[0])


def constraint_dim(n_obstacles: int) -> int:
    return n_obstacles + 1 + 4


def stack_constraints_batch(states, controls, obstacles, road: RoadGeometry,
                            config: ConstraintConfig, s_window=None) -> np.ndarray:
    """Stacked constraint values for a batch: (N, n_obstacles + 5).

    Entry order: keep-out per obstacle, boundary, lower control bounds (2),
    upper control bounds (2). Each entry is <= 0 when satisfied.
    """
    states = np.asarray(states, dtype=float)
    controls = np.asarray(controls, dtype=float)
    n = states.shape[0]
    g = np.empty((n, constraint_dim(len(obstacles))))
    for i, ob in enumerate(obstacles):
        g[:, i] = config.d_min - vehicle_distance_batch(states, ob, config)
    m = len(obstacles)
    g[:, m] = boundary_violation_batch(states, road, config.road_half_width,
                                       s_window=s_window)
    g[:, m + 1:m + 3] = np.asarray(config.u_min) - controls
    g[:, m + 3:m + 5] = controls - np.asarray(config.u_max)
    return g


def stack_constraints(ev_state: VehicleState, control: ControlInput, obstacles,
                      road: RoadGeometry, config: ConstraintConfig) -> np.ndarray:
    return stack_constraints_batch(ev_state.as_array()[None, :],
                                   control.as_array()[None, :],
                                   obstacles, road, config)[0]


def softplus_barrier(g, barrier: BarrierConfig) -> np.ndarray:
    """Elementwise softplus barrier ln(1 + exp(beta * g)) / alpha.

    Computed through logaddexp, which switches to the linear-plus-log1p form
    for large arguments, so the function never overflows and never underflows
    to a hard zero before ~1e-300.
    """
    return np.logaddexp(0.0, barrier.beta * np.asarray(g, dtype=float)) / barrier.alpha
