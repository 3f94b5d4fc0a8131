"""The augmented estimation system the smoother runs on.

Augmented state = (vehicle state, control). The transition advances the
vehicle part with the surrogate model under the current control and resamples
the control part as pure noise with covariance equal to the inverse control
weight; the measurement map emits the vehicle state (observed as the
reference waypoint) and the barrier values of the stacked constraints
(observed as zero). Both samplers draw their own perturbation noise, which is
what makes the ensemble update statistically consistent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constraints import (BarrierConfig, ConstraintConfig, ObstacleState,
                          softplus_barrier, stack_constraints_batch)
from .dynamics import (CONTROL_DIM, STATE_DIM, ControlInput, MlpModel,
                       VehicleState, surrogate_step, surrogate_step_array)

AUG_DIM = STATE_DIM + CONTROL_DIM


@dataclass(frozen=True)
class AugmentedState:
    vehicle: VehicleState
    control: ControlInput

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.vehicle.as_array(), self.control.as_array()])

    @classmethod
    def from_array(cls, arr) -> "AugmentedState":
        arr = np.asarray(arr, dtype=float)
        return cls(VehicleState.from_array(arr[:STATE_DIM]),
                   ControlInput.from_array(arr[STATE_DIM:AUG_DIM]))


@dataclass(frozen=True)
class VirtualMeasurement:
    reference: np.ndarray  # (4,) with vehicle-state semantics
    barrier: np.ndarray    # (n_g,) barrier values

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.reference, self.barrier])


def _check_spd(mat, name):
    mat = np.asarray(mat, dtype=float)
    if mat.shape[0] != mat.shape[1] or not np.allclose(mat, mat.T):
        raise ValueError(f"{name} must be square symmetric")
    if np.any(np.linalg.eigvalsh(mat) <= 0.0):
        raise ValueError(f"{name} must be positive definite")
    return mat


@dataclass
class NoiseModel:
    """Noise covariances of the virtual system.

    ``control_cov`` and ``reference_cov`` are the inverses of the control and
    tracking weight matrices of the planning cost; ``barrier_var`` scales the
    identity covariance of the barrier pseudo-measurement noise.
    """

    control_cov: np.ndarray    # (2, 2)
    reference_cov: np.ndarray  # (4, 4)
    barrier_var: float
    control_weight: np.ndarray = field(default=None)   # (2, 2) original weight
    state_weight: np.ndarray = field(default=None)     # (4, 4) original weight

    def __post_init__(self):
        self.control_cov = _check_spd(self.control_cov, "control_cov")
        self.reference_cov = _check_spd(self.reference_cov, "reference_cov")
        if not self.barrier_var > 0.0:
            raise ValueError("barrier_var must be positive")
        if self.control_weight is None:
            self.control_weight = np.linalg.inv(self.control_cov)
        if self.state_weight is None:
            self.state_weight = np.linalg.inv(self.reference_cov)
        self._chol_control = np.linalg.cholesky(self.control_cov)
        self._chol_reference = np.linalg.cholesky(self.reference_cov)

    @classmethod
    def from_weights(cls, control_weight_diag, state_weight_diag, barrier_var):
        q = np.asarray(control_weight_diag, dtype=float)
        r = np.asarray(state_weight_diag, dtype=float)
        if np.any(q <= 0.0) or np.any(r <= 0.0):
            raise ValueError("weights must be positive")
        return cls(control_cov=np.diag(1.0 / q), reference_cov=np.diag(1.0 / r),
                   barrier_var=float(barrier_var),
                   control_weight=np.diag(q), state_weight=np.diag(r))

    def sample_controls(self, n, rng) -> np.ndarray:
        return rng.standard_normal((n, CONTROL_DIM)) @ self._chol_control.T

    def sample_reference_noise(self, n, rng) -> np.ndarray:
        return rng.standard_normal((n, STATE_DIM)) @ self._chol_reference.T

    def sample_barrier_noise(self, n, n_g, rng) -> np.ndarray:
        return np.sqrt(self.barrier_var) * rng.standard_normal((n, n_g))


# ---------------------------------------------------------------------------
# Sampling operations


def transition_batch(states, model: MlpModel, noise: NoiseModel, dt, rng) -> np.ndarray:
    """Advance a batch of augmented states (N, 6) one virtual-system step.

    The vehicle block steps under each member's current control; the control
    block is replaced by a fresh draw from the control prior.
    """
    states = np.asarray(states, dtype=float)
    out = np.empty_like(states)
    out[:, :STATE_DIM] = surrogate_step_array(
        model, states[:, :STATE_DIM], states[:, STATE_DIM:], dt)
    out[:, STATE_DIM:] = noise.sample_controls(len(states), rng)
    return out


def transition_sample(aug: AugmentedState, model: MlpModel, noise: NoiseModel,
                      dt, rng) -> AugmentedState:
    """Single-state version of :func:`transition_batch`."""
    nxt_vehicle = surrogate_step(model, aug.vehicle, aug.control, dt)
    new_control = noise.sample_controls(1, rng)[0]
    return AugmentedState(nxt_vehicle, ControlInput.from_array(new_control))


@dataclass
class ConstraintContext:
    """Everything the measurement map needs to evaluate constraints at one
    horizon step: obstacle predictions, road, and the two configs."""

    obstacles: list
    road: object
    constraint: ConstraintConfig
    barrier: BarrierConfig
    s_window: tuple = None

    @property
    def n_g(self) -> int:
        return len(self.obstacles) + 5


def measurement_batch(states, noise: NoiseModel, ctx: ConstraintContext,
                      rng) -> np.ndarray:
    """Sample virtual measurements for a batch (N, 6) -> (N, 4 + n_g)."""
    states = np.asarray(states, dtype=float)
    n = len(states)
    g = stack_constraints_batch(states[:, :STATE_DIM], states[:, STATE_DIM:],
                                ctx.obstacles, ctx.road, ctx.constraint,
                                s_window=ctx.s_window)
    out = np.empty((n, STATE_DIM + ctx.n_g))
    out[:, :STATE_DIM] = states[:, :STATE_DIM] + noise.sample_reference_noise(n, rng)
    out[:, STATE_DIM:] = softplus_barrier(g, ctx.barrier) + \
        noise.sample_barrier_noise(n, ctx.n_g, rng)
    return out


def measurement_sample(aug: AugmentedState, noise: NoiseModel,
                       ctx: ConstraintContext, rng) -> VirtualMeasurement:
    row = measurement_batch(aug.as_array()[None, :], noise, ctx, rng)[0]
    return VirtualMeasurement(reference=row[:STATE_DIM], barrier=row[STATE_DIM:])


def predicted_obstacles(obstacles, steps_ahead: int, dt: float) -> list:
    """Constant-velocity, constant-heading extrapolation of each obstacle."""
    if steps_ahead < 0:
        raise ValueError("steps_ahead must be >= 0")
    if steps_ahead == 0:
        return list(obstacles)
    out = []
    for ob in obstacles:
        travel = ob.speed * steps_ahead * dt
        out.append(ObstacleState(
            position=(ob.position[0] + travel * np.cos(ob.heading),
                      ob.position[1] + travel * np.sin(ob.heading)),
            heading=ob.heading, speed=ob.speed,
            disc_offsets=ob.disc_offsets, disc_radius=ob.disc_radius))
    return out
