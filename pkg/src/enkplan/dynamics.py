"""Vehicle dynamics: kinematic bicycle ground truth and the MLP surrogate.

The plant is integrated with RK4 on the closed-form bicycle equations; the
planner-side model is a feedforward network mapping (state, control) to the
state derivative, stepped with plain forward Euler. Keeping the two
integrators and models distinct creates a genuine model/plant gap.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

STATE_DIM = 4
CONTROL_DIM = 2
MODEL_FORMAT_VERSION = 1

TWO_PI = 2.0 * np.pi


def wrap_heading(angle):
    """Wrap an angle (scalar or array) into (-pi, pi]."""
    return np.pi - np.remainder(np.pi - np.asarray(angle, dtype=float), TWO_PI)


@dataclass(frozen=True)
class VehicleState:
    """Planar vehicle state: position (m), heading (rad), speed (m/s)."""

    x_pos: float
    y_pos: float
    heading: float
    speed: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x_pos, self.y_pos, self.heading, self.speed])

    @classmethod
    def from_array(cls, arr) -> "VehicleState":
        x, y, psi, v = (float(a) for a in arr)
        return cls(x, y, psi, v)


@dataclass(frozen=True)
class ControlInput:
    """Acceleration (m/s^2) and front-wheel steering angle (rad)."""

    accel: float
    steer: float

    def as_array(self) -> np.ndarray:
        return np.array([self.accel, self.steer])

    @classmethod
    def from_array(cls, arr) -> "ControlInput":
        a, d = (float(v) for v in arr)
        return cls(a, d)


@dataclass(frozen=True)
class BicycleParams:
    wheelbase: float = 2.5
    speed_floor: float = 0.0
    speed_ceiling: float = 40.0

    def __post_init__(self):
        if not self.wheelbase > 0.0:
            raise ValueError(f"wheelbase must be positive, got {self.wheelbase}")
        if not self.speed_floor < self.speed_ceiling:
            raise ValueError("speed_floor must be below speed_ceiling")
        if self.speed_floor < 0.0:
            raise ValueError("speed_floor must be >= 0")


def _derivative_array(states, controls, wheelbase):
    """Bicycle derivative on stacked arrays. states (...,4), controls (...,2)."""
    states = np.asarray(states, dtype=float)
    controls = np.asarray(controls, dtype=float)
    psi = states[..., 2]
    v = states[..., 3]
    out = np.empty(states.shape[:-1] + (STATE_DIM,))
    out[..., 0] = v * np.cos(psi)
    out[..., 1] = v * np.sin(psi)
    out[..., 2] = v * np.tan(controls[..., 1]) / wheelbase
    out[..., 3] = controls[..., 0]
    return out


def bicycle_derivative(state: VehicleState, control: ControlInput,
                       params: BicycleParams) -> np.ndarray:
    """Time derivative of the bicycle state.

    Returns (v cos psi, v sin psi, v tan(steer) / wheelbase, accel).
    """
    x = state.as_array()
    u = control.as_array()
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(u))):
        raise ValueError("non-finite state or control")
    return _derivative_array(x, u, params.wheelbase)


def true_step(state: VehicleState, control: ControlInput, params: BicycleParams,
              dt: float) -> VehicleState:
    """Advance the plant one RK4 step of length dt.

    Speed is clamped to [speed_floor, speed_ceiling] and heading wrapped to
    (-pi, pi] after the step.
    """
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    x = state.as_array()
    u = control.as_array()
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(u))):
        raise ValueError("non-finite state or control")
    L = params.wheelbase
    k1 = _derivative_array(x, u, L)
    k2 = _derivative_array(x + 0.5 * dt * k1, u, L)
    k3 = _derivative_array(x + 0.5 * dt * k2, u, L)
    k4 = _derivative_array(x + dt * k3, u, L)
    nxt = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    nxt[2] = wrap_heading(nxt[2])
    nxt[3] = min(max(nxt[3], params.speed_floor), params.speed_ceiling)
    if not np.all(np.isfinite(nxt)):
        raise ValueError("integration produced a non-finite state")
    return VehicleState.from_array(nxt)


# ---------------------------------------------------------------------------
# MLP surrogate


@dataclass
class MlpLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray    # (out,)


_ACTIVATIONS = ("tanh", "linear")


@dataclass
class MlpModel:
    """Feedforward network mapping normalized (state, control) to the
    normalized state derivative.

    ``activations`` has one entry per hidden layer (the output layer is
    always linear). Normalization statistics are carried with the model so
    inference is self-contained.
    """

    layers: list = field(default_factory=list)
    activations: list = field(default_factory=list)
    input_offset: np.ndarray = None
    input_scale: np.ndarray = None
    output_offset: np.ndarray = None
    output_scale: np.ndarray = None

    def validate(self):
        if len(self.layers) < 1:
            raise ValueError("model needs at least one layer")
        if len(self.activations) != len(self.layers) - 1:
            raise ValueError(
                f"expected {len(self.layers) - 1} hidden activations, "
                f"got {len(self.activations)}")
        for act in self.activations:
            if act not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        if self.layers[0].weight.shape[1] != STATE_DIM + CONTROL_DIM:
            raise ValueError(
                f"first layer must take {STATE_DIM + CONTROL_DIM} inputs, "
                f"got {self.layers[0].weight.shape[1]}")
        if self.layers[-1].weight.shape[0] != STATE_DIM:
            raise ValueError(
                f"last layer must emit {STATE_DIM} outputs, "
                f"got {self.layers[-1].weight.shape[0]}")
        for i, lay in enumerate(self.layers):
            if lay.weight.shape[0] != lay.bias.shape[0]:
                raise ValueError(f"layer {i}: weight/bias row mismatch")
            if i > 0 and lay.weight.shape[1] != self.layers[i - 1].weight.shape[0]:
                raise ValueError(f"layer {i}: input dim does not chain")
            if not (np.all(np.isfinite(lay.weight)) and np.all(np.isfinite(lay.bias))):
                raise ValueError(f"layer {i}: non-finite parameters")
        for name in ("input_offset", "input_scale", "output_offset", "output_scale"):
            vec = getattr(self, name)
            if vec is None or not np.all(np.isfinite(vec)):
                raise ValueError(f"{name} missing or non-finite")
        if self.input_offset.shape != (STATE_DIM + CONTROL_DIM,):
            raise ValueError("input normalization must be 6-dimensional")
        if self.output_offset.shape != (STATE_DIM,):
            raise ValueError("output normalization must be 4-dimensional")

    def hidden_sizes(self):
        return tuple(lay.weight.shape[0] for lay in self.layers[:-1])


def identity_normalization(model: MlpModel) -> MlpModel:
    """Fill unit-scale, zero-offset normalization vectors in place."""
    model.input_offset = np.zeros(STATE_DIM + CONTROL_DIM)
    model.input_scale = np.ones(STATE_DIM + CONTROL_DIM)
    model.output_offset = np.zeros(STATE_DIM)
    model.output_scale = np.ones(STATE_DIM)
    return model


def _apply_activation(name, z):
    if name == "tanh":
        return np.tanh(z)
    return z


def mlp_forward_array(model: MlpModel, inputs) -> np.ndarray:
    """Network forward pass on raw-unit inputs of shape (..., 6)."""
    z = (np.asarray(inputs, dtype=float) - model.input_offset) / model.input_scale
    for i, lay in enumerate(model.layers):
        z = z @ lay.weight.T + lay.bias
        if i < len(model.layers) - 1:
            z = _apply_activation(model.activations[i], z)
    return z * model.output_scale + model.output_offset


def mlp_forward(model: MlpModel, state: VehicleState,
                control: ControlInput) -> np.ndarray:
    """Surrogate state derivative for a single (state, control) pair."""
    model.validate()
    stacked = np.concatenate([state.as_array(), control.as_array()])
    return mlp_forward_array(model, stacked)


def surrogate_step(model: MlpModel, state: VehicleState, control: ControlInput,
                   dt: float) -> VehicleState:
    """One forward-Euler step of the surrogate model (no clamping or wrap)."""
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    deriv = mlp_forward(model, state, control)
    return VehicleState.from_array(state.as_array() + dt * deriv)


def surrogate_step_array(model: MlpModel, states, controls, dt: float) -> np.ndarray:
    """Euler-step a batch of states (N,4) under controls (N,2)."""
    inp = np.concatenate([np.asarray(states, dtype=float),
                          np.asarray(controls, dtype=float)], axis=-1)
    return np.asarray(states) + dt * mlp_forward_array(model, inp)


# ---------------------------------------------------------------------------
# Serialization


def model_to_dict(model: MlpModel) -> dict:
    model.validate()
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "layers": [
            {
                "rows": int(lay.weight.shape[0]),
                "cols": int(lay.weight.shape[1]),
                "weights": [float(v) for v in lay.weight.ravel()],
                "bias": [float(v) for v in lay.bias],
            }
            for lay in model.layers
        ],
        "activations": list(model.activations),
        "input_offset": [float(v) for v in model.input_offset],
        "input_scale": [float(v) for v in model.input_scale],
        "output_offset": [float(v) for v in model.output_offset],
        "output_scale": [float(v) for v in model.output_scale],
    }


def model_from_dict(doc: dict) -> MlpModel:
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {version!r}")
    layers = []
    for entry in doc["layers"]:
        w = np.array(entry["weights"], dtype=float).reshape(entry["rows"], entry["cols"])
        b = np.array(entry["bias"], dtype=float)
        layers.append(MlpLayer(weight=w, bias=b))
    model = MlpModel(
        layers=layers,
        activations=list(doc["activations"]),
        input_offset=np.array(doc["input_offset"], dtype=float),
        input_scale=np.array(doc["input_scale"], dtype=float),
        output_offset=np.array(doc["output_offset"], dtype=float),
        output_scale=np.array(doc["output_scale"], dtype=float),
    )
    model.validate()
    return model


def save_model(model: MlpModel, path):
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh)


def load_model(path) -> MlpModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))
