"""Surrogate model learning: rollout data generation and Adam training.

Training data comes from seeded rollouts of the ground-truth bicycle model
under piecewise-constant random excitation; targets are the instantaneous
state derivatives. The network is trained on z-score-normalized inputs and
targets with mini-batch Adam and hand-rolled backpropagation, so the whole
pipeline stays deterministic for a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import (CONTROL_DIM, STATE_DIM, BicycleParams, ControlInput,
                       MlpLayer, MlpModel, VehicleState, _derivative_array,
                       true_step)


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch):
        super().__init__(f"training loss became non-finite at epoch {epoch}")
        self.epoch = epoch


@dataclass
class TrainingConfig:
    n_trajectories: int = 300
    steps_per_trajectory: int = 60
    dt: float = 0.1
    accel_range: tuple = (-3.0, 3.0)
    steer_range: tuple = (-0.5, 0.5)
    hold_steps: int = 5            # control segments last this many steps
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    batch_size: int = 256
    epochs: int = 80
    validation_fraction: float = 0.2
    rng_seed: int = 0
    # initial-state sampling ranges for rollouts
    position_range: tuple = (-500.0, 500.0)
    speed_range: tuple = (0.0, 30.0)

    def __post_init__(self):
        if self.n_trajectories < 1 or self.steps_per_trajectory < 1:
            raise ValueError("trajectory counts must be positive")
        if not self.dt > 0.0:
            raise ValueError("dt must be positive")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must be in (0, 1)")
        for name in ("learning_rate", "adam_beta1", "adam_beta2", "adam_epsilon"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        if self.batch_size < 1 or self.epochs < 1 or self.hold_steps < 1:
            raise ValueError("batch_size, epochs and hold_steps must be >= 1")


@dataclass
class Dataset:
    inputs: np.ndarray    # (n, 6) state || control
    targets: np.ndarray   # (n, 4) state derivative
    train_idx: np.ndarray
    val_idx: np.ndarray

    def __post_init__(self):
        if len(self.inputs) != len(self.targets):
            raise ValueError("inputs/targets length mismatch")
        if not (np.all(np.isfinite(self.inputs)) and np.all(np.isfinite(self.targets))):
            raise ValueError("dataset contains non-finite values")


def generate_dataset(config: TrainingConfig, params: BicycleParams) -> Dataset:
    """Roll seeded excitation trajectories and pair each visited (state,
    control) with its ground-truth derivative."""
    rng = np.random.default_rng(config.rng_seed)
    n_samples = config.n_trajectories * config.steps_per_trajectory
    inputs = np.empty((n_samples, STATE_DIM + CONTROL_DIM))
    targets = np.empty((n_samples, STATE_DIM))
    row = 0
    speed_lo = max(config.speed_range[0], params.speed_floor)
    speed_hi = min(config.speed_range[1], params.speed_ceiling)
    for _ in range(config.n_trajectories):
        state = VehicleState(
            x_pos=rng.uniform(*config.position_range),
            y_pos=rng.uniform(*config.position_range),
            heading=rng.uniform(-np.pi, np.pi),
            speed=rng.uniform(speed_lo, speed_hi),
        )
        control = None
        for step in range(config.steps_per_trajectory):
            if step % config.hold_steps == 0:
                control = ControlInput(rng.uniform(*config.accel_range),
                                       rng.uniform(*config.steer_range))
            x = state.as_array()
            u = control.as_array()
            inputs[row, :STATE_DIM] = x
            inputs[row, STATE_DIM:] = u
            targets[row] = _derivative_array(x, u, params.wheelbase)
            row += 1
            state = true_step(state, control, params, config.dt)
    perm = rng.permutation(n_samples)
    n_val = max(1, int(round(config.validation_fraction * n_samples)))
    if n_val >= n_samples:
        n_val = n_samples - 1
    return Dataset(inputs=inputs, targets=targets,
                   train_idx=perm[n_val:], val_idx=perm[:n_val])


def init_model(hidden_sizes, rng, activation="tanh") -> MlpModel:
    """Glorot-uniform initialized model with placeholder unit normalization."""
    sizes = [STATE_DIM + CONTROL_DIM] + list(hidden_sizes) + [STATE_DIM]
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        layers.append(MlpLayer(weight=rng.uniform(-bound, bound, (fan_out, fan_in)),
                               bias=np.zeros(fan_out)))
    model = MlpModel(layers=layers,
                     activations=[activation] * len(hidden_sizes),
                     input_offset=np.zeros(STATE_DIM + CONTROL_DIM),
                     input_scale=np.ones(STATE_DIM + CONTROL_DIM),
                     output_offset=np.zeros(STATE_DIM),
                     output_scale=np.ones(STATE_DIM))
    model.validate()
    return model


def _normalization_from(data, floor=1e-8):
    mean = data.mean(axis=0)
    std = data.std(axis=0)
    std[std < floor] = 1.0
    return mean, std


def _forward_cached(model, x_norm):
    """Forward pass in normalized space, returning per-layer activations."""
    acts = [x_norm]
    z = x_norm
    for i, lay in enumerate(model.layers):
        z = z @ lay.weight.T + lay.bias
        if i < len(model.layers) - 1:
            z = np.tanh(z) if model.activations[i] == "tanh" else z
        acts.append(z)
    return acts


def _loss_and_grads(model, x_norm, y_norm):
    """Mean-squared-error loss in normalized space, with backprop gradients."""
    acts = _forward_cached(model, x_norm)
    pred = acts[-1]
    err = pred - y_norm
    n_terms = err.size
    loss = float(np.sum(err ** 2) / n_terms)
    delta = 2.0 * err / n_terms
    grads = [None] * len(model.layers)
    for i in range(len(model.layers) - 1, -1, -1):
        grads[i] = (delta.T @ acts[i], delta.sum(axis=0))
        if i > 0:
            delta = delta @ model.layers[i].weight
            if model.activations[i - 1] == "tanh":
                delta = delta * (1.0 - acts[i] ** 2)
    return loss, grads


def _evaluate(model, x_norm, y_norm):
    acts = _forward_cached(model, x_norm)
    err = acts[-1] - y_norm
    return float(np.mean(err ** 2))


def train(model_init: MlpModel, data: Dataset, config: TrainingConfig):
    """Mini-batch Adam on normalized MSE. Returns (model, history) where
    history rows are (epoch, train_mse, val_mse)."""
    model_init.validate()
    model = MlpModel(
        layers=[MlpLayer(lay.weight.copy(), lay.bias.copy())
                for lay in model_init.layers],
        activations=list(model_init.activations),
        input_offset=None, input_scale=None,
        output_offset=None, output_scale=None)
    x_train = data.inputs[data.train_idx]
    y_train = data.targets[data.train_idx]
    model.input_offset, model.input_scale = _normalization_from(x_train)
    model.output_offset, model.output_scale = _normalization_from(y_train)

    xn_train = (x_train - model.input_offset) / model.input_scale
    yn_train = (y_train - model.output_offset) / model.output_scale
    xn_val = (data.inputs[data.val_idx] - model.input_offset) / model.input_scale
    yn_val = (data.targets[data.val_idx] - model.output_offset) / model.output_scale

    rng = np.random.default_rng(config.rng_seed + 1)
    m_state = [(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in model.layers]
    v_state = [(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in model.layers]
    b1, b2, eps = config.adam_beta1, config.adam_beta2, config.adam_epsilon
    step = 0
    history = []
    n = len(xn_train)
    # overflow inside a diverging run is reported via TrainingDiverged, not
    # as floating-point warnings
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(config.epochs):
            order = rng.permutation(n)
            epoch_loss = 0.0
            n_batches = 0
            for lo in range(0, n, config.batch_size):
                idx = order[lo:lo + config.batch_size]
                loss, grads = _loss_and_grads(model, xn_train[idx], yn_train[idx])
                epoch_loss += loss
                n_batches += 1
                step += 1
                corr1 = 1.0 - b1 ** step
                corr2 = 1.0 - b2 ** step
                for i, lay in enumerate(model.layers):
                    for j, (param, grad) in enumerate(
                            ((lay.weight, grads[i][0]), (lay.bias, grads[i][1]))):
                        m = m_state[i][j]
                        v = v_state[i][j]
                        m *= b1
                        m += (1.0 - b1) * grad
                        v *= b2
                        v += (1.0 - b2) * grad ** 2
                        param -= config.learning_rate * (m / corr1) / \
                            (np.sqrt(v / corr2) + eps)
            train_mse = epoch_loss / n_batches
            val_mse = _evaluate(model, xn_val, yn_val)
            if not (np.isfinite(train_mse) and np.isfinite(val_mse)):
                raise TrainingDiverged(epoch)
            history.append((epoch, train_mse, val_mse))
    model.validate()
    return model, history


def validation_rmse(model: MlpModel, data: Dataset) -> np.ndarray:
    """Per-component RMSE of the trained model on the held-out split, in
    raw (de-normalized) units."""
    from .dynamics import mlp_forward_array

    pred = mlp_forward_array(model, data.inputs[data.val_idx])
    return np.sqrt(np.mean((pred - data.targets[data.val_idx]) ** 2, axis=0))


def _flatten_params(model):
    return np.concatenate([np.concatenate([l.weight.ravel(), l.bias])
                           for l in model.layers])


def _write_params(model, flat):
    pos = 0
    for lay in model.layers:
        k = lay.weight.size
        lay.weight[...] = flat[pos:pos + k].reshape(lay.weight.shape)
        pos += k
        k = lay.bias.size
        lay.bias[...] = flat[pos:pos + k]
        pos += k


def gradient_check(model: MlpModel, sample) -> float:
    """Max relative disagreement between backprop and central finite
    differences over all parameters, on one (input, target) sample.

    The FD step is scaled by each parameter's magnitude. The loss is the
    same normalized-space MSE used by the trainer.
    """
    x_raw, y_raw = sample
    xn = ((np.asarray(x_raw, dtype=float) - model.input_offset) /
          model.input_scale)[None, :]
    yn = ((np.asarray(y_raw, dtype=float) - model.output_offset) /
          model.output_scale)[None, :]
    _, grads = _loss_and_grads(model, xn, yn)
    g_bp = np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])
    theta = _flatten_params(model)
    g_fd = np.empty_like(theta)
    for j in range(len(theta)):
        h = 1e-6 * max(1.0, abs(theta[j]))
        saved = theta[j]
        theta[j] = saved + h
        _write_params(model, theta)
        up = _evaluate(model, xn, yn)
        theta[j] = saved - h
        _write_params(model, theta)
        down = _evaluate(model, xn, yn)
        theta[j] = saved
        g_fd[j] = (up - down) / (2.0 * h)
    _write_params(model, theta)
    denom = np.maximum(1.0, np.abs(g_fd))
    return float(np.max(np.abs(g_bp - g_fd) / denom))
