import numpy as np
import pytest

from enkplan.dynamics import (BicycleParams, ControlInput, MlpLayer, MlpModel,
                              VehicleState, bicycle_derivative,
                              mlp_forward, mlp_forward_array, model_from_dict,
                              model_to_dict, surrogate_step, true_step,
                              wrap_heading)
from conftest import make_constant_model


class TestBicycleDerivative:
    def test_straight_unit_speed(self, bicycle):
        d = bicycle_derivative(VehicleState(0, 0, 0, 1), ControlInput(0, 0), bicycle)
        assert np.allclose(d, [1, 0, 0, 0])

    def test_heading_along_y(self, bicycle):
        d = bicycle_derivative(VehicleState(0, 0, np.pi / 2, 2),
                               ControlInput(1, 0), bicycle)
        assert np.allclose(d, [0, 2, 0, 1], atol=1e-15)

    def test_generic_point_matches_formula_oracle(self, bicycle):
        # expected values frozen from a 40-digit evaluation of the closed form
        d = bicycle_derivative(VehicleState(3, -1, 0.3, 5),
                               ControlInput(0.5, 0.1), bicycle)
        expected = [4.7766824456280301, 1.4776010333066979,
                    0.20066934417090109, 0.5]
        assert np.allclose(d, expected, rtol=0, atol=1e-14)

    def test_nonfinite_state_rejected(self, bicycle):
        with pytest.raises(ValueError):
            bicycle_derivative(VehicleState(np.nan, 0, 0, 1),
                               ControlInput(0, 0), bicycle)


class TestTrueStep:
    def test_rest_is_fixed_point(self, bicycle):
        s = VehicleState(1.0, 2.0, 0.5, 0.0)
        nxt = true_step(s, ControlInput(0, 0), bicycle, 0.1)
        assert nxt == s

    def test_constant_velocity_translation(self, bicycle):
        nxt = true_step(VehicleState(0, 0, 0, 1), ControlInput(0, 0), bicycle, 0.1)
        assert np.allclose(nxt.as_array(), [0.1, 0, 0, 1], atol=1e-15)

    def test_matches_fine_euler_oracle(self, bicycle):
        # frozen from a 1e6-substep forward-Euler integration of the same ODE
        nxt = true_step(VehicleState(0, 0, 0, 5), ControlInput(1, 0.1),
                        bicycle, 0.1)
        expected = [0.504965422150525, 0.00511738955254385,
                    0.0202676035611544, 5.1]
        assert np.allclose(nxt.as_array(), expected, rtol=0, atol=1e-6)

    def test_step_halving_reduces_error_rk4_order(self, bicycle):
        state = VehicleState(0, 0, 0.2, 8.0)
        u = ControlInput(1.5, 0.3)

        def integrate(dt, n):
            s = state
            for _ in range(n):
                s = true_step(s, u, bicycle, dt)
            return s.as_array()

        ref = integrate(0.4 / 512, 512)
        err_coarse = np.abs(integrate(0.2, 2) - ref).max()
        err_fine = np.abs(integrate(0.1, 4) - ref).max()
        assert err_coarse / err_fine >= 8.0

    def test_speed_clamped(self, bicycle):
        nxt = true_step(VehicleState(0, 0, 0, 39.9), ControlInput(3, 0),
                        bicycle, 1.0)
        assert nxt.speed == bicycle.speed_ceiling
        nxt = true_step(VehicleState(0, 0, 0, 0.05), ControlInput(-3, 0),
                        bicycle, 1.0)
        assert nxt.speed == bicycle.speed_floor

    def test_heading_wraps_into_half_open_interval(self, bicycle):
        s = VehicleState(0, 0, 3.1, 10.0)
        for _ in range(40):
            s = true_step(s, ControlInput(0, 0.4), bicycle, 0.1)
            assert -np.pi < s.heading <= np.pi

    def test_wrap_heading_endpoints(self):
        assert wrap_heading(np.pi) == pytest.approx(np.pi)
        assert wrap_heading(-np.pi) == pytest.approx(np.pi)
        assert wrap_heading(3 * np.pi / 2) == pytest.approx(-np.pi / 2)

    def test_rejects_bad_dt(self, bicycle):
        with pytest.raises(ValueError):
            true_step(VehicleState(0, 0, 0, 1), ControlInput(0, 0), bicycle, 0.0)


def _identity_slice_model():
    """Single linear layer selecting the first four inputs."""
    w = np.zeros((4, 6))
    w[:4, :4] = np.eye(4)
    model = MlpModel(layers=[MlpLayer(weight=w, bias=np.zeros(4))],
                     activations=[],
                     input_offset=np.zeros(6), input_scale=np.ones(6),
                     output_offset=np.zeros(4), output_scale=np.ones(4))
    model.validate()
    return model


def _random_model(rng, hidden=(128, 128)):
    from enkplan.training import init_model

    model = init_model(hidden, rng)
    model.input_offset = rng.normal(size=6)
    model.input_scale = rng.uniform(0.5, 2.0, size=6)
    model.output_offset = rng.normal(size=4)
    model.output_scale = rng.uniform(0.5, 2.0, size=4)
    return model


class TestMlpForward:
    def test_identity_slice(self):
        model = _identity_slice_model()
        out = mlp_forward(model, VehicleState(1, 2, 3, 4), ControlInput(5, 6))
        assert np.allclose(out, [1, 2, 3, 4])

    def test_constant_network_ignores_input(self):
        model = make_constant_model([0.5, -1.0, 2.0, 0.0])
        model.output_scale = np.array([2.0, 1.0, 1.0, 1.0])
        model.output_offset = np.array([0.0, 1.0, 0.0, 0.0])
        for state in (VehicleState(0, 0, 0, 0), VehicleState(9, -3, 1, 22)):
            out = mlp_forward(model, state, ControlInput(1, 0.2))
            assert np.allclose(out, [1.0, 0.0, 2.0, 0.0])

    def test_matches_independent_matrix_product(self):
        rng = np.random.default_rng(7)
        model = _random_model(rng)
        x = rng.normal(size=6)

        # independent re-implementation: explicit loops, no shared helpers
        z = [(x[i] - model.input_offset[i]) / model.input_scale[i]
             for i in range(6)]
        for li, lay in enumerate(model.layers):
            nxt = []
            for r in range(lay.weight.shape[0]):
                acc = lay.bias[r]
                for c in range(lay.weight.shape[1]):
                    acc += lay.weight[r, c] * z[c]
                nxt.append(acc)
            if li < len(model.layers) - 1:
                nxt = [np.tanh(v) for v in nxt]
            z = nxt
        expected = [z[i] * model.output_scale[i] + model.output_offset[i]
                    for i in range(4)]

        got = mlp_forward_array(model, x)
        assert np.allclose(got, expected, rtol=1e-12, atol=1e-12)

    def test_linear_activations_equal_plain_matrix_product(self):
        rng = np.random.default_rng(3)
        from enkplan.training import init_model

        model = init_model((8, 8), rng, activation="linear")
        x = rng.normal(size=6)
        full = np.eye(6)
        for lay in model.layers:
            full = lay.weight @ full
        offset = model.layers[-1].bias.copy()
        acc = np.zeros(model.layers[0].weight.shape[0]) + model.layers[0].bias
        for lay in model.layers[1:]:
            acc = lay.weight @ acc + lay.bias
        assert np.allclose(mlp_forward_array(model, x), full @ x + acc,
                           atol=1e-12)

    def test_dimension_mismatch_raises(self):
        model = _identity_slice_model()
        model.layers[0] = MlpLayer(weight=np.zeros((4, 5)), bias=np.zeros(4))
        with pytest.raises(ValueError):
            model.validate()


class TestSurrogateStep:
    def test_zero_network_freezes_state(self, zero_model):
        s = VehicleState(1, 2, 0.3, 4)
        assert surrogate_step(zero_model, s, ControlInput(9, 9), 0.1) == s

    def test_constant_network_accumulates_linearly(self):
        c = np.array([1.0, -2.0, 0.5, 3.0])
        model = make_constant_model(c)
        s = VehicleState(0, 0, 0, 0)
        nxt = surrogate_step(model, s, ControlInput(0, 0), 0.2)
        assert np.allclose(nxt.as_array(), 0.2 * c)

    def test_increment_exactly_linear_in_dt(self):
        rng = np.random.default_rng(11)
        model = _random_model(rng, hidden=(16,))
        s = VehicleState(1, 1, 0.1, 5)
        u = ControlInput(0.5, 0.1)
        d1 = surrogate_step(model, s, u, 0.1).as_array() - s.as_array()
        d2 = surrogate_step(model, s, u, 0.2).as_array() - s.as_array()
        assert np.allclose(d2, 2.0 * d1, rtol=1e-12)

    def test_no_clamp_or_wrap_applied(self):
        model = make_constant_model([0.0, 0.0, 100.0, -100.0])
        nxt = surrogate_step(model, VehicleState(0, 0, 3.0, 1.0),
                             ControlInput(0, 0), 0.1)
        assert nxt.heading == pytest.approx(13.0)   # beyond pi, not wrapped
        assert nxt.speed == pytest.approx(-9.0)     # negative, not clamped


class TestSerialization:
    def test_round_trip(self):
        rng = np.random.default_rng(5)
        model = _random_model(rng, hidden=(8, 8))
        doc = model_to_dict(model)
        back = model_from_dict(doc)
        x = rng.normal(size=6)
        assert np.allclose(mlp_forward_array(model, x),
                           mlp_forward_array(back, x), atol=0)

    def test_version_checked(self):
        rng = np.random.default_rng(5)
        doc = model_to_dict(_random_model(rng, hidden=(4,)))
        doc["format_version"] = 99
        with pytest.raises(ValueError):
            model_from_dict(doc)
