import numpy as np
import pytest

from enkplan.constraints import BarrierConfig, ConstraintConfig, ObstacleState
from enkplan.dynamics import ControlInput, VehicleState
from enkplan.road import straight_road
from enkplan.virtual import (AugmentedState, ConstraintContext, NoiseModel,
                             measurement_batch, measurement_sample,
                             predicted_obstacles, transition_batch,
                             transition_sample)
from conftest import make_constant_model


def default_noise(control_var=0.1, ref_var=0.05, barrier_var=1e-4):
    return NoiseModel(control_cov=control_var * np.eye(2),
                      reference_cov=ref_var * np.eye(4),
                      barrier_var=barrier_var)


def free_context(n_obstacles=0):
    road = straight_road(500.0, 50.0)   # wide road: boundary never active
    obstacles = [ObstacleState(position=(1e6, 1e6), heading=0.0, speed=0.0)
                 for _ in range(n_obstacles)]
    return ConstraintContext(obstacles=obstacles, road=road,
                             constraint=ConstraintConfig(road_half_width=50.0,
                                                         u_min=(-100, -100),
                                                         u_max=(100, 100)),
                             barrier=BarrierConfig())


class TestTransition:
    def test_collapsing_control_prior(self, zero_model):
        noise = default_noise(control_var=1e-20)
        rng = np.random.default_rng(0)
        states = np.tile([0, 0, 0, 5, 1.0, 0.2], (100, 1))
        out = transition_batch(states, zero_model, noise, 0.1, rng)
        assert np.abs(out[:, 4:]).max() < 1e-8

    def test_frozen_dynamics_keeps_vehicle_part(self, zero_model):
        noise = default_noise()
        rng = np.random.default_rng(1)
        states = np.random.default_rng(3).normal(size=(50, 6))
        out = transition_batch(states, zero_model, noise, 0.1, rng)
        assert np.array_equal(out[:, :4], states[:, :4])

    def test_reproducible_across_runs(self, zero_model):
        noise = default_noise()
        states = np.random.default_rng(3).normal(size=(100, 6))
        a = transition_batch(states, zero_model, noise, 0.1,
                             np.random.default_rng(9))
        b = transition_batch(states, zero_model, noise, 0.1,
                             np.random.default_rng(9))
        assert np.array_equal(a, b)

    def test_scalar_matches_semantics(self, zero_model):
        aug = AugmentedState(VehicleState(1, 2, 0.1, 5), ControlInput(0.5, 0.1))
        out = transition_sample(aug, zero_model, default_noise(), 0.1,
                                np.random.default_rng(0))
        assert out.vehicle == aug.vehicle   # zero-output model freezes it
        assert out.control != aug.control   # control resampled as noise


class TestMeasurement:
    def test_noiseless_map_is_deterministic(self):
        noise = default_noise(control_var=0.1, ref_var=1e-30, barrier_var=1e-30)
        ctx = free_context()
        states = np.random.default_rng(0).normal(size=(20, 6))
        a = measurement_batch(states, noise, ctx, np.random.default_rng(1))
        b = measurement_batch(states, noise, ctx, np.random.default_rng(2))
        assert np.allclose(a, b, atol=1e-12)
        assert np.allclose(a[:, :4], states[:, :4], atol=1e-12)

    def test_deeply_feasible_barrier_near_zero(self):
        noise = default_noise(barrier_var=1e-8)
        ctx = free_context(n_obstacles=1)
        states = np.array([[10.0, 0.0, 0.0, 10.0, 0.0, 0.0]])
        out = measurement_batch(states, noise, ctx, np.random.default_rng(0))
        assert np.abs(out[0, 4:]).max() < 1e-2

    def test_violating_state_barrier_mean(self):
        # one keep-out entry violated by exactly 1 m at alpha=1, beta=5:
        # barrier mean ln(1 + e^5) = 5.00671534848912
        road = straight_road(500.0, 50.0)
        cfg = ConstraintConfig(d_min=1.0, road_half_width=50.0,
                               vehicle_disc_radius=1.0, discs_per_vehicle=1,
                               vehicle_length=2.0, u_min=(-100, -100),
                               u_max=(100, 100))
        # single-disc vehicles, center distance 2 -> surface distance 0
        # -> g = d_min - 0 = +1
        ob = ObstacleState(position=(12.0, 0.0), heading=0.0, speed=0.0,
                           disc_offsets=(0.0,), disc_radius=1.0)
        ctx = ConstraintContext(obstacles=[ob], road=road, constraint=cfg,
                                barrier=BarrierConfig(alpha=1.0, beta=5.0))
        noise = default_noise(barrier_var=1e-12, ref_var=1e-12)
        states = np.array([[10.0, 0.0, 0.0, 10.0, 0.0, 0.0]])
        out = measurement_batch(states, noise, ctx, np.random.default_rng(0))
        assert out[0, 4] == pytest.approx(5.0067153484891181, abs=1e-5)

    def test_scalar_wrapper_shapes(self):
        aug = AugmentedState(VehicleState(5, 0, 0, 10), ControlInput(0, 0))
        m = measurement_sample(aug, default_noise(), free_context(2),
                               np.random.default_rng(0))
        assert m.reference.shape == (4,)
        assert m.barrier.shape == (7,)
        assert m.as_array().shape == (11,)


class TestPredictedObstacles:
    def test_zero_horizon_unchanged(self):
        obs = [ObstacleState(position=(3.0, 4.0), heading=0.5, speed=7.0)]
        assert predicted_obstacles(obs, 0, 0.1) == obs

    def test_uniform_motion_along_x(self):
        obs = [ObstacleState(position=(0.0, 0.0), heading=0.0, speed=10.0)]
        out = predicted_obstacles(obs, 5, 0.1)
        assert out[0].position[0] == pytest.approx(5.0)
        assert out[0].position[1] == pytest.approx(0.0)

    def test_heading_displacement_matches_trig(self):
        obs = [ObstacleState(position=(1.0, -1.0), heading=np.pi / 3, speed=6.0)]
        out = predicted_obstacles(obs, 3, 0.1)
        assert out[0].position[0] == pytest.approx(1.0 + 1.8 * np.cos(np.pi / 3))
        assert out[0].position[1] == pytest.approx(-1.0 + 1.8 * np.sin(np.pi / 3))
        assert out[0].heading == obs[0].heading
        assert out[0].speed == obs[0].speed


class TestNoiseModel:
    def test_from_weights_inverts(self):
        noise = NoiseModel.from_weights([2.0, 8.0], [1.0, 1.0, 4.0, 0.5], 1e-4)
        assert np.allclose(noise.control_cov, np.diag([0.5, 0.125]))
        assert np.allclose(noise.state_weight, np.diag([1.0, 1.0, 4.0, 0.5]))

    def test_rejects_indefinite(self):
        with pytest.raises(ValueError):
            NoiseModel(control_cov=np.array([[1.0, 2.0], [2.0, 1.0]]),
                       reference_cov=np.eye(4), barrier_var=1e-4)

    def test_rejects_nonpositive_weights(self):
        with pytest.raises(ValueError):
            NoiseModel.from_weights([0.0, 1.0], [1, 1, 1, 1], 1e-4)
