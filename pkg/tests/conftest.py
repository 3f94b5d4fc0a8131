import numpy as np
import pytest

from enkplan.dynamics import BicycleParams, MlpLayer, MlpModel


@pytest.fixture
def bicycle():
    return BicycleParams(wheelbase=2.5, speed_floor=0.0, speed_ceiling=40.0)


def make_constant_model(output):
    """Network that emits a fixed 4-vector for every input."""
    out = np.asarray(output, dtype=float)
    model = MlpModel(
        layers=[MlpLayer(weight=np.zeros((4, 6)), bias=out.copy())],
        activations=[],
        input_offset=np.zeros(6), input_scale=np.ones(6),
        output_offset=np.zeros(4), output_scale=np.ones(4))
    model.validate()
    return model


@pytest.fixture
def zero_model():
    return make_constant_model(np.zeros(4))
