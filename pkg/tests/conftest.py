import numpy as np
import pytest

from coalfed import datagen, models


@pytest.fixture(scope="session")
def curve_scenario():
    """Reference three-site cubic scenario: disjoint windows, sigma=0.05."""
    spec = datagen.CurveSpec(seed=7)
    sites, truth = datagen.synth_curve(spec)
    return spec, sites, truth


@pytest.fixture(scope="session")
def cubic_arch():
    # inputs on [0,3] mapped to [-1,1] so gradient descent is well conditioned
    return models.ModelArch("polynomial", 1, 3,
                            feature_offset=(1.5,), feature_scale=(1.5,))


@pytest.fixture(scope="session")
def cubic_cfg():
    return models.TrainConfig(learning_rate=0.05, epochs=3000, seed=11)


def linear_dataset(xs, slope=1.0, intercept=0.0, noise=0.0, seed=0,
                   label_range=(-100.0, 100.0)):
    xs = np.asarray(xs, dtype=np.float64)
    rng = np.random.default_rng(seed)
    ys = slope * xs + intercept
    if noise:
        ys = ys + rng.normal(0, noise, xs.shape[0])
    schema = models.Schema(("x",), None, label_range)
    return models.Dataset(schema, xs.reshape(-1, 1), ys)
