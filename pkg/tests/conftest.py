import numpy as np
import pytest

from mfvi import DataModel, InitSpec, NeuronParam, PriorSpec, init_cloud


@pytest.fixture
def toy_model():
    """The reference regression setup: d=5, unit teacher, 1e-4 noise variance."""
    return DataModel.with_random_teacher(5, seed=0)


@pytest.fixture
def prior():
    return PriorSpec(np.zeros(5), 0.2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_cloud(prior, rng):
    return init_cloud(InitSpec().resolved(prior, 5), 20, rng)


def random_theta(rng, d=5, mean_scale=1.0, rho_lo=-3.0, rho_hi=2.0) -> NeuronParam:
    """A parameter point away from scale boundaries, for derivative checks."""
    return NeuronParam(mean_scale * rng.standard_normal(d),
                       float(rng.uniform(rho_lo, rho_hi)))


def central_diff(fn, point: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Componentwise central finite differences of a scalar function."""
    grad = np.empty_like(point, dtype=float)
    for j in range(point.size):
        up = point.copy()
        dn = point.copy()
        up[j] += h
        dn[j] -= h
        grad[j] = (fn(up) - fn(dn)) / (2.0 * h)
    return grad
