import numpy as np
import pytest

from robust_inekf import lie


@pytest.fixture
def rng():
    return np.random.default_rng(20240613)


def random_rotation(rng, max_angle=np.pi - 1e-3):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return lie.so3_exp(axis * rng.uniform(0.0, max_angle))


def random_group_element(rng, k=3, scale=1.0, max_angle=np.pi - 1e-3):
    return lie.GroupElement(
        random_rotation(rng, max_angle), rng.normal(scale=scale, size=(k, 3))
    )


def assert_group_close(x, y, atol=1e-12):
    np.testing.assert_allclose(x.rot, y.rot, atol=atol, rtol=0.0)
    np.testing.assert_allclose(x.trans, y.trans, atol=atol, rtol=0.0)
