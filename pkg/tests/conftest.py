import numpy as np
import pytest

from latentgrasp.geometry import Pose, so3_exp


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform-ish random rotation with angle bounded away from pi."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, np.pi - 1e-2)
    return so3_exp(axis * angle)


def random_pose(rng: np.random.Generator, trans_scale: float = 0.5) -> Pose:
    return Pose(random_rotation(rng), rng.uniform(-trans_scale, trans_scale, size=3))


@pytest.fixture
def rng():
    return np.random.default_rng(0)
