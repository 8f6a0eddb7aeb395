import numpy as np
import pytest

from egoreg.geometry import Intrinsics, Pose


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform-ish random rotation via QR with a positive diagonal."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 2] = -q[:, 2]
    return q


def random_pose(rng: np.random.Generator, t_scale: float = 1.0) -> Pose:
    return Pose(random_rotation(rng), rng.normal(scale=t_scale, size=3))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def intrinsics():
    return Intrinsics(300.0, 300.0, 160.0, 120.0, 320, 240)
