import numpy as np
import pytest

from posekit.geometry import EulerAngles, Se3Pose, euler_to_quat


def random_quat(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


def random_pose(rng: np.random.Generator, scale: float = 1.0) -> Se3Pose:
    return Se3Pose(rng.uniform(-scale, scale, size=3), random_quat(rng))


def yaw_pose(x: float, y: float, z: float, yaw: float) -> Se3Pose:
    return Se3Pose(np.array([x, y, z]), euler_to_quat(EulerAngles(0.0, 0.0, yaw)))


def quat_dist(q1: np.ndarray, q2: np.ndarray) -> float:
    """Double-cover-aware componentwise distance."""
    return min(float(np.linalg.norm(q1 - q2)), float(np.linalg.norm(q1 + q2)))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240811)
