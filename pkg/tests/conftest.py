import numpy as np
import pytest

from slim.data import SkeletonSequence, SkeletonTopology, kinect25


@pytest.fixture(scope="session")
def topo() -> SkeletonTopology:
    return kinect25()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)


@pytest.fixture
def chain3() -> SkeletonTopology:
    """Minimal 3-joint chain 0 -> 1 -> 2 in one group."""
    return SkeletonTopology(
        num_joints=3,
        parents=[0, 0, 1],
        groups=[("chain", [0, 1, 2])],
        swap_pairs=[],
    )


def random_sequence(rng: np.random.Generator, frames=16, joints=25, scale=1.0) -> SkeletonSequence:
    return SkeletonSequence(rng.normal(0.0, scale, size=(frames, joints, 3)))


@pytest.fixture
def seq25(rng) -> SkeletonSequence:
    return random_sequence(rng)
