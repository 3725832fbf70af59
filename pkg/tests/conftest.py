import math

import numpy as np
import pytest

from cracktip.blowup import CracktipField
from cracktip.geometry import BallSpec, make_crack
from cracktip.mesh import MeshConfig, mesh_disk_with_crack, refine_uniform
from cracktip.solver import CoefficientField, ProblemSpec, assemble_and_solve


@pytest.fixture(scope="session")
def straight_crack():
    return make_crack("segment", endpoints=[(-1.0, 0.0), (0.0, 0.0)])


@pytest.fixture(scope="session")
def diameter_crack():
    return make_crack("diameter", radius=1.0)


@pytest.fixture(scope="session")
def straight_mesh(straight_crack):
    return mesh_disk_with_crack(straight_crack, MeshConfig(target_h=0.1))


@pytest.fixture(scope="session")
def graded_meshes(straight_crack):
    T = mesh_disk_with_crack(straight_crack, MeshConfig(target_h=0.1, tip_grading_exponent=0.7, min_h=2e-5))
    return [T, refine_uniform(T)]


@pytest.fixture(scope="session")
def cracktip():
    return CracktipField(math.pi / 2)


@pytest.fixture(scope="session")
def straight_spec(straight_crack, cracktip):
    return ProblemSpec(BallSpec((0.0, 0.0), 1.0), straight_crack, CoefficientField.identity(), 0.0, None, cracktip)


@pytest.fixture(scope="session")
def straight_solution(straight_spec, graded_meshes):
    return assemble_and_solve(straight_spec, graded_meshes[1])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
