import numpy as np
import pytest

from schemas.config import SolverConfig
from services.elasticity import material_from_wavespeeds
from services.mesh_generator import generate_box_mesh, plane_faces
from services.multigrid import build_hierarchy


@pytest.fixture
def materials():
    """Soft surface layer over stiff bedrock."""
    return [
        material_from_wavespeeds(1600.0, 400.0, 1850.0),
        material_from_wavespeeds(5800.0, 3000.0, 2700.0),
    ]


@pytest.fixture
def bedrock(materials):
    return [materials[1]]


@pytest.fixture
def unit_cube():
    return generate_box_mesh({"extents": (1.0, 1.0, 1.0), "divisions": (1, 1, 1)})


@pytest.fixture
def two_cells():
    return generate_box_mesh({"extents": (2.0, 1.0, 1.0), "divisions": (2, 1, 1)})


@pytest.fixture
def layered_box():
    return generate_box_mesh(
        {"extents": (4.0, 4.0, 2.0), "divisions": (4, 4, 2), "layer_interfaces": [1.0]}
    )


@pytest.fixture
def free_box():
    """Bottom fixed only, so the sides can move."""
    return generate_box_mesh(
        {"extents": (3.0, 2.0, 2.0), "divisions": (3, 2, 2), "fixed_boundary": "bottom_only"}
    )


@pytest.fixture
def fault_box():
    """4 x 4 x 4 cells of 1 m with room for a fault away from every constrained face."""
    return generate_box_mesh({"extents": (4.0, 4.0, 4.0), "divisions": (4, 4, 4)})


@pytest.fixture
def square_fault(fault_box):
    """Two triangles on x = 2 covering y, z in [1, 2]."""
    return plane_faces(fault_box, 0, 2.0, (1.0, 1.0), (2.0, 2.0))


@pytest.fixture
def wide_fault(fault_box):
    """Eight triangles on x = 2 covering y, z in [1, 3]."""
    return plane_faces(fault_box, 0, 2.0, (1.0, 1.0), (3.0, 3.0))


@pytest.fixture
def hierarchy(layered_box, materials):
    return build_hierarchy(layered_box, materials, aggregate_size=8)


@pytest.fixture
def tight_solver():
    return SolverConfig(outer_tol=1e-22, batch_size=4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

