import numpy as np
import pytest

from core.exceptions import DegenerateElementError, ValidationError
from models.mesh import LOCAL_EDGES
from services.elasticity import (
    element_stiffness_tet4,
    element_stiffness_tet10,
    elasticity_matrix,
    material_arrays,
    material_from_wavespeeds,
)
from services.verification import rigid_body_modes

REFERENCE_TET = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])


def tet10_coords(vertices):
    mids = [0.5 * (vertices[i] + vertices[j]) for i, j in LOCAL_EDGES]
    return np.vstack([vertices, mids])


def test_surface_layer_moduli(materials):
    soft, hard = materials
    assert soft.mu == pytest.approx(2.96e8, rel=1e-12)
    assert soft.lam == pytest.approx(4.144e9, rel=1e-12)
    assert hard.mu == pytest.approx(2.43e10, rel=1e-12)
    assert hard.lam == pytest.approx(4.2228e10, rel=1e-12)


@pytest.mark.parametrize("vp,vs,rho", [(1000.0, 800.0, 2000.0), (1000.0, 0.0, 2000.0), (1000.0, 300.0, -1.0)])
def test_nonphysical_materials_rejected(vp, vs, rho):
    with pytest.raises(ValidationError):
        material_from_wavespeeds(vp, vs, rho)


def test_elasticity_matrix_layout():
    d = elasticity_matrix(2.0, 3.0)
    assert d[0, 0] == 8.0
    assert d[0, 1] == 2.0
    assert d[3, 3] == 3.0
    np.testing.assert_array_equal(d, d.T)


def test_tet4_volume_and_symmetry(materials):
    ke = element_stiffness_tet4(REFERENCE_TET, materials[1])
    assert ke.volume == pytest.approx(1.0 / 6.0)
    assert ke.k.shape == (12, 12)
    np.testing.assert_allclose(ke.k, ke.k.T, rtol=0, atol=1e-12 * np.abs(ke.k).max())


@pytest.mark.parametrize("order", [4, 10])
def test_rigid_body_modes_are_in_the_kernel(materials, order):
    rng = np.random.default_rng(7)
    vertices = REFERENCE_TET + 0.05 * rng.standard_normal((4, 3))
    if order == 4:
        coords = vertices
        ke = element_stiffness_tet4(coords, materials[0])
    else:
        coords = tet10_coords(vertices)
        ke = element_stiffness_tet10(coords, materials[0])
    modes = rigid_body_modes(coords).reshape(3 * order, 6)
    forces = ke.k @ modes
    assert np.abs(forces).max() <= 1e-10 * np.abs(ke.k).max()


def test_tet10_positive_semidefinite_with_six_zero_modes(materials):
    ke = element_stiffness_tet10(tet10_coords(REFERENCE_TET), materials[1])
    eig = np.linalg.eigvalsh(ke.k)
    scale = eig.max()
    assert np.all(eig > -1e-10 * scale)
    assert (eig < 1e-10 * scale).sum() == 6


def test_tet10_requires_midpoint_edge_nodes(materials):
    coords = tet10_coords(REFERENCE_TET)
    coords[5] += 0.05
    with pytest.raises(ValidationError):
        element_stiffness_tet10(coords, materials[0])


def test_flat_tet_is_degenerate(materials):
    flat = REFERENCE_TET.copy()
    flat[3, 2] = 0.0
    with pytest.raises(DegenerateElementError):
        element_stiffness_tet4(flat, materials[0])


def test_material_arrays_reject_unknown_ids(materials):
    with pytest.raises(ValidationError):
        material_arrays(materials, np.array([0, 1, 2]))
    lam, mu = material_arrays(materials, np.array([1, 0]))
    assert mu[0] == materials[1].mu
    assert lam[1] == materials[0].lam
