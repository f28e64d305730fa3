"""
Isotropic linear elasticity on straight-sided 4-node and 10-node tetrahedra.

Gradients of the barycentric coordinates are constant on a straight tet, so the
shape-function gradients of both element orders are fixed linear combinations of
them. Voigt order is (xx, yy, zz, xy, yz, zx) with engineering shear strains.
"""

from dataclasses import dataclass
from typing import Sequence, Tuple
import logging

import numpy as np

from core.exceptions import DegenerateElementError, ValidationError
from models.material import Material
from models.mesh import LOCAL_EDGES

logger = logging.getLogger(__name__)

# 4-point symmetric rule on the reference tet, exact for degree 2
_QA = 0.5854101966249685
_QB = 0.1381966011250105
TET10_QUAD_POINTS = np.array(
    [
        [_QA, _QB, _QB, _QB],
        [_QB, _QA, _QB, _QB],
        [_QB, _QB, _QA, _QB],
        [_QB, _QB, _QB, _QA],
    ]
)
TET10_QUAD_WEIGHTS = np.full(4, 0.25)   # fractions of the element volume


def material_from_wavespeeds(vp: float, vs: float, rho: float) -> Material:
    if vp <= 0.0 or vs <= 0.0 or rho <= 0.0:
        raise ValidationError(f"wave speeds and density must be positive, got vp={vp}, vs={vs}, rho={rho}")
    if vp * vp <= 2.0 * vs * vs:
        raise ValidationError(f"non-physical material: vp^2 <= 2 vs^2 (vp={vp}, vs={vs})")
    mu = rho * vs * vs
    lam = rho * (vp * vp - 2.0 * vs * vs)
    return Material(vp=float(vp), vs=float(vs), rho=float(rho), lam=float(lam), mu=float(mu))


def elasticity_matrix(lam: float, mu: float) -> np.ndarray:
    d = np.zeros((6, 6))
    d[:3, :3] = lam
    d[[0, 1, 2], [0, 1, 2]] = lam + 2.0 * mu
    d[[3, 4, 5], [3, 4, 5]] = mu
    return d


def _gradient_coefficients(order: int) -> Tuple[np.ndarray, np.ndarray]:
    """C[q, a, k] such that grad N_a(x_q) = sum_k C[q, a, k] grad L_k, and the quadrature weights."""
    if order == 1:
        return np.eye(4)[None, :, :], np.ones(1)
    coeff = np.zeros((4, 10, 4))
    for q, lam in enumerate(TET10_QUAD_POINTS):
        for i in range(4):
            coeff[q, i, i] = 4.0 * lam[i] - 1.0
        for k, (i, j) in enumerate(LOCAL_EDGES):
            coeff[q, 4 + k, i] = 4.0 * lam[j]
            coeff[q, 4 + k, j] = 4.0 * lam[i]
    return coeff, TET10_QUAD_WEIGHTS


def barycentric_gradients(vertex_coords: np.ndarray, first_element: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """grad L_k per element (E, 4, 3) and element volumes (E,). vertex_coords is (E, 4, 3)."""
    a = vertex_coords[:, 1] - vertex_coords[:, 0]
    b = vertex_coords[:, 2] - vertex_coords[:, 0]
    c = vertex_coords[:, 3] - vertex_coords[:, 0]
    bc, ca, ab = np.cross(b, c), np.cross(c, a), np.cross(a, b)
    det = np.einsum("ei,ei->e", a, bc)
    scale = np.maximum(np.abs(a).max(axis=1), 1e-300) ** 3
    bad = np.flatnonzero(det <= 1e-14 * scale)
    if bad.size:
        raise DegenerateElementError(first_element + int(bad[0]), float(det[bad[0]] / 6.0))
    grads = np.empty((vertex_coords.shape[0], 4, 3))
    grads[:, 1] = bc / det[:, None]
    grads[:, 2] = ca / det[:, None]
    grads[:, 3] = ab / det[:, None]
    grads[:, 0] = -(grads[:, 1] + grads[:, 2] + grads[:, 3])
    return grads, det / 6.0


def shape_gradients(vertex_coords: np.ndarray, order: int, first_element: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """Physical shape-function gradients dN (E, Q, A, 3) and quadrature weights times volume (E, Q)."""
    grads, volume = barycentric_gradients(vertex_coords, first_element)
    coeff, weights = _gradient_coefficients(order)
    dn = np.einsum("qak,ekj->eqaj", coeff, grads)
    return dn, volume[:, None] * weights[None, :]


def strain_displacement(dn: np.ndarray) -> np.ndarray:
    """B matrices (..., 6, 3A) from gradients (..., A, 3)."""
    n_nodes = dn.shape[-2]
    b = np.zeros(dn.shape[:-2] + (6, 3 * n_nodes))
    dx, dy, dz = dn[..., 0], dn[..., 1], dn[..., 2]
    b[..., 0, 0::3] = dx
    b[..., 1, 1::3] = dy
    b[..., 2, 2::3] = dz
    b[..., 3, 0::3] = dy
    b[..., 3, 1::3] = dx
    b[..., 4, 1::3] = dz
    b[..., 4, 2::3] = dy
    b[..., 5, 0::3] = dz
    b[..., 5, 2::3] = dx
    return b


def element_stiffness_batch(
    vertex_coords: np.ndarray, lam: np.ndarray, mu: np.ndarray, order: int, first_element: int = 0
) -> Tuple[np.ndarray, np.ndarray]:
    """Dense element matrices (E, 3A, 3A) and volumes via sum_q w_q V B^T D B."""
    dn, wvol = shape_gradients(vertex_coords, order, first_element)
    b = strain_displacement(dn)
    d = np.zeros((len(lam), 6, 6))
    d[:, :3, :3] = lam[:, None, None]
    d[:, [0, 1, 2], [0, 1, 2]] += 2.0 * mu[:, None]
    d[:, [3, 4, 5], [3, 4, 5]] = mu[:, None]
    db = np.einsum("est,eqtj->eqsj", d, b)
    k = np.einsum("eq,eqsi,eqsj->eij", wvol, b, db)
    return k, wvol.sum(axis=1)


@dataclass(eq=False)
class ElementStiffness:
    k: np.ndarray
    volume: float


def _single(coords: Sequence, mat: Material, order: int, n_nodes: int) -> ElementStiffness:
    x = np.asarray(coords, dtype=np.float64)
    if x.shape != (n_nodes, 3):
        raise ValidationError(f"expected {n_nodes} node coordinates, got shape {x.shape}")
    if order == 2:
        ends = np.array(LOCAL_EDGES)
        mid = 0.5 * (x[ends[:, 0]] + x[ends[:, 1]])
        scale = max(float(np.abs(x).max()), 1.0)
        if np.abs(mid - x[4:]).max() > 1e-10 * scale:
            raise ValidationError("tet10 edge nodes must sit at edge midpoints (straight-sided element)")
    k, volume = element_stiffness_batch(x[None, :4], np.array([mat.lam]), np.array([mat.mu]), order)
    return ElementStiffness(k=k[0], volume=float(volume[0]))


def element_stiffness_tet4(coords: Sequence, mat: Material) -> ElementStiffness:
    return _single(coords, mat, order=1, n_nodes=4)


def element_stiffness_tet10(coords: Sequence, mat: Material) -> ElementStiffness:
    return _single(coords, mat, order=2, n_nodes=10)


def material_arrays(materials: Sequence[Material], material_id: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    if material_id.size and int(material_id.max()) >= len(materials):
        raise ValidationError(
            f"mesh references material id {int(material_id.max())} but only {len(materials)} materials are defined"
        )
    lam = np.array([m.lam for m in materials])
    mu = np.array([m.mu for m in materials])
    return lam[material_id], mu[material_id]
