"""Right-hand-side builders for solves that do not come from fault slip."""

from typing import Tuple
import logging

import numpy as np

from models.mesh import LOCAL_FACES, Mesh
from models.vectors import Precision, VectorBatch
from services.ebe import EbeOperator, ebe_matvec
from services.mesh_generator import top_surface_nodes

logger = logging.getLogger(__name__)


def manufactured_rhs(op: EbeOperator, columns: int, seed: int = 0) -> Tuple[VectorBatch, VectorBatch]:
    """Random u* (zero on constrained dofs) and f = K u*."""
    rng = np.random.default_rng(seed)
    data = rng.standard_normal((op.node_count, 3, columns))
    data[op.fixed] = 0.0
    u_star = VectorBatch(data)
    return ebe_matvec(op.with_precision(Precision.DOUBLE), u_star), u_star


def surface_load_rhs(mesh: Mesh, load: float, columns: int = 1) -> VectorBatch:
    """Uniform vertical traction `load` (Pa) on the top face, lumped onto vertex nodes of top triangles."""
    top = np.zeros(mesh.node_count, dtype=bool)
    top[top_surface_nodes(mesh)] = True
    f = np.zeros((mesh.node_count, 3, columns))
    faces = mesh.tets4[:, np.array(LOCAL_FACES)].reshape(-1, 3)
    on_top = top[faces].all(axis=1)
    for face in faces[on_top]:
        x = mesh.coords[face]
        area = 0.5 * np.linalg.norm(np.cross(x[1] - x[0], x[2] - x[0]))
        f[face, 2, :] += load * area / 3.0
    f[mesh.dirichlet] = 0.0
    logger.info(f"Surface load {load:g} Pa on {int(on_top.sum())} top faces")
    return VectorBatch(f)


def point_force_rhs(n_nodes: int, node: int, axis: int, magnitude: float = 1.0) -> VectorBatch:
    f = np.zeros((n_nodes, 3, 1))
    f[node, axis, 0] = magnitude
    return VectorBatch(f)
