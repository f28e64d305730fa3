"""
Split-node fault slip.

Fault nodes are duplicated: elements on the plus side of the surface keep the
original node, elements on the minus side reference a copy. A prescribed slip
becomes a displacement jump of +delta/2 / -delta/2 on the two copies. The
equivalent nodal force on the unsplit mesh is f = -T^T K_split u_slip, where T
maps every split node to its parent; the total discontinuous field is
T w + u_slip once K w = f has been solved.
"""

from typing import Dict, List, Optional, Sequence, Tuple
import logging

import numpy as np

from core.exceptions import FaultGeometryError, ValidationError
from models.fault import FaultPatch, SlipDirection, UnitSlip
from models.mesh import Mesh, build_edge_map
from models.vectors import VectorBatch
from services.ebe import EbeOperator, ebe_matvec
from services.mesh_generator import face_incidence

logger = logging.getLogger(__name__)

SIDE_TOLERANCE = 1e-9
CENTER_TOLERANCE = 1e-9


def _canonical_normals(coords: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Unit face normals flipped so that n_z > 0, else n_x > 0, else n_y > 0."""
    x = coords[faces]
    n = np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0])
    length = np.linalg.norm(n, axis=1)
    if np.any(length <= 0.0):
        raise FaultGeometryError(f"fault face {int(np.flatnonzero(length <= 0.0)[0])} is degenerate")
    n /= length[:, None]
    eps = 1e-12
    flip = np.where(
        np.abs(n[:, 2]) > eps, n[:, 2] < 0.0, np.where(np.abs(n[:, 0]) > eps, n[:, 0] < 0.0, n[:, 1] < 0.0)
    )
    n[flip] *= -1.0
    return n


def _strike_dip(normals: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    strike = np.cross(np.array([0.0, 0.0, 1.0])[None, :], normals)
    length = np.linalg.norm(strike, axis=1)
    horizontal = length < 1e-9
    strike[horizontal] = np.array([1.0, 0.0, 0.0])
    strike[~horizontal] /= length[~horizontal, None]
    dip = np.cross(strike, normals)
    return strike, dip


def _strike_from_angles(normals: np.ndarray, angles: Tuple[float, float]) -> Tuple[np.ndarray, np.ndarray]:
    strike_deg, dip_deg = angles
    s = np.radians(strike_deg)
    strike = np.tile(np.array([np.sin(s), np.cos(s), 0.0]), (len(normals), 1))
    if np.abs(np.einsum("fi,fi->f", strike, normals)).max() > 1e-6:
        raise FaultGeometryError(f"strike angle {strike_deg} deg is not parallel to the fault surface")
    dip_angle = np.degrees(np.arccos(np.clip(np.abs(normals[:, 2]), 0.0, 1.0)))
    if np.abs(dip_angle - dip_deg).max() > 1e-4:
        raise FaultGeometryError(f"dip angle {dip_deg} deg does not match the fault surface ({dip_angle[0]:.4f} deg)")
    return strike, np.cross(strike, normals)


def _check_surface(mesh: Mesh, faces: np.ndarray) -> np.ndarray:
    """Interior, manifold, away from constrained dofs. Returns the fault node ids (vertices and edge nodes)."""
    if faces.ndim != 2 or faces.shape[1] != 3 or len(faces) == 0:
        raise FaultGeometryError(f"fault faces must be a non-empty (F, 3) array, got shape {faces.shape}")
    if faces.min() < 0 or faces.max() >= mesh.vertex_count:
        raise FaultGeometryError("fault faces must reference vertex nodes")

    unique_faces, counts = face_incidence(mesh.tets4)
    lookup = {tuple(f): int(c) for f, c in zip(unique_faces.tolist(), counts.tolist())}
    for k, face in enumerate(np.sort(faces, axis=1).tolist()):
        count = lookup.get(tuple(face))
        if count is None:
            raise FaultGeometryError(f"fault face {k} {face} is not a face of the mesh")
        if count != 2:
            raise FaultGeometryError(f"fault face {k} {face} lies on the mesh boundary")

    edges = np.sort(faces[:, [[0, 1], [1, 2], [0, 2]]].reshape(-1, 2), axis=1)
    unique_edges, edge_counts = np.unique(edges, axis=0, return_counts=True)
    if np.any(edge_counts > 2):
        bad = unique_edges[np.flatnonzero(edge_counts > 2)[0]]
        raise FaultGeometryError(f"fault surface is non-manifold at edge {tuple(int(v) for v in bad)}")

    edge_map = mesh.edge_map or build_edge_map(mesh.tets10)
    edge_nodes = [edge_map[(int(a), int(b))] for a, b in unique_edges]
    nodes = np.unique(np.concatenate([faces.ravel(), np.asarray(edge_nodes, dtype=np.int64)]))
    touching = nodes[mesh.dirichlet[nodes].any(axis=1)]
    if touching.size:
        raise FaultGeometryError(f"fault node {int(touching[0])} touches a Dirichlet boundary")
    return nodes


def _node_frames(mesh: Mesh, faces: np.ndarray, normals: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    """Average of incident face normals per fault node."""
    edge_map = mesh.edge_map or build_edge_map(mesh.tets10)
    index = {int(n): k for k, n in enumerate(nodes)}
    acc = np.zeros((len(nodes), 3))
    for f, (a, b, c) in enumerate(faces.tolist()):
        members = [a, b, c] + [edge_map[(min(i, j), max(i, j))] for i, j in ((a, b), (b, c), (a, c))]
        for node in members:
            acc[index[node]] += normals[f]
    return acc / np.linalg.norm(acc, axis=1)[:, None]


def split_nodes(
    mesh: Mesh, fault_faces: Sequence[Sequence[int]], angles: Optional[Tuple[float, float]] = None
) -> Tuple[Mesh, FaultPatch]:
    """Duplicate the nodes of a mesh-aligned interior fault surface."""
    faces = np.asarray(fault_faces, dtype=np.int64)
    nodes = _check_surface(mesh, faces)
    normals = _canonical_normals(mesh.coords, faces)
    strike, dip = _strike_from_angles(normals, angles) if angles is not None else _strike_dip(normals)

    node_normal = _node_frames(mesh, faces, normals, nodes)
    node_strike, node_dip = (
        _strike_from_angles(node_normal, angles) if angles is not None else _strike_dip(node_normal)
    )

    v = mesh.vertex_count
    fault_vertices = nodes[nodes < v]
    fault_edges = nodes[nodes >= v]
    kv, ke = len(fault_vertices), len(fault_edges)
    n = mesh.node_count

    # split numbering: vertices, vertex copies, edge nodes (shifted), edge copies
    shift = np.where(np.arange(n) < v, np.arange(n), np.arange(n) + kv)
    copy_of = {int(p): v + k for k, p in enumerate(fault_vertices)}
    copy_of.update({int(p): n + kv + k for k, p in enumerate(fault_edges)})
    n_split = n + kv + ke
    parent_of = np.empty(n_split, dtype=np.int64)
    parent_of[shift] = np.arange(n)
    for p, c in copy_of.items():
        parent_of[c] = p

    tets10 = shift[mesh.tets10]
    is_fault = np.zeros(n, dtype=bool)
    is_fault[nodes] = True
    frame_row = {int(p): k for k, p in enumerate(nodes)}
    h = float(np.ptp(mesh.coords, axis=0).max())
    touched = np.flatnonzero(is_fault[mesh.tets10].any(axis=1))
    for e in touched:
        vertex_x = mesh.coords[mesh.tets10[e, :4]]
        for slot in np.flatnonzero(is_fault[mesh.tets10[e]]):
            parent = int(mesh.tets10[e, slot])
            normal = node_normal[frame_row[parent]]
            side = float(np.sum((vertex_x - mesh.coords[parent]) @ normal))
            if abs(side) <= SIDE_TOLERANCE * h:
                raise FaultGeometryError(f"element {int(e)} lies in the fault plane at node {parent}")
            if side < 0.0:
                tets10[e, slot] = copy_of[parent]

    coords = mesh.coords[parent_of]
    split_mesh = Mesh(
        coords=coords,
        tets10=tets10,
        material_id=mesh.material_id.copy(),
        vertex_count=v + kv,
        dirichlet=mesh.dirichlet[parent_of].copy(),
        edge_map=build_edge_map(tets10),
    )
    split_table: Dict[int, Tuple[int, int]] = {int(p): (int(shift[p]), c) for p, c in copy_of.items()}
    patch = FaultPatch(
        faces=faces,
        normals=normals,
        strike=strike,
        dip=dip,
        fault_nodes=nodes,
        node_coords=mesh.coords[nodes].copy(),
        node_normal=node_normal,
        node_strike=node_strike,
        node_dip=node_dip,
        split_table=split_table,
        parent_of=parent_of,
    )
    logger.info(
        f"Split {len(faces)} fault faces: {kv} vertex and {ke} edge nodes duplicated, "
        f"{mesh.node_count} -> {split_mesh.node_count} nodes"
    )
    return split_mesh, patch


def bspline_bell(r: np.ndarray, radius: float) -> np.ndarray:
    """Quadratic B-spline of distance, peak 1 at r = 0, zero for r >= radius."""
    t = 1.5 * np.abs(np.asarray(r, dtype=np.float64)) / radius
    b = np.where(t <= 0.5, 0.75 - t * t, np.where(t < 1.5, 0.5 * (1.5 - t) ** 2, 0.0))
    return b / 0.75


def unit_slip_basis(patch: FaultPatch, center, direction: SlipDirection, radius: float) -> UnitSlip:
    if radius <= 0.0:
        raise ValidationError(f"unit slip radius must be positive, got {radius}")
    center = np.asarray(center, dtype=np.float64)
    dist = np.linalg.norm(patch.node_coords - center[None, :], axis=1)
    scale = max(float(np.abs(patch.node_coords).max()), 1.0)
    if dist.min() > CENTER_TOLERANCE * scale:
        raise FaultGeometryError(f"unit slip center {tuple(center.tolist())} is not a fault node")
    phi = bspline_bell(dist, radius)
    support = np.flatnonzero(phi > 0.0)
    return UnitSlip(
        center=center,
        direction=SlipDirection(direction),
        radius=float(radius),
        nodes=patch.fault_nodes[support].copy(),
        magnitude=phi[support],
    )


def build_unit_slips(patch: FaultPatch, centers: Sequence, radius: float) -> List[UnitSlip]:
    """All strike slips, then all dip slips, each in center order."""
    return [
        unit_slip_basis(patch, c, direction, radius)
        for direction in (SlipDirection.STRIKE, SlipDirection.DIP)
        for c in centers
    ]


def prescribed_displacement(patch: FaultPatch, slips: Sequence[UnitSlip], n_split: int) -> np.ndarray:
    """(n_split, 3, B) field with +delta/2 on plus copies and -delta/2 on minus copies."""
    index = patch.node_index
    u = np.zeros((n_split, 3, len(slips)))
    for j, slip in enumerate(slips):
        rows = []
        for node in slip.nodes:
            row = index.get(int(node))
            if row is None:
                raise FaultGeometryError(f"slip prescribed on node {int(node)}, which is not a fault node")
            rows.append(row)
        rows = np.asarray(rows, dtype=np.int64)
        delta = slip.magnitude[:, None] * patch.direction_vectors(slip.direction)[rows]
        plus = np.array([patch.split_table[int(n)][0] for n in slip.nodes], dtype=np.int64)
        minus = np.array([patch.split_table[int(n)][1] for n in slip.nodes], dtype=np.int64)
        u[plus, :, j] += 0.5 * delta
        u[minus, :, j] -= 0.5 * delta
    return u


def fold_to_parent(patch: FaultPatch, values: np.ndarray, n_parent: int) -> np.ndarray:
    """T^T v: sum split-node rows onto their parents."""
    out = np.zeros((n_parent,) + values.shape[1:], dtype=values.dtype)
    np.add.at(out, patch.parent_of, values)
    return out


def slips_to_rhs(
    split_op: EbeOperator, patch: FaultPatch, slips: Sequence[UnitSlip], n_parent: int
) -> Tuple[VectorBatch, VectorBatch]:
    """Equivalent parent-mesh forces and the prescribed split-mesh displacement, one column per slip."""
    u_slip = VectorBatch(prescribed_displacement(patch, slips, split_op.node_count))
    f_split = ebe_matvec(split_op, u_slip)
    f = -fold_to_parent(patch, f_split.data, n_parent)
    return VectorBatch(f), u_slip


def slip_to_rhs(
    split_op: EbeOperator, patch: FaultPatch, slip: UnitSlip, n_parent: int
) -> Tuple[VectorBatch, VectorBatch]:
    return slips_to_rhs(split_op, patch, [slip], n_parent)


def expand_to_split(patch: FaultPatch, w: VectorBatch, u_slip: VectorBatch) -> VectorBatch:
    """Total displacement on the split mesh: T w + u_slip."""
    return VectorBatch(w.data[patch.parent_of] + u_slip.data)


def slip_jump(patch: FaultPatch, u_split: VectorBatch) -> np.ndarray:
    """u_plus - u_minus at every fault node, (K, 3, B)."""
    plus = np.array([patch.split_table[int(n)][0] for n in patch.fault_nodes], dtype=np.int64)
    minus = np.array([patch.split_table[int(n)][1] for n in patch.fault_nodes], dtype=np.int64)
    return u_split.data[plus] - u_split.data[minus]
