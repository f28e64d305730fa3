"""
Structured box-mesh generation: hex cells split into 6 tets along the main diagonal,
edge nodes appended after all vertex nodes.
"""

from itertools import permutations
from typing import Sequence, Tuple, Union
import logging

import numpy as np
from pydantic import ValidationError as PydanticValidationError

from core.exceptions import ValidationError
from models.mesh import LOCAL_EDGES, LOCAL_FACES, LinearMeshView, Mesh, build_edge_map
from schemas.config import BoxMeshSpec, DirichletPreset

logger = logging.getLogger(__name__)


def _kuhn_templates() -> np.ndarray:
    """6 tets sharing the (0,0,0)-(1,1,1) diagonal, as unit-cube corner offsets, all positively oriented."""
    templates = []
    for perm in permutations(range(3)):
        corner = np.zeros(3, dtype=np.int64)
        tet = [corner.copy()]
        for axis in perm:
            corner[axis] = 1
            tet.append(corner.copy())
        tet = np.array(tet)
        a, b, c = tet[1] - tet[0], tet[2] - tet[0], tet[3] - tet[0]
        if np.dot(a, np.cross(b, c)) < 0:
            tet[[1, 2]] = tet[[2, 1]]
        templates.append(tet)
    return np.array(templates)


def _validated(spec: Union[BoxMeshSpec, dict]) -> BoxMeshSpec:
    try:
        if isinstance(spec, BoxMeshSpec):
            return BoxMeshSpec.model_validate(spec.model_dump())
        return BoxMeshSpec.model_validate(spec)
    except PydanticValidationError as e:
        raise ValidationError(f"invalid box mesh spec: {e}") from e


def _dirichlet_mask(coords: np.ndarray, extents: Tuple[float, float, float], preset: DirichletPreset) -> np.ndarray:
    lx, ly, lz = extents
    tol = 1e-9 * max(extents)
    x, y, z = coords[:, 0], coords[:, 1], coords[:, 2]
    mask = np.zeros(coords.shape, dtype=bool)
    bottom = np.abs(z) <= tol
    mask[bottom, :] = True
    if preset == DirichletPreset.BOTTOM_ONLY:
        return mask
    x_side = (np.abs(x) <= tol) | (np.abs(x - lx) <= tol)
    y_side = (np.abs(y) <= tol) | (np.abs(y - ly) <= tol)
    if preset == DirichletPreset.ROLLER_SIDES:
        mask[x_side, 0] = True
        mask[y_side, 1] = True
    else:
        mask[x_side | y_side, :] = True
    return mask


def insert_edge_nodes(coords: np.ndarray, tets4: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Append one midpoint node per unique edge, numbered by first appearance."""
    vertex_count = coords.shape[0]
    ends = np.array(LOCAL_EDGES)
    pairs = np.sort(tets4[:, ends].reshape(-1, 2), axis=1)
    keys, first, inverse = np.unique(pairs, axis=0, return_index=True, return_inverse=True)
    rank = np.empty(len(keys), dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(len(keys))
    edge_ids = vertex_count + rank[inverse.reshape(-1)].reshape(tets4.shape[0], 6)

    ordered = keys[np.argsort(first, kind="stable")]
    midpoints = 0.5 * (coords[ordered[:, 0]] + coords[ordered[:, 1]])
    tets10 = np.concatenate([tets4, edge_ids], axis=1)
    return np.concatenate([coords, midpoints], axis=0), tets10


def generate_box_mesh(spec: Union[BoxMeshSpec, dict]) -> Mesh:
    spec = _validated(spec)
    lx, ly, lz = spec.extents
    nx, ny, nz = spec.divisions

    xs = np.linspace(0.0, lx, nx + 1)
    ys = np.linspace(0.0, ly, ny + 1)
    zs = np.linspace(0.0, lz, nz + 1)
    gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
    vertex_coords = np.stack([gx.ravel(order="F"), gy.ravel(order="F"), gz.ravel(order="F")], axis=1)

    def vid(i, j, k):
        return i + (nx + 1) * (j + (ny + 1) * k)

    ci, cj, ck = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    ci, cj, ck = ci.ravel(order="F"), cj.ravel(order="F"), ck.ravel(order="F")
    templates = _kuhn_templates()
    tets4 = np.empty((ci.size, 6, 4), dtype=np.int64)
    for t, template in enumerate(templates):
        for v, (dx, dy, dz) in enumerate(template):
            tets4[:, t, v] = vid(ci + dx, cj + dy, ck + dz)
    tets4 = tets4.reshape(-1, 4)

    coords, tets10 = insert_edge_nodes(vertex_coords, tets4)

    centroid_z = vertex_coords[tets4, 2].mean(axis=1)
    interfaces = np.asarray(spec.layer_interfaces, dtype=np.float64)
    # layer 0 is the surface layer; ids grow with depth
    material_id = (interfaces[None, :] > centroid_z[:, None]).sum(axis=1).astype(np.int64)

    mesh = Mesh(
        coords=coords,
        tets10=tets10,
        material_id=material_id,
        vertex_count=vertex_coords.shape[0],
        dirichlet=_dirichlet_mask(coords, spec.extents, spec.fixed_boundary),
        edge_map=build_edge_map(tets10),
    )
    logger.info(
        f"Generated box mesh: {mesh.element_count} tets, {mesh.vertex_count} vertex nodes, "
        f"{mesh.node_count} nodes, {int(mesh.dirichlet.sum())} constrained dofs"
    )
    return mesh


def p1_restrict_view(mesh: Union[Mesh, LinearMeshView]) -> LinearMeshView:
    if isinstance(mesh, LinearMeshView):
        return mesh
    v = mesh.vertex_count
    return LinearMeshView(
        coords=mesh.coords[:v],
        tets4=mesh.tets4,
        material_id=mesh.material_id,
        dirichlet=mesh.dirichlet[:v],
        vertex_count=v,
    )


def face_incidence(tets4: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Unique sorted faces and how many tets share each one."""
    faces = np.sort(tets4[:, np.array(LOCAL_FACES)].reshape(-1, 3), axis=1)
    return np.unique(faces, axis=0, return_counts=True)


def top_surface_nodes(mesh: Mesh) -> np.ndarray:
    z = mesh.coords[:, 2]
    tol = 1e-9 * max(float(np.ptp(mesh.coords, axis=0).max()), 1.0)
    return np.flatnonzero(np.abs(z - z.max()) <= tol)


def plane_faces(mesh: Mesh, axis: int, value: float, lower: Sequence[float], upper: Sequence[float]) -> np.ndarray:
    """
    Interior vertex triangles lying on the plane x[axis] == value whose centroids fall
    inside the box [lower, upper] of the two remaining coordinates. Used to lay
    mesh-aligned faults on structured meshes.
    """
    faces, counts = face_incidence(mesh.tets4)
    faces = faces[counts == 2]
    x = mesh.coords[faces]                              # (F, 3, 3)
    tol = 1e-9 * max(float(np.ptp(mesh.coords, axis=0).max()), 1.0)
    on_plane = np.all(np.abs(x[:, :, axis] - value) <= tol, axis=1)
    others = [a for a in range(3) if a != axis]
    centroid = x.mean(axis=1)[:, others]
    inside = np.all((centroid >= np.asarray(lower) - tol) & (centroid <= np.asarray(upper) + tol), axis=1)
    selected = faces[on_plane & inside]
    logger.debug(f"{len(selected)} interior faces on plane axis {axis} = {value:g}")
    return selected
