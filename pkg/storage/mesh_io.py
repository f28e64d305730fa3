"""
Mesh text format:

    TSMESH 1
    nodes N vertex_nodes V tets T
    x y z                      (N lines)
    n0 .. n9 material          (T lines, 0-based)

Constrained dofs live in `<path>.dirichlet` as `node axis` lines.
"""

import logging
import os

import numpy as np

from core.exceptions import MeshFormatError
from models.mesh import Mesh, build_edge_map
from storage.atomic import atomic_write
from storage.reader import TokenReader

logger = logging.getLogger(__name__)

MAGIC = "TSMESH"
VERSION = "1"


def dirichlet_path(path: str) -> str:
    return f"{path}.dirichlet"


def write_mesh(mesh: Mesh, path: str) -> None:
    with atomic_write(path) as fh:
        fh.write(f"{MAGIC} {VERSION}\n")
        fh.write(f"nodes {mesh.node_count} vertex_nodes {mesh.vertex_count} tets {mesh.element_count}\n")
        for x, y, z in mesh.coords.tolist():
            fh.write(f"{x!r} {y!r} {z!r}\n")
        for row, material in zip(mesh.tets10.tolist(), mesh.material_id.tolist()):
            fh.write(" ".join(str(n) for n in row) + f" {material}\n")
    nodes, axes = np.nonzero(mesh.dirichlet)
    with atomic_write(dirichlet_path(path)) as fh:
        for node, axis in zip(nodes.tolist(), axes.tolist()):
            fh.write(f"{node} {axis}\n")
    logger.info(f"Wrote mesh {path} ({mesh.node_count} nodes, {mesh.element_count} tets)")


def _read_dirichlet(path: str, n_nodes: int) -> np.ndarray:
    mask = np.zeros((n_nodes, 3), dtype=bool)
    sidecar = dirichlet_path(path)
    if not os.path.exists(sidecar):
        logger.warning(f"No Dirichlet sidecar {sidecar}, all dofs free")
        return mask
    reader = TokenReader.open(sidecar, MeshFormatError)
    while not reader.at_end():
        node_s, axis_s = reader.next(2, "dirichlet entry")
        node = reader.convert(node_s, int, "node id")
        axis = reader.convert(axis_s, int, "axis")
        if not (0 <= node < n_nodes) or axis not in (0, 1, 2):
            raise reader.fail(f"dirichlet entry ({node}, {axis}) out of range")
        mask[node, axis] = True
    return mask


def read_mesh(path: str) -> Mesh:
    reader = TokenReader.open(path, MeshFormatError)
    version = reader.keyword(MAGIC)
    if version != [VERSION]:
        raise reader.fail(f"unsupported mesh version {' '.join(version)}")
    header = reader.next(6, "size line")
    if header[0::2] != ["nodes", "vertex_nodes", "tets"]:
        raise reader.fail("expected 'nodes N vertex_nodes V tets T'")
    n, v, t = (reader.convert(s, int, "count") for s in header[1::2])
    if n < 0 or t < 0 or not (0 <= v <= n):
        raise reader.fail(f"inconsistent sizes nodes={n} vertex_nodes={v} tets={t}")

    coords = np.empty((n, 3))
    for i in range(n):
        coords[i] = [reader.convert(s, float, "coordinate") for s in reader.next(3, f"node {i}")]
    tets10 = np.empty((t, 10), dtype=np.int64)
    material_id = np.empty(t, dtype=np.int64)
    for e in range(t):
        fields = [reader.convert(s, int, "node id") for s in reader.next(11, f"tet {e}")]
        if min(fields[:10]) < 0 or max(fields[:10]) >= n:
            raise reader.fail(f"tet {e} references a node outside 0..{n - 1}")
        if fields[10] < 0:
            raise reader.fail(f"tet {e} has negative material id {fields[10]}")
        tets10[e] = fields[:10]
        material_id[e] = fields[10]
    if not reader.at_end():
        raise reader.fail("trailing records after the last tet", reader.line)

    mesh = Mesh(
        coords=coords,
        tets10=tets10,
        material_id=material_id,
        vertex_count=v,
        dirichlet=_read_dirichlet(path, n),
        edge_map=build_edge_map(tets10),
    )
    mesh.validate()
    logger.info(f"Read mesh {path} ({n} nodes, {t} tets)")
    return mesh
