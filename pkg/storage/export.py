"""Plotting and debugging exports: legacy VTK displacement fields, MatrixMarket matrices."""

import logging
import os
from typing import Dict, Optional

import numpy as np
import scipy.io

from models.mesh import Mesh
from models.operators import BlockCsrMatrix
from storage.atomic import atomic_write

logger = logging.getLogger(__name__)

VTK_QUADRATIC_TETRA = 24


def write_vtk(mesh: Mesh, path: str, point_vectors: Optional[Dict[str, np.ndarray]] = None, title: str = "tetrasolve") -> None:
    """ASCII legacy unstructured grid; `point_vectors` maps a field name to an (N, 3) array."""
    point_vectors = point_vectors or {}
    n, t = mesh.node_count, mesh.element_count
    with atomic_write(path) as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(f"{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {n} double\n")
        np.savetxt(fh, mesh.coords, fmt="%.17g")
        fh.write(f"CELLS {t} {11 * t}\n")
        np.savetxt(fh, np.hstack([np.full((t, 1), 10), mesh.tets10]), fmt="%d")
        fh.write(f"CELL_TYPES {t}\n")
        np.savetxt(fh, np.full(t, VTK_QUADRATIC_TETRA), fmt="%d")
        fh.write(f"CELL_DATA {t}\nSCALARS material int 1\nLOOKUP_TABLE default\n")
        np.savetxt(fh, mesh.material_id, fmt="%d")
        if point_vectors:
            fh.write(f"POINT_DATA {n}\n")
            for name, values in point_vectors.items():
                values = np.asarray(values, dtype=np.float64).reshape(n, 3)
                fh.write(f"VECTORS {name} double\n")
                np.savetxt(fh, values, fmt="%.17g")
    logger.info(f"Wrote VTK file {path} with fields {list(point_vectors)}")


def write_matrix_market(matrix: BlockCsrMatrix, path: str, comment: str = "") -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    tmp = os.path.join(directory, f".tmp-{os.path.basename(path)}.mtx")
    try:
        scipy.io.mmwrite(tmp, matrix.matrix.tocoo(), comment=comment)
        os.replace(tmp, path)
    except Exception:
        if os.path.exists(tmp):
            os.remove(tmp)
        logger.error(f"Failed to write MatrixMarket file {path}", exc_info=True)
        raise
    logger.info(f"Wrote {matrix.n_block_rows}-block-row matrix to {path}")
