"""
Element-by-element operator kernels.

f = sum_e Q_e K_e Q_e^T u is evaluated for all batch columns in one pass over the
elements. Element matrices are never stored: each matvec recomputes the element
geometry and applies K_e in strain form (grad u -> stress -> nodal forces).
The serial path scatters through a CSR incidence matrix, so every nodal sum runs
in ascending element order. With workers > 1 elements are processed color by
color; elements of one color share no node.
"""

from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Union
import logging

import numpy as np
import scipy.sparse as sp

from core.exceptions import DimensionMismatchError, SingularBlockError
from models.material import Material
from models.mesh import LinearMeshView, Mesh
from models.operators import BlockCsrMatrix, BlockJacobi
from models.vectors import Precision, VectorBatch
from services.elasticity import element_stiffness_batch, material_arrays, shape_gradients

logger = logging.getLogger(__name__)

CHUNK_ELEMENTS = 4096


def color_elements(tets4: np.ndarray) -> List[np.ndarray]:
    """Greedy coloring: no two elements of one color share a vertex (hence no node)."""
    node_used = [0] * (int(tets4.max()) + 1 if tets4.size else 0)
    colors = np.empty(len(tets4), dtype=np.int64)
    for e, nodes in enumerate(tets4.tolist()):
        used = 0
        for n in nodes:
            used |= node_used[n]
        c = (~used & (used + 1)).bit_length() - 1
        colors[e] = c
        bit = 1 << c
        for n in nodes:
            node_used[n] |= bit
    return [np.flatnonzero(colors == c) for c in range(int(colors.max()) + 1 if colors.size else 0)]


class EbeOperator:
    """Matrix-free stiffness operator on a P2 mesh (order 2) or its P1 view (order 1)."""

    def __init__(
        self,
        mesh: Union[Mesh, LinearMeshView],
        materials: Sequence[Material],
        precision: Precision = Precision.DOUBLE,
        workers: int = 1,
        mask_dirichlet: bool = True,
    ):
        self.mesh = mesh
        self.order = mesh.order
        self.materials = list(materials)
        self.precision = precision
        self.workers = max(int(workers), 1)
        self.elements = np.ascontiguousarray(mesh.elements)
        self.n_nodes = mesh.node_count
        self.nodes_per_element = self.elements.shape[1]
        self.lam, self.mu = material_arrays(self.materials, mesh.material_id)

        if mask_dirichlet:
            self.fixed = np.asarray(mesh.dirichlet, dtype=bool).copy()
        else:
            self.fixed = np.zeros((self.n_nodes, 3), dtype=bool)
        self.free = (~self.fixed).astype(np.float64)

        n_elem, n_local = self.elements.shape
        self.scatter = sp.csr_matrix(
            (np.ones(n_elem * n_local), (self.elements.ravel(), np.arange(n_elem * n_local))),
            shape=(self.n_nodes, n_elem * n_local),
        )
        self.scatter.sort_indices()

        self._colors: Optional[List[np.ndarray]] = None
        self._pool: Optional[ThreadPoolExecutor] = None
        if self.workers > 1:
            self._colors = color_elements(self.elements[:, :4])
            self._pool = ThreadPoolExecutor(max_workers=self.workers)
            logger.info(f"EBE order {self.order}: {len(self._colors)} element colors for {self.workers} workers")

    def close(self) -> None:
        """Shut down the scatter pool; precision clones share it."""
        if self._pool is not None:
            self._pool.shutdown(wait=True)
            self._pool = None
            self._colors = None
            self.workers = 1

    @property
    def closed(self) -> bool:
        return self._pool is None

    def __enter__(self) -> "EbeOperator":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    @property
    def node_count(self) -> int:
        return self.n_nodes

    @property
    def element_count(self) -> int:
        return int(self.elements.shape[0])

    def with_precision(self, precision: Precision) -> "EbeOperator":
        clone = object.__new__(EbeOperator)
        clone.__dict__.update(self.__dict__)
        clone.precision = precision
        return clone

    def element_forces(self, ids: np.ndarray, ue: np.ndarray) -> np.ndarray:
        """K_e u_e for elements `ids`; ue is (E', A, 3, B) float64."""
        vertex_coords = self.mesh.coords[self.elements[ids, :4]]
        first = int(ids[0]) if len(ids) else 0
        dn, wvol = shape_gradients(vertex_coords, self.order, first)
        g = np.einsum("eqaj,eaib->eqijb", dn, ue)
        trace = g[:, :, 0, 0] + g[:, :, 1, 1] + g[:, :, 2, 2]
        mu = self.mu[ids][:, None, None, None, None]
        sigma = mu * (g + g.transpose(0, 1, 3, 2, 4))
        lam_tr = self.lam[ids][:, None, None] * trace
        for i in range(3):
            sigma[:, :, i, i, :] += lam_tr
        sigma *= wvol[:, :, None, None, None]
        return np.einsum("eqijb,eqaj->eaib", sigma, dn)

    def element_matrices(self) -> np.ndarray:
        """Dense (E, 3A, 3A) element matrices, for assembly and oracles only."""
        vertex_coords = self.mesh.coords[self.elements[:, :4]]
        k, _ = element_stiffness_batch(vertex_coords, self.lam, self.mu, self.order)
        return k

    def _apply_serial(self, x: np.ndarray) -> np.ndarray:
        n_elem, n_local = self.elements.shape
        batch = x.shape[2]
        fe = np.empty((n_elem, n_local, 3, batch))
        for start in range(0, n_elem, CHUNK_ELEMENTS):
            ids = np.arange(start, min(start + CHUNK_ELEMENTS, n_elem))
            fe[ids] = self.element_forces(ids, x[self.elements[ids]])
        f = self.scatter @ fe.reshape(n_elem * n_local, 3 * batch)
        return np.asarray(f).reshape(self.n_nodes, 3, batch)

    def _apply_colored(self, x: np.ndarray) -> np.ndarray:
        batch = x.shape[2]
        f = np.zeros((self.n_nodes, 3 * batch))

        def work(ids):
            return ids, self.element_forces(ids, x[self.elements[ids]])

        for color in self._colors:
            chunks = [c for c in np.array_split(color, self.workers) if c.size]
            for ids, fe in self._pool.map(work, chunks):
                f[self.elements[ids].ravel()] += fe.reshape(-1, 3 * batch)
        return f.reshape(self.n_nodes, 3, batch)

    def apply(self, u: VectorBatch) -> VectorBatch:
        return ebe_matvec(self, u)


def ebe_matvec(op: EbeOperator, u: VectorBatch) -> VectorBatch:
    u.check_shape(op.n_nodes, op.precision)
    x = u.data.astype(np.float64) * op.free[:, :, None]
    if op.workers > 1:
        f = op._apply_colored(x)
    else:
        f = op._apply_serial(x)
    f = np.where(op.fixed[:, :, None], u.data.astype(np.float64), f)
    return VectorBatch(f.astype(op.precision.dtype))


def _invert_blocks(blocks: np.ndarray, fixed: np.ndarray, precision: Precision) -> BlockJacobi:
    blocks = blocks.copy()
    for axis in range(3):
        rows = fixed[:, axis]
        blocks[rows, axis, :] = 0.0
        blocks[rows, :, axis] = 0.0
    # det of the masked block is the det of its free sub-block
    n_free = 3 - fixed.sum(axis=1)
    scale = np.abs(blocks).max(axis=(1, 2)) ** n_free
    for axis in range(3):
        blocks[fixed[:, axis], axis, axis] = 1.0
    det = np.linalg.det(blocks)
    singular = np.flatnonzero(~(np.abs(det) > 1e-12 * scale))
    if singular.size:
        logger.error(f"{singular.size} singular diagonal blocks, first at node {int(singular[0])}")
        raise SingularBlockError(int(singular[0]))
    return BlockJacobi(np.linalg.inv(blocks).astype(precision.dtype))


def extract_block_jacobi(op: Union[EbeOperator, BlockCsrMatrix], fixed: Optional[np.ndarray] = None) -> BlockJacobi:
    if isinstance(op, BlockCsrMatrix):
        blocks = op.diagonal_blocks()
        mask = np.zeros((op.node_count, 3), dtype=bool) if fixed is None else fixed
        return _invert_blocks(blocks, mask, op.precision)

    n_elem, n_local = op.elements.shape
    blocks = np.zeros((op.n_nodes, 9))
    for start in range(0, n_elem, CHUNK_ELEMENTS):
        ids = np.arange(start, min(start + CHUNK_ELEMENTS, n_elem))
        dn, wvol = shape_gradients(op.mesh.coords[op.elements[ids, :4]], op.order, start)
        outer = np.einsum("eq,eqai,eqaj->eaij", wvol, dn, dn)
        dot = np.einsum("eaii->ea", outer)
        blk = op.lam[ids, None, None, None] * outer + op.mu[ids, None, None, None] * (
            outer.transpose(0, 1, 3, 2) + dot[:, :, None, None] * np.eye(3)
        )
        local = sp.csr_matrix(
            (np.ones(len(ids) * n_local), (op.elements[ids].ravel(), np.arange(len(ids) * n_local))),
            shape=(op.n_nodes, len(ids) * n_local),
        )
        blocks += local @ blk.reshape(-1, 9)
    return _invert_blocks(blocks.reshape(-1, 3, 3), op.fixed, op.precision)


def assemble_bcsr(op: EbeOperator) -> BlockCsrMatrix:
    """Explicit matrix of the operator, masking included."""
    k = op.element_matrices()
    n_elem, n_local = op.elements.shape
    dofs = (3 * op.elements[:, :, None] + np.arange(3)[None, None, :]).reshape(n_elem, 3 * n_local)
    rows = np.repeat(dofs, 3 * n_local, axis=1).ravel()
    cols = np.tile(dofs, (1, 3 * n_local)).ravel()
    free = op.free.ravel()
    data = k.ravel() * free[rows] * free[cols]

    fixed_dofs = np.flatnonzero(op.fixed.ravel())
    rows = np.concatenate([rows, fixed_dofs])
    cols = np.concatenate([cols, fixed_dofs])
    data = np.concatenate([data, np.ones(fixed_dofs.size)])

    n = 3 * op.n_nodes
    matrix = sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
    matrix.sum_duplicates()
    bsr = matrix.tobsr(blocksize=(3, 3)).astype(op.precision.dtype)
    logger.info(f"Assembled BCSR order {op.order}: {op.n_nodes} block rows, {bsr.nnz // 9} blocks")
    return BlockCsrMatrix(bsr)


def bcsr_matvec(a: BlockCsrMatrix, u: VectorBatch) -> VectorBatch:
    u.check_shape(a.node_count)
    if u.precision != a.precision:
        raise DimensionMismatchError(
            f"vector precision {u.precision.value} does not match matrix precision {a.precision.value}"
        )
    out = a.matrix @ u.as_matrix()
    return VectorBatch(np.asarray(out).reshape(u.n_nodes, 3, u.batch_size))


def apply_operator(op: Union[EbeOperator, BlockCsrMatrix], u: VectorBatch) -> VectorBatch:
    if isinstance(op, BlockCsrMatrix):
        return bcsr_matvec(op, u)
    return ebe_matvec(op, u)
