"""
Transfers and coarse operators for the three-level preconditioner:
level 0 = P2 mesh, level 1 = its P1 view, level 2 = unsmoothed aggregation of level 1.
"""

from collections import deque
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple
import logging

import numpy as np
import scipy.sparse as sp

from core.exceptions import DimensionMismatchError, ValidationError
from models.material import Material
from models.mesh import Mesh
from models.operators import BlockCsrMatrix, BlockJacobi
from models.vectors import Precision, VectorBatch
from services.ebe import EbeOperator, assemble_bcsr, extract_block_jacobi
from services.mesh_generator import p1_restrict_view

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class Prolongation:
    """Scalar coarse-to-fine map applied identically to each axis."""

    matrix: sp.csr_matrix        # (n_fine, n_coarse)
    level: str

    @property
    def fine_count(self) -> int:
        return int(self.matrix.shape[0])

    @property
    def coarse_count(self) -> int:
        return int(self.matrix.shape[1])

    def prolong(self, coarse: VectorBatch) -> VectorBatch:
        coarse.check_shape(self.coarse_count)
        out = self.matrix @ coarse.as_nodal()
        return VectorBatch(np.asarray(out, dtype=coarse.data.dtype).reshape(self.fine_count, 3, coarse.batch_size))

    def restrict(self, fine: VectorBatch) -> VectorBatch:
        fine.check_shape(self.fine_count)
        out = self.matrix.T @ fine.as_nodal()
        return VectorBatch(np.asarray(out, dtype=fine.data.dtype).reshape(self.coarse_count, 3, fine.batch_size))


@dataclass(eq=False)
class Aggregation:
    aggregate_of: np.ndarray     # (n,) aggregate id per node
    count: int
    seeds: np.ndarray            # seed node of each aggregate, in creation order

    def members(self, aggregate: int) -> np.ndarray:
        return np.flatnonzero(self.aggregate_of == aggregate)


def build_geometric_prolongation(mesh: Mesh) -> Prolongation:
    v = mesh.vertex_count
    rows = [np.arange(v)]
    cols = [np.arange(v)]
    vals = [np.ones(v)]
    if mesh.edge_map:
        pairs = sorted(mesh.edge_map.items(), key=lambda item: item[1])
        ends = np.array([p[0] for p in pairs], dtype=np.int64)
        edge_ids = np.array([p[1] for p in pairs], dtype=np.int64)
        rows += [edge_ids, edge_ids]
        cols += [ends[:, 0], ends[:, 1]]
        vals += [np.full(len(edge_ids), 0.5), np.full(len(edge_ids), 0.5)]
    matrix = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(mesh.node_count, v)
    )
    return Prolongation(matrix=matrix, level="P1->P2")


def aggregate_p1(p1_matrix: BlockCsrMatrix, target_size: int = 8) -> Aggregation:
    """Greedy aggregation over the block-connectivity graph, seeds in ascending node id."""
    if target_size < 2:
        raise ValidationError(f"aggregate target size must be >= 2, got {target_size}")
    indptr, indices = p1_matrix.indptr, p1_matrix.indices
    n = p1_matrix.n_block_rows

    def neighbors(node):
        nbrs = indices[indptr[node]:indptr[node + 1]]
        return nbrs[nbrs != node]

    aggregate_of = np.full(n, -1, dtype=np.int64)
    seeds = []
    for seed in range(n):
        if aggregate_of[seed] >= 0:
            continue
        agg = len(seeds)
        seeds.append(seed)
        aggregate_of[seed] = agg
        size = 1
        queue = deque([seed])
        while queue and size < target_size:
            node = queue.popleft()
            for nbr in neighbors(node):
                if aggregate_of[nbr] < 0:
                    aggregate_of[nbr] = agg
                    queue.append(nbr)
                    size += 1
                    if size >= target_size:
                        break

    # fold singletons into the aggregate of their lowest-id neighbor
    sizes = np.bincount(aggregate_of, minlength=len(seeds))
    for agg, seed in enumerate(seeds):
        if sizes[agg] != 1:
            continue
        nbrs = neighbors(seed)
        if nbrs.size == 0:
            continue
        target = aggregate_of[int(nbrs.min())]
        aggregate_of[seed] = target
        sizes[agg] -= 1
        sizes[target] += 1

    used = np.flatnonzero(sizes > 0)
    renumber = np.full(len(seeds), -1, dtype=np.int64)
    renumber[used] = np.arange(used.size)
    aggregate_of = renumber[aggregate_of]
    kept_seeds = np.array(seeds, dtype=np.int64)[used]
    logger.info(f"Aggregated {n} P1 nodes into {used.size} aggregates (target size {target_size})")
    return Aggregation(aggregate_of=aggregate_of, count=int(used.size), seeds=kept_seeds)


def build_level2(
    p1_matrix: BlockCsrMatrix, agg: Aggregation, fixed: Optional[np.ndarray] = None
) -> Tuple[Prolongation, BlockCsrMatrix]:
    """Piecewise-constant P2 and the Galerkin product P2^T K1 P2 (masked dofs excluded)."""
    n = p1_matrix.n_block_rows
    if agg.aggregate_of.shape != (n,):
        raise DimensionMismatchError(f"aggregation covers {agg.aggregate_of.size} nodes, matrix has {n}")
    counts = np.bincount(agg.aggregate_of, minlength=agg.count)
    if counts.size != agg.count or np.any(counts == 0):
        raise ValidationError(f"aggregation has empty aggregates: {np.flatnonzero(counts == 0).tolist()}")

    p_scalar = sp.csr_matrix((np.ones(n), (np.arange(n), agg.aggregate_of)), shape=(n, agg.count))
    p_dof = sp.kron(p_scalar, sp.identity(3), format="csr")
    if fixed is not None:
        free = (~np.asarray(fixed, dtype=bool)).astype(np.float64).ravel()
        p_dof = sp.diags(free) @ p_dof

    k1 = p1_matrix.matrix.astype(np.float64).tocsr()
    a2 = (p_dof.T @ k1 @ p_dof).tocsr()
    empty = np.flatnonzero(np.asarray(abs(a2).sum(axis=1)).ravel() == 0.0)
    if empty.size:
        a2 = a2 + sp.csr_matrix((np.ones(empty.size), (empty, empty)), shape=a2.shape)
    a2.sum_duplicates()
    a2 = a2.tobsr(blocksize=(3, 3)).astype(p1_matrix.precision.dtype)
    logger.info(f"Level 2: {agg.count} block rows, {a2.nnz // 9} blocks, {empty.size} identity dofs")
    return Prolongation(matrix=p_scalar, level="level2->P1"), BlockCsrMatrix(a2)


def coarse_fixed_mask(fixed_fine: np.ndarray, agg: Aggregation) -> np.ndarray:
    """A coarse dof is constrained when every fine dof of its aggregate and axis is."""
    free_count = np.zeros((agg.count, 3))
    np.add.at(free_count, agg.aggregate_of, (~fixed_fine).astype(np.float64))
    return free_count == 0


@dataclass(eq=False)
class MultigridHierarchy:
    """Operators, preconditioners, transfers and dof masks of all levels."""

    mesh: Mesh
    k0: EbeOperator              # 64-bit P2, outer loop
    k0_single: EbeOperator       # 32-bit P2, inner level 0
    k1: EbeOperator              # 32-bit P1, inner level 1
    a2: BlockCsrMatrix           # 32-bit, inner level 2
    p1: Prolongation
    p2: Prolongation
    aggregation: Aggregation
    m0: BlockJacobi
    m1: BlockJacobi
    m2: BlockJacobi
    free0: np.ndarray            # (n0, 3) float masks
    free1: np.ndarray
    free2: np.ndarray

    def close(self) -> None:
        for op in (self.k0, self.k0_single, self.k1):
            op.close()

    def __enter__(self) -> "MultigridHierarchy":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def restrict(self, level: int, v: VectorBatch) -> VectorBatch:
        """Masked restriction from `level` to `level + 1`."""
        transfer, fine, coarse = self._transfer(level)
        masked = VectorBatch((v.data * fine[:, :, None]).astype(v.data.dtype))
        out = transfer.restrict(masked)
        out.data *= coarse[:, :, None].astype(out.data.dtype)
        return out

    def prolong(self, level: int, v: VectorBatch) -> VectorBatch:
        """Masked prolongation from `level + 1` to `level`."""
        transfer, fine, coarse = self._transfer(level)
        masked = VectorBatch((v.data * coarse[:, :, None]).astype(v.data.dtype))
        out = transfer.prolong(masked)
        out.data *= fine[:, :, None].astype(out.data.dtype)
        return out

    def _transfer(self, level: int):
        if level == 0:
            return self.p1, self.free0, self.free1
        if level == 1:
            return self.p2, self.free1, self.free2
        raise ValueError(f"no transfer below level {level}")


def build_hierarchy(
    mesh: Mesh, materials: Sequence[Material], aggregate_size: int = 8, workers: int = 1
) -> MultigridHierarchy:
    logger.info(f"Building multigrid hierarchy: {mesh.node_count} P2 nodes, {mesh.vertex_count} P1 nodes")
    k0 = EbeOperator(mesh, materials, precision=Precision.DOUBLE, workers=workers)
    k0_single = k0.with_precision(Precision.SINGLE)
    view = p1_restrict_view(mesh)
    k1_double = EbeOperator(view, materials, precision=Precision.DOUBLE, workers=workers)
    k1 = k1_double.with_precision(Precision.SINGLE)

    k1_matrix = assemble_bcsr(k1_double)
    aggregation = aggregate_p1(k1_matrix, aggregate_size)
    p2, a2_double = build_level2(k1_matrix, aggregation, fixed=view.dirichlet)
    fixed2 = coarse_fixed_mask(view.dirichlet, aggregation)
    a2 = a2_double.astype(Precision.SINGLE)

    hierarchy = MultigridHierarchy(
        mesh=mesh,
        k0=k0,
        k0_single=k0_single,
        k1=k1,
        a2=a2,
        p1=build_geometric_prolongation(mesh),
        p2=p2,
        aggregation=aggregation,
        m0=extract_block_jacobi(k0_single),
        m1=extract_block_jacobi(k1),
        m2=extract_block_jacobi(a2, fixed=fixed2),
        free0=(~mesh.dirichlet).astype(np.float64),
        free1=(~view.dirichlet).astype(np.float64),
        free2=(~fixed2).astype(np.float64),
    )
    logger.info(
        f"Hierarchy ready: level sizes {mesh.node_count} / {view.node_count} / {aggregation.count} nodes"
    )
    return hierarchy
