from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from models.vectors import Precision, VectorBatch


@dataclass(eq=False)
class BlockCsrMatrix:
    """Assembled operator in 3x3 block compressed row storage."""

    matrix: sp.bsr_matrix

    def __post_init__(self):
        if self.matrix.blocksize != (3, 3):
            self.matrix = sp.bsr_matrix(self.matrix, blocksize=(3, 3))
        self.matrix.sort_indices()

    @property
    def n_block_rows(self) -> int:
        return int(self.matrix.shape[0] // 3)

    @property
    def node_count(self) -> int:
        return self.n_block_rows

    @property
    def precision(self) -> Precision:
        return Precision(self.matrix.dtype.name)

    @property
    def indptr(self) -> np.ndarray:
        return self.matrix.indptr

    @property
    def indices(self) -> np.ndarray:
        return self.matrix.indices

    @property
    def blocks(self) -> np.ndarray:
        return self.matrix.data

    def astype(self, precision: Precision) -> "BlockCsrMatrix":
        return BlockCsrMatrix(self.matrix.astype(precision.dtype))

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def diagonal_blocks(self) -> np.ndarray:
        n = self.n_block_rows
        out = np.zeros((n, 3, 3), dtype=np.float64)
        for row in range(n):
            start, end = self.indptr[row], self.indptr[row + 1]
            hit = np.flatnonzero(self.indices[start:end] == row)
            if hit.size:
                out[row] = self.blocks[start + hit[0]]
        return out


@dataclass(eq=False)
class BlockJacobi:
    """Inverted per-node 3x3 diagonal blocks."""

    inv_blocks: np.ndarray   # (n, 3, 3)

    @property
    def node_count(self) -> int:
        return int(self.inv_blocks.shape[0])

    @property
    def precision(self) -> Precision:
        return Precision(self.inv_blocks.dtype.name)

    def astype(self, precision: Precision) -> "BlockJacobi":
        return BlockJacobi(self.inv_blocks.astype(precision.dtype))

    def apply(self, v: VectorBatch) -> VectorBatch:
        v.check_shape(self.node_count)
        out = np.einsum("nij,njb->nib", self.inv_blocks, v.data)
        return VectorBatch(out.astype(v.data.dtype, copy=False))
