from dataclasses import dataclass
from typing import Sequence
import enum

import numpy as np

from core.exceptions import DimensionMismatchError


class Precision(str, enum.Enum):
    DOUBLE = "float64"
    SINGLE = "float32"

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(self.value)


@dataclass(eq=False)
class VectorBatch:
    """B nodal vector fields stored as (node, axis, batch), batch index fastest."""

    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[1] != 3:
            raise DimensionMismatchError(f"vector batch must have shape (n, 3, B), got {self.data.shape}")
        if self.data.dtype not in (np.float64, np.float32):
            raise DimensionMismatchError(f"unsupported dtype {self.data.dtype}")
        if not self.data.flags.c_contiguous:
            self.data = np.ascontiguousarray(self.data)

    @classmethod
    def zeros(cls, n_nodes: int, batch_size: int, precision: Precision = Precision.DOUBLE) -> "VectorBatch":
        return cls(np.zeros((n_nodes, 3, batch_size), dtype=precision.dtype))

    @classmethod
    def from_columns(cls, columns: Sequence[np.ndarray], precision: Precision = Precision.DOUBLE) -> "VectorBatch":
        stacked = np.stack([np.asarray(c, dtype=np.float64).reshape(-1, 3) for c in columns], axis=2)
        return cls(np.ascontiguousarray(stacked, dtype=precision.dtype))

    @property
    def n_nodes(self) -> int:
        return int(self.data.shape[0])

    @property
    def batch_size(self) -> int:
        return int(self.data.shape[2])

    @property
    def precision(self) -> Precision:
        return Precision(self.data.dtype.name)

    def column(self, j: int) -> np.ndarray:
        return self.data[:, :, j].copy()

    def as_matrix(self) -> np.ndarray:
        """(3n, B) view; row = node-major dof."""
        return self.data.reshape(3 * self.n_nodes, self.batch_size)

    def as_nodal(self) -> np.ndarray:
        """(n, 3B) view used by per-node scalar operators (transfers)."""
        return self.data.reshape(self.n_nodes, 3 * self.batch_size)

    def astype(self, precision: Precision) -> "VectorBatch":
        return VectorBatch(self.data.astype(precision.dtype))

    def copy(self) -> "VectorBatch":
        return VectorBatch(self.data.copy())

    def select(self, columns) -> "VectorBatch":
        return VectorBatch(np.ascontiguousarray(self.data[:, :, columns]))

    def column_dot(self, other: "VectorBatch") -> np.ndarray:
        """Per-column inner products, always reduced in float64."""
        if other.data.shape != self.data.shape:
            raise DimensionMismatchError(f"shape {self.data.shape} does not match {other.data.shape}")
        return np.einsum("ijb,ijb->b", self.data.astype(np.float64), other.data.astype(np.float64))

    def column_norm2(self) -> np.ndarray:
        return self.column_dot(self)

    def check_shape(self, n_nodes: int, precision: Precision = None) -> None:
        if self.n_nodes != n_nodes:
            raise DimensionMismatchError(f"vector has {self.n_nodes} nodes, operator expects {n_nodes}")
        if precision is not None and self.precision != precision:
            raise DimensionMismatchError(
                f"vector precision {self.precision.value} does not match operator precision {precision.value}"
            )
