from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple
import enum

import numpy as np


class SlipDirection(str, enum.Enum):
    STRIKE = "strike"
    DIP = "dip"


class Axis(str, enum.Enum):
    X = "x"
    Y = "y"
    Z = "z"

    @property
    def index(self) -> int:
        return "xyz".index(self.value)


@dataclass(eq=False)
class FaultPatch:
    """Fault surface on the parent mesh plus the node-duplication table of the split mesh."""

    faces: np.ndarray                 # (F, 3) parent vertex ids
    normals: np.ndarray               # (F, 3) unit normals, pointing to the plus side
    strike: np.ndarray                # (F, 3)
    dip: np.ndarray                   # (F, 3)
    fault_nodes: np.ndarray           # (K,) parent node ids (vertices and edge nodes), ascending
    node_coords: np.ndarray           # (K, 3)
    node_normal: np.ndarray           # (K, 3)
    node_strike: np.ndarray           # (K, 3)
    node_dip: np.ndarray              # (K, 3)
    split_table: Dict[int, Tuple[int, int]]   # parent id -> (plus id, minus id) in split numbering
    parent_of: np.ndarray             # (N_split,) split node -> parent node

    @property
    def node_index(self) -> Dict[int, int]:
        return {int(n): k for k, n in enumerate(self.fault_nodes)}

    def direction_vectors(self, direction: SlipDirection) -> np.ndarray:
        return self.node_strike if direction == SlipDirection.STRIKE else self.node_dip


@dataclass(eq=False)
class UnitSlip:
    center: np.ndarray                # (3,)
    direction: SlipDirection
    radius: float
    nodes: np.ndarray                 # parent fault node ids inside the support
    magnitude: np.ndarray             # same length as nodes, in [0, 1]


@dataclass(frozen=True)
class ObservationComponent:
    point: Tuple[float, float, float]
    axis: Axis
    value: float = float("nan")


@dataclass
class GreensBank:
    matrix: np.ndarray                            # (m, n)
    rows: List[ObservationComponent]
    columns: List[Tuple[Tuple[float, float, float], SlipDirection, float]]
    solver_calls: int = 0
    solve_reports: list = field(default_factory=list)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.matrix.shape


@dataclass(eq=False)
class FaultDefinition:
    """Contents of a fault file: surface triangles and the unit-slip center grid."""

    faces: np.ndarray                 # (F, 3) vertex node ids
    centers: np.ndarray               # (C, 3)
    radius: float
    angles: Optional[Tuple[float, float]] = None   # (strike, dip) in degrees
