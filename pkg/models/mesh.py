from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from core.exceptions import DegenerateElementError, ValidationError

# Local edge order of the 10-node tet (VTK quadratic tetra): node 4+k sits on LOCAL_EDGES[k].
LOCAL_EDGES: Tuple[Tuple[int, int], ...] = ((0, 1), (1, 2), (0, 2), (0, 3), (1, 3), (2, 3))

# Local faces, face k is opposite vertex k.
LOCAL_FACES: Tuple[Tuple[int, int, int], ...] = ((1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2))


def signed_volumes(coords: np.ndarray, tets4: np.ndarray) -> np.ndarray:
    x = coords[tets4]
    a = x[:, 1] - x[:, 0]
    b = x[:, 2] - x[:, 0]
    c = x[:, 3] - x[:, 0]
    return np.einsum("ei,ei->e", a, np.cross(b, c)) / 6.0


@dataclass(eq=False)
class Mesh:
    """Second-order tetrahedral mesh. Vertex nodes come first, edge nodes after them."""

    coords: np.ndarray            # (N, 3) float64, meters
    tets10: np.ndarray            # (E, 10) int64
    material_id: np.ndarray       # (E,) int64
    vertex_count: int
    dirichlet: np.ndarray         # (N, 3) bool, True where the dof is constrained
    edge_map: Dict[Tuple[int, int], int] = field(default_factory=dict)

    order = 2

    @property
    def tets4(self) -> np.ndarray:
        return self.tets10[:, :4]

    @property
    def elements(self) -> np.ndarray:
        return self.tets10

    @property
    def node_count(self) -> int:
        return int(self.coords.shape[0])

    @property
    def element_count(self) -> int:
        return int(self.tets10.shape[0])

    def element_volumes(self) -> np.ndarray:
        return signed_volumes(self.coords, self.tets4)

    def validate(self) -> None:
        """Check the structural invariants; raises on the first violation."""
        volumes = self.element_volumes()
        bad = np.flatnonzero(volumes <= 0.0)
        if bad.size:
            raise DegenerateElementError(int(bad[0]), float(volumes[bad[0]]))

        if self.tets4.size and self.tets4.max() >= self.vertex_count:
            raise ValidationError("vertex slots of tets10 must reference vertex nodes")
        if self.tets10[:, 4:].size and self.tets10[:, 4:].min() < self.vertex_count:
            raise ValidationError("edge slots of tets10 must reference edge nodes")

        ends = np.array(LOCAL_EDGES)
        x = self.coords
        mid = 0.5 * (x[self.tets10[:, ends[:, 0]]] + x[self.tets10[:, ends[:, 1]]])
        edge_x = x[self.tets10[:, 4:]]
        scale = max(float(np.abs(x).max()), 1.0)
        off = np.abs(mid - edge_x).max(axis=2)
        bad_elem, bad_edge = np.nonzero(off > 1e-12 * scale)
        if bad_elem.size:
            e = int(bad_elem[0])
            raise ValidationError(
                f"edge node {int(self.tets10[e, 4 + bad_edge[0]])} of element {e} is not at its edge midpoint"
            )


@dataclass(eq=False)
class LinearMeshView:
    """First-order view of a Mesh: same vertices, no edge nodes."""

    coords: np.ndarray            # (V, 3), a prefix view of the parent coords
    tets4: np.ndarray             # (E, 4)
    material_id: np.ndarray
    dirichlet: np.ndarray         # (V, 3)
    vertex_count: int

    order = 1

    @property
    def elements(self) -> np.ndarray:
        return self.tets4

    @property
    def node_count(self) -> int:
        return self.vertex_count

    @property
    def element_count(self) -> int:
        return int(self.tets4.shape[0])

    def element_volumes(self) -> np.ndarray:
        return signed_volumes(self.coords, self.tets4)


def build_edge_map(tets10: np.ndarray) -> Dict[Tuple[int, int], int]:
    edge_map: Dict[Tuple[int, int], int] = {}
    for row in tets10:
        for k, (i, j) in enumerate(LOCAL_EDGES):
            a, b = int(row[i]), int(row[j])
            edge_map[(min(a, b), max(a, b))] = int(row[4 + k])
    return edge_map
