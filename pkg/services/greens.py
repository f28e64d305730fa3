"""
Green's bank: surface responses to unit fault slips.

Unit slips are solved ceil(n / batch_size) at a time on the unsplit mesh; each
batch's total field (continuous part plus prescribed jump) is sampled at the
observation components with P2 shape functions on the split mesh.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple
import logging
import math

import numpy as np

from core.exceptions import DimensionMismatchError, ObservationOutsideMeshError
from models.fault import FaultPatch, GreensBank, ObservationComponent, UnitSlip
from models.material import Material
from models.mesh import LOCAL_EDGES, LOCAL_FACES, Mesh
from models.vectors import Precision, VectorBatch
from schemas.config import SolverConfig
from services.ebe import EbeOperator
from services.fault import expand_to_split, slips_to_rhs, split_nodes
from services.multigrid import MultigridHierarchy, build_hierarchy
from services.solver import solve

logger = logging.getLogger(__name__)

LOCATE_TOLERANCE = 1e-10


@dataclass(eq=False)
class CrustModel:
    """Parent mesh and solver hierarchy, split mesh and its operator for the slip lifting."""

    mesh: Mesh
    materials: List[Material]
    hierarchy: MultigridHierarchy
    split_mesh: Mesh
    split_op: EbeOperator
    patch: FaultPatch

    def close(self) -> None:
        self.hierarchy.close()
        self.split_op.close()

    def __enter__(self) -> "CrustModel":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def build_crust_model(
    mesh: Mesh,
    materials: Sequence[Material],
    fault_faces,
    angles: Optional[Tuple[float, float]] = None,
    cfg: Optional[SolverConfig] = None,
) -> CrustModel:
    cfg = cfg or SolverConfig()
    split_mesh, patch = split_nodes(mesh, fault_faces, angles)
    hierarchy = build_hierarchy(mesh, materials, cfg.aggregate_size, cfg.workers)
    split_op = EbeOperator(split_mesh, materials, precision=Precision.DOUBLE, workers=cfg.workers)
    return CrustModel(
        mesh=mesh,
        materials=list(materials),
        hierarchy=hierarchy,
        split_mesh=split_mesh,
        split_op=split_op,
        patch=patch,
    )


def face_neighbors(tets4: np.ndarray) -> np.ndarray:
    """(E, 4) element across local face k (opposite vertex k), -1 on the boundary."""
    n_elem = len(tets4)
    faces = np.sort(tets4[:, np.array(LOCAL_FACES)].reshape(-1, 3), axis=1)
    _, inverse = np.unique(faces, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    order = np.argsort(inverse, kind="stable")
    neighbors = np.full(n_elem * 4, -1, dtype=np.int64)
    sorted_ids = inverse[order]
    pair = np.flatnonzero(sorted_ids[1:] == sorted_ids[:-1])
    a, b = order[pair], order[pair + 1]
    neighbors[a] = b // 4
    neighbors[b] = a // 4
    return neighbors.reshape(n_elem, 4)


def barycentric(coords: np.ndarray, tets4: np.ndarray, elements: np.ndarray, point: np.ndarray) -> np.ndarray:
    x = coords[tets4[elements]]
    t = np.stack([x[:, 1] - x[:, 0], x[:, 2] - x[:, 0], x[:, 3] - x[:, 0]], axis=2)
    rhs = point[None, :] - x[:, 0]
    lam = np.linalg.solve(t, rhs[:, :, None])[:, :, 0]
    return np.concatenate([1.0 - lam.sum(axis=1, keepdims=True), lam], axis=1)


class PointLocator:
    """Walks across face neighbors toward the point, falls back to a full scan."""

    def __init__(self, mesh: Mesh):
        self.coords = mesh.coords
        self.tets4 = mesh.tets4
        self.neighbors = face_neighbors(self.tets4)
        self.max_steps = 4 * len(self.tets4) + 16
        self._last = 0

    def locate(self, point) -> Tuple[int, np.ndarray]:
        point = np.asarray(point, dtype=np.float64)
        element = self._last
        for _ in range(self.max_steps):
            lam = barycentric(self.coords, self.tets4, np.array([element]), point)[0]
            worst = int(np.argmin(lam))
            if lam[worst] >= -LOCATE_TOLERANCE:
                self._last = element
                return element, lam
            nxt = int(self.neighbors[element, worst])
            if nxt < 0:
                break
            element = nxt
        return self._scan(point)

    def _scan(self, point: np.ndarray) -> Tuple[int, np.ndarray]:
        lam = barycentric(self.coords, self.tets4, np.arange(len(self.tets4)), point)
        score = lam.min(axis=1)
        best = int(np.argmax(score))
        if score[best] < -LOCATE_TOLERANCE:
            raise ObservationOutsideMeshError(point)
        self._last = best
        return best, lam[best]


def p2_shape_values(lam: np.ndarray) -> np.ndarray:
    """10 quadratic shape values at barycentric coordinates lam (4,)."""
    values = np.empty(10)
    values[:4] = lam * (2.0 * lam - 1.0)
    for k, (i, j) in enumerate(LOCAL_EDGES):
        values[4 + k] = 4.0 * lam[i] * lam[j]
    return values


@dataclass(eq=False)
class ObservationSampler:
    """Precomputed element and shape weights per observation component."""

    elements: np.ndarray       # (m,)
    weights: np.ndarray        # (m, 10)
    axes: np.ndarray           # (m,)
    tets10: np.ndarray

    def sample(self, u: VectorBatch) -> np.ndarray:
        """(m, B) interpolated components."""
        nodes = self.tets10[self.elements]                         # (m, 10)
        values = u.data[nodes, self.axes[:, None], :]              # (m, 10, B)
        return np.einsum("mk,mkb->mb", self.weights, values)


def build_sampler(mesh: Mesh, observations: Sequence[ObservationComponent]) -> ObservationSampler:
    locator = PointLocator(mesh)
    elements = np.empty(len(observations), dtype=np.int64)
    weights = np.empty((len(observations), 10))
    for i, obs in enumerate(observations):
        elements[i], lam = locator.locate(obs.point)
        weights[i] = p2_shape_values(np.clip(lam, 0.0, 1.0) / np.clip(lam, 0.0, 1.0).sum())
    axes = np.array([obs.axis.index for obs in observations], dtype=np.int64)
    return ObservationSampler(elements=elements, weights=weights, axes=axes, tets10=mesh.tets10)


def compute_greens_bank(
    model: CrustModel,
    slips: Sequence[UnitSlip],
    observations: Sequence[ObservationComponent],
    cfg: Optional[SolverConfig] = None,
) -> GreensBank:
    cfg = cfg or SolverConfig()
    if not slips:
        raise DimensionMismatchError("a Green's bank needs at least one unit slip")
    sampler = build_sampler(model.split_mesh, observations)
    n, m = len(slips), len(observations)
    batches = math.ceil(n / cfg.batch_size)
    logger.info(f"Computing Green's bank: {n} unit slips x {m} components in {batches} batches of {cfg.batch_size}")

    matrix = np.empty((m, n))
    bank = GreensBank(
        matrix=matrix,
        rows=list(observations),
        columns=[(tuple(float(c) for c in s.center), s.direction, s.radius) for s in slips],
    )
    for b in range(batches):
        cols = list(range(b * cfg.batch_size, min((b + 1) * cfg.batch_size, n)))
        f, u_slip = slips_to_rhs(model.split_op, model.patch, [slips[j] for j in cols], model.mesh.node_count)
        w, report = solve(model.hierarchy, f, None, cfg)
        bank.solver_calls += 1
        bank.solve_reports.append(report)
        matrix[:, cols] = sampler.sample(expand_to_split(model.patch, w, u_slip))
        logger.info(f"Batch {b + 1}/{batches}: {len(cols)} columns done")

    if not np.all(np.isfinite(matrix)):
        raise DimensionMismatchError("Green's bank contains non-finite entries")
    return bank


def forward_slip_field(model: CrustModel, slips: Sequence[UnitSlip], coefficients, cfg: Optional[SolverConfig] = None):
    """Solve once for the superposed slip sum a_i phi_i; returns the split-mesh total field (one column)."""
    cfg = cfg or SolverConfig()
    coefficients = np.asarray(coefficients, dtype=np.float64)
    if coefficients.shape != (len(slips),):
        raise DimensionMismatchError(f"{coefficients.size} coefficients for {len(slips)} unit slips")
    f, u_slip = slips_to_rhs(model.split_op, model.patch, slips, model.mesh.node_count)
    f = VectorBatch(np.einsum("nib,b->ni", f.data, coefficients)[:, :, None])
    u_slip = VectorBatch(np.einsum("nib,b->ni", u_slip.data, coefficients)[:, :, None])
    w, _ = solve(model.hierarchy, f, None, cfg)
    return expand_to_split(model.patch, w, u_slip)


def synthetic_observations(
    bank: GreensBank, coefficients, noise: float = 0.0, seed: int = 0
) -> List[ObservationComponent]:
    """Observations d = G a* (+ Gaussian noise of standard deviation `noise`)."""
    coefficients = np.asarray(coefficients, dtype=np.float64)
    if coefficients.shape != (bank.shape[1],):
        raise DimensionMismatchError(f"{coefficients.size} coefficients for a bank with {bank.shape[1]} columns")
    d = bank.matrix @ coefficients
    if noise > 0.0:
        d = d + np.random.default_rng(seed).normal(0.0, noise, size=d.shape)
    return [ObservationComponent(point=row.point, axis=row.axis, value=float(v)) for row, v in zip(bank.rows, d)]
