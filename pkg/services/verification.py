"""Oracle checks run by the `verify` command."""

from dataclasses import dataclass
from typing import List, Sequence
import logging

import numpy as np

from models.material import Material
from models.mesh import LOCAL_EDGES, Mesh
from models.vectors import Precision, VectorBatch
from services.ebe import EbeOperator, assemble_bcsr, bcsr_matvec, ebe_matvec, extract_block_jacobi
from services.elasticity import barycentric_gradients

logger = logging.getLogger(__name__)


@dataclass
class CheckResult:
    name: str
    value: float
    threshold: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value <= self.threshold)

    def summary_line(self) -> str:
        status = "pass" if self.passed else "fail"
        return f"check_{self.name}={status} value={self.value:.3e} threshold={self.threshold:.1e}"


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(float(np.linalg.norm(b)), np.finfo(np.float64).tiny)
    return float(np.linalg.norm(a - b) / scale)


def check_ebe_vs_assembled(op: EbeOperator, rng: np.random.Generator, vectors: int = 20) -> List[CheckResult]:
    matrix = assemble_bcsr(op.with_precision(Precision.DOUBLE))
    u = VectorBatch(rng.standard_normal((op.node_count, 3, vectors)))
    reference = bcsr_matvec(matrix, u).data
    out = []
    for precision, threshold in ((Precision.DOUBLE, 1e-12), (Precision.SINGLE, 1e-5)):
        got = ebe_matvec(op.with_precision(precision), u.astype(precision)).data.astype(np.float64)
        out.append(CheckResult(f"ebe_vs_assembled_{precision.value}", _rel(got, reference), threshold))
    return out


def check_symmetry(op: EbeOperator, rng: np.random.Generator) -> CheckResult:
    u = VectorBatch(rng.standard_normal((op.node_count, 3, 1)))
    v = VectorBatch(rng.standard_normal((op.node_count, 3, 1)))
    vau = float(v.column_dot(ebe_matvec(op, u))[0])
    uav = float(u.column_dot(ebe_matvec(op, v))[0])
    scale = np.sqrt(float(ebe_matvec(op, u).column_norm2()[0]) * float(v.column_norm2()[0]))
    return CheckResult("operator_symmetry", abs(vau - uav) / max(scale, np.finfo(np.float64).tiny), 1e-12)


def rigid_body_modes(coords: np.ndarray) -> np.ndarray:
    """(n, 3, 6): three translations and three infinitesimal rotations about the centroid."""
    x = coords - coords.mean(axis=0)
    modes = np.zeros((len(coords), 3, 6))
    for axis in range(3):
        modes[:, axis, axis] = 1.0
    modes[:, :, 3] = np.stack([np.zeros(len(x)), -x[:, 2], x[:, 1]], axis=1)
    modes[:, :, 4] = np.stack([x[:, 2], np.zeros(len(x)), -x[:, 0]], axis=1)
    modes[:, :, 5] = np.stack([-x[:, 1], x[:, 0], np.zeros(len(x))], axis=1)
    return modes


def check_nullspace(mesh: Mesh, materials: Sequence[Material], rng: np.random.Generator) -> CheckResult:
    op = EbeOperator(mesh, materials, mask_dirichlet=False)
    modes = VectorBatch(rigid_body_modes(mesh.coords))
    forces = ebe_matvec(op, modes)
    trial = VectorBatch(rng.standard_normal((op.node_count, 3, 1)))
    gain = np.sqrt(ebe_matvec(op, trial).column_norm2()[0] / trial.column_norm2()[0])
    worst = np.max(np.sqrt(forces.column_norm2() / modes.column_norm2())) / gain
    return CheckResult("rigid_body_nullspace", float(worst), 1e-10)


def constant_stress_forces(mesh: Mesh, materials: Sequence[Material], gradient: np.ndarray) -> np.ndarray:
    """Exact nodal forces of the linear field u = gradient @ x: zero on vertices, V sigma (dL_i + dL_j) on edge nodes."""
    grads, volume = barycentric_gradients(mesh.coords[mesh.tets4])
    lam = np.array([m.lam for m in materials])[mesh.material_id]
    mu = np.array([m.mu for m in materials])[mesh.material_id]
    strain = 0.5 * (gradient + gradient.T)
    sigma = lam[:, None, None] * np.trace(strain) * np.eye(3)[None] + 2.0 * mu[:, None, None] * strain[None]
    f = np.zeros((mesh.node_count, 3))
    for k, (i, j) in enumerate(LOCAL_EDGES):
        contrib = volume[:, None] * np.einsum("eij,ej->ei", sigma, grads[:, i] + grads[:, j])
        np.add.at(f, mesh.tets10[:, 4 + k], contrib)
    return f


def check_patch_test(mesh: Mesh, materials: Sequence[Material], rng: np.random.Generator) -> CheckResult:
    op = EbeOperator(mesh, materials, mask_dirichlet=False)
    gradient = rng.standard_normal((3, 3))
    offset = rng.standard_normal(3)
    u = mesh.coords @ gradient.T + offset
    got = ebe_matvec(op, VectorBatch(u[:, :, None])).data[:, :, 0]
    expected = constant_stress_forces(mesh, materials, gradient)
    return CheckResult("tet10_patch_test", _rel(got, expected), 1e-10)


def check_block_jacobi(op: EbeOperator, rng: np.random.Generator) -> CheckResult:
    jacobi = extract_block_jacobi(op)
    blocks = assemble_bcsr(op).diagonal_blocks()
    x = rng.standard_normal((op.node_count, 3, 4))
    mx = np.einsum("nij,njb->nib", blocks, x)
    back = jacobi.apply(VectorBatch(mx)).data
    return CheckResult("block_jacobi_inverse", _rel(back, x), 1e-10)


def check_batch_equivalence(op: EbeOperator, rng: np.random.Generator, batch: int = 16) -> CheckResult:
    u = VectorBatch(rng.standard_normal((op.node_count, 3, batch)))
    batched = ebe_matvec(op, u).data
    single = np.stack([ebe_matvec(op, u.select([j])).data[:, :, 0] for j in range(batch)], axis=2)
    return CheckResult("batch_vs_single", _rel(batched, single), 1e-14)


def run_checks(mesh: Mesh, materials: Sequence[Material], seed: int = 0, workers: int = 1) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    mesh.validate()
    with EbeOperator(mesh, materials, precision=Precision.DOUBLE, workers=workers) as op:
        results = check_ebe_vs_assembled(op, rng)
        results.append(check_symmetry(op, rng))
        results.append(check_nullspace(mesh, materials, rng))
        results.append(check_patch_test(mesh, materials, rng))
        results.append(check_block_jacobi(op, rng))
        results.append(check_batch_equivalence(op, rng))
    for result in results:
        log = logger.info if result.passed else logger.error
        log(result.summary_line())
    return results
