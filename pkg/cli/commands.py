"""
Command implementations. Each command validates its inputs, computes, then writes
every output atomically into the run's output directory and returns its summary.
"""

import logging
import os
import time
from typing import Dict, List, Optional, Tuple

import numpy as np

from core.exceptions import DimensionMismatchError, TetraSolveError, ValidationError
from models.fault import ObservationComponent, SlipDirection
from models.material import Material
from models.mesh import Mesh
from models.vectors import VectorBatch
from schemas.config import RhsSource, RunConfig
from services.ebe import ebe_matvec
from services.fault import build_unit_slips, split_nodes
from services.greens import build_crust_model, compute_greens_bank, forward_slip_field, synthetic_observations
from services.inversion import alpha_grid, build_smoothing_matrix, expand_slip, select_alpha_lcurve, solve_regularized
from services.loads import manufactured_rhs, surface_load_rhs
from services.mesh_generator import generate_box_mesh
from services.multigrid import MultigridHierarchy, build_hierarchy
from services.solver import solve_in_batches, solve_sequential
from services.verification import run_checks
from storage.export import write_vtk
from storage.fault_io import read_fault, read_observations, write_observations
from storage.greens_io import read_greens, write_greens
from storage.materials_io import read_materials
from storage.mesh_io import read_mesh, write_mesh
from storage.reports import (
    solve_summary,
    write_inversion_report,
    write_residual_log,
    write_slip_field,
    write_summary,
)
from storage.vector_io import read_vectors, write_vectors

logger = logging.getLogger(__name__)

MESH_FILE = "mesh.tsm"
SOLUTION_FILE = "solution.vec"
GREENS_FILE = "greens.bin"
SYNTHETIC_FILE = "synthetic_observations.txt"


def _out(cfg: RunConfig, name: str) -> str:
    return os.path.join(cfg.output_dir, name)


def _load_mesh(cfg: RunConfig) -> Mesh:
    if cfg.mesh_path:
        return read_mesh(cfg.mesh_path)
    if cfg.mesh is not None:
        return generate_box_mesh(cfg.mesh)
    raise ValidationError("no mesh given: set [mesh] path or extents/divisions")


def _load_materials(cfg: RunConfig, mesh: Mesh) -> List[Material]:
    if not cfg.materials_path:
        raise ValidationError("no materials given: set [materials] path")
    materials = read_materials(cfg.materials_path)
    needed = int(mesh.material_id.max()) + 1 if mesh.element_count else 0
    if needed > len(materials):
        raise ValidationError(f"mesh uses {needed} materials but {cfg.materials_path} defines {len(materials)}")
    return materials


def _emit(cfg: RunConfig, command: str, summary: Dict[str, object]) -> Dict[str, object]:
    summary = {"command": command, **summary}
    write_summary(summary, _out(cfg, f"{command}_summary.txt"))
    return summary


def cmd_mesh(cfg: RunConfig) -> Dict[str, object]:
    if cfg.mesh is None:
        raise ValidationError("the mesh command needs [mesh] extents and divisions")
    mesh = generate_box_mesh(cfg.mesh)
    mesh.validate()
    write_mesh(mesh, _out(cfg, MESH_FILE))
    if cfg.export_vtk:
        write_vtk(mesh, _out(cfg, "mesh.vtk"))
    return _emit(cfg, "mesh", {
        "tets": mesh.element_count,
        "vertex_nodes": mesh.vertex_count,
        "nodes": mesh.node_count,
        "constrained_dofs": int(mesh.dirichlet.sum()),
        "volume": f"{float(mesh.element_volumes().sum()):.12e}",
        "mesh_file": _out(cfg, MESH_FILE),
    })


def _build_rhs(cfg: RunConfig, mesh: Mesh, hierarchy: MultigridHierarchy) -> Tuple[VectorBatch, Optional[VectorBatch]]:
    rhs = cfg.rhs
    if rhs.source == RhsSource.MANUFACTURED:
        return manufactured_rhs(hierarchy.k0, rhs.columns, cfg.seed)
    if rhs.source == RhsSource.SURFACE_LOAD:
        return surface_load_rhs(mesh, rhs.load, rhs.columns), None
    f = read_vectors(rhs.path)
    if f.n_nodes != mesh.node_count:
        raise DimensionMismatchError(f"rhs file has {f.n_nodes} nodes, mesh has {mesh.node_count}")
    return f, None


def _true_residuals(hierarchy: MultigridHierarchy, f: VectorBatch, u: VectorBatch) -> np.ndarray:
    r = VectorBatch(f.data - ebe_matvec(hierarchy.k0, u).data)
    ff = f.column_norm2()
    return r.column_norm2() / np.where(ff > 0.0, ff, 1.0)


def cmd_solve(cfg: RunConfig) -> Dict[str, object]:
    mesh = _load_mesh(cfg)
    materials = _load_materials(cfg, mesh)
    with build_hierarchy(mesh, materials, cfg.solver.aggregate_size, cfg.solver.workers) as hierarchy:
        f, u_star = _build_rhs(cfg, mesh, hierarchy)

        u, reports = solve_in_batches(hierarchy, f, cfg.solver)
        summary: Dict[str, object] = dict(solve_summary(reports))
        summary["columns"] = f.batch_size
        summary["true_max_relative_residual"] = f"{float(np.max(_true_residuals(hierarchy, f, u))):.6e}"
        if u_star is not None:
            err = u.as_matrix() - u_star.as_matrix()
            rel = np.linalg.norm(err, axis=0) / np.linalg.norm(u_star.as_matrix(), axis=0)
            summary["solution_max_relative_error"] = f"{float(rel.max()):.6e}"

        if cfg.compare_single:
            u_seq, seq_reports = solve_sequential(hierarchy, f, cfg.solver)
            batched = sum(r.timings.get("total", 0.0) for r in reports)
            sequential = sum(r.timings.get("total", 0.0) for r in seq_reports)
            summary["batched_time_total"] = f"{batched:.6f}"
            summary["sequential_time_total"] = f"{sequential:.6f}"
            summary["sequential_outer_iterations"] = sum(r.outer_iterations for r in seq_reports)
            diff = np.abs(u_seq.data - u.data).max() / max(float(np.abs(u.data).max()), np.finfo(np.float64).tiny)
            summary["batched_vs_sequential_max_difference"] = f"{diff:.6e}"

        write_vectors(u, _out(cfg, SOLUTION_FILE))
        write_residual_log(reports, _out(cfg, "solve_residuals.log"))
        if cfg.export_vtk:
            write_vtk(mesh, _out(cfg, "solution.vtk"), {"displacement": u.data[:, :, 0]})
    return _emit(cfg, "solve", summary)


def cmd_greens(cfg: RunConfig) -> Dict[str, object]:
    if not cfg.fault_path or not cfg.observations_path:
        raise ValidationError("the greens command needs [fault] path and [observations] path")
    mesh = _load_mesh(cfg)
    materials = _load_materials(cfg, mesh)
    fault = read_fault(cfg.fault_path)
    observations = read_observations(cfg.observations_path)
    if cfg.planted_slip and len(cfg.planted_slip) != 2 * len(fault.centers):
        raise ValidationError(
            f"planted slip has {len(cfg.planted_slip)} coefficients, the fault has {2 * len(fault.centers)} unit slips"
        )

    start = time.perf_counter()
    with build_crust_model(mesh, materials, fault.faces, fault.angles, cfg.solver) as model:
        slips = build_unit_slips(model.patch, fault.centers, fault.radius)
        bank = compute_greens_bank(model, slips, observations, cfg.solver)
        elapsed = time.perf_counter() - start

        write_greens(bank, _out(cfg, GREENS_FILE))
        summary: Dict[str, object] = {
            "rows": bank.shape[0],
            "cols": bank.shape[1],
            "unit_slips": len(slips),
            "batch_size": cfg.solver.batch_size,
            "solver_calls": bank.solver_calls,
            "fault_nodes": len(model.patch.fault_nodes),
            "split_nodes_added": model.split_mesh.node_count - mesh.node_count,
            "outer_iterations_total": sum(r.outer_iterations for r in bank.solve_reports),
            "time_total": f"{elapsed:.6f}",
            "time_per_green_function": f"{elapsed / len(slips):.6f}",
            "greens_file": _out(cfg, GREENS_FILE),
        }
        if cfg.planted_slip:
            planted = np.asarray(cfg.planted_slip)
            synthetic = synthetic_observations(bank, planted, cfg.inversion.noise, cfg.seed)
            write_observations(synthetic, _out(cfg, SYNTHETIC_FILE))
            write_slip_field(model.patch, expand_slip(model.patch, slips, planted), _out(cfg, "planted_slip_field.txt"))
            summary["synthetic_observations"] = _out(cfg, SYNTHETIC_FILE)
            if cfg.export_vtk:
                field = forward_slip_field(model, slips, planted, cfg.solver)
                write_vtk(model.split_mesh, _out(cfg, "planted_displacement.vtk"), {"displacement": field.data[:, :, 0]})
    return _emit(cfg, "greens", summary)


def _match_rows(bank_rows: List[ObservationComponent], observations: List[ObservationComponent]) -> np.ndarray:
    if len(bank_rows) != len(observations):
        raise ValidationError(f"{len(observations)} observations for a Green's bank with {len(bank_rows)} rows")
    for i, (row, obs) in enumerate(zip(bank_rows, observations)):
        if row.axis != obs.axis or not np.allclose(row.point, obs.point, rtol=0.0, atol=1e-9 * max(1.0, np.abs(row.point).max())):
            raise ValidationError(f"observation {i} does not match Green's bank row {i}")
    return np.array([obs.value for obs in observations])


def _bank_centers(columns) -> np.ndarray:
    directions = [SlipDirection(d) for _, d, _ in columns]
    half = len(columns) // 2
    strike = np.asarray([c for c, _, _ in columns[:half]], dtype=np.float64)
    dip = np.asarray([c for c, _, _ in columns[half:]], dtype=np.float64)
    expected = [SlipDirection.STRIKE] * half + [SlipDirection.DIP] * half
    if directions != expected or not np.allclose(strike, dip):
        raise ValidationError("Green's bank columns must be all strike slips followed by dip slips on the same centers")
    return strike


def cmd_invert(cfg: RunConfig) -> Dict[str, object]:
    greens_path = cfg.greens_path or _out(cfg, GREENS_FILE)
    observations_path = cfg.observations_path or _out(cfg, SYNTHETIC_FILE)
    for label, path in (("Green's bank", greens_path), ("observations", observations_path)):
        if not os.path.exists(path):
            raise ValidationError(f"{label} file {path} does not exist")
    alphas = alpha_grid(cfg.inversion.alpha_min, cfg.inversion.alpha_max, cfg.inversion.alpha_count)

    bank = read_greens(greens_path)
    d = _match_rows(bank.rows, read_observations(observations_path, require_values=True))
    centers = _bank_centers(bank.columns)
    L = build_smoothing_matrix(centers)

    best, curve = select_alpha_lcurve(bank.matrix, d, L, alphas)
    result = solve_regularized(bank.matrix, d, L, best)
    if np.any(np.diff(curve.residual_norms) < -1e-9 * curve.residual_norms.max()):
        logger.warning("residual norm is not monotone along the alpha grid")
    if np.any(np.diff(curve.seminorms) > 1e-9 * curve.seminorms.max()):
        logger.warning("seminorm is not monotone along the alpha grid")

    write_inversion_report(curve, result, _out(cfg, "inversion_report.txt"))
    summary: Dict[str, object] = {
        "alphas": len(alphas),
        "selected_alpha": f"{result.alpha:.6e}",
        "selected_index": curve.best_index,
        "residual_norm": f"{result.residual_norm:.6e}",
        "seminorm": f"{result.seminorm:.6e}",
    }
    if cfg.planted_slip:
        planted = np.asarray(cfg.planted_slip)
        if planted.shape != result.a.shape:
            raise ValidationError(f"planted slip has {planted.size} coefficients, the bank has {result.a.size} columns")
        summary["recovery_relative_error"] = f"{np.linalg.norm(result.a - planted) / np.linalg.norm(planted):.6e}"

    if cfg.fault_path and (cfg.mesh_path or cfg.mesh is not None):
        mesh = _load_mesh(cfg)
        fault = read_fault(cfg.fault_path)
        _, patch = split_nodes(mesh, fault.faces, fault.angles)
        slips = build_unit_slips(patch, fault.centers, fault.radius)
        write_slip_field(patch, expand_slip(patch, slips, result.a), _out(cfg, "slip_field.txt"))
    return _emit(cfg, "invert", summary)


def cmd_verify(cfg: RunConfig) -> Dict[str, object]:
    mesh = _load_mesh(cfg)
    materials = _load_materials(cfg, mesh)
    results = run_checks(mesh, materials, cfg.seed, cfg.solver.workers)
    summary: Dict[str, object] = {}
    for r in results:
        summary[f"check_{r.name}"] = "pass" if r.passed else "fail"
        summary[f"value_{r.name}"] = f"{r.value:.3e}"
    failed = [r.name for r in results if not r.passed]
    summary["checks_failed"] = len(failed)
    summary = _emit(cfg, "verify", summary)
    if failed:
        raise TetraSolveError(f"verification failed: {', '.join(failed)}")
    return summary


COMMANDS = {
    "mesh": cmd_mesh,
    "solve": cmd_solve,
    "greens": cmd_greens,
    "invert": cmd_invert,
    "verify": cmd_verify,
}
