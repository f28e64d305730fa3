import os

import numpy as np
import pytest

from cli.main import main
from cli.run_config import load_run_config
from core.config import Settings
from core.exceptions import ValidationError
from models.fault import Axis, FaultDefinition, ObservationComponent
from services.mesh_generator import generate_box_mesh, plane_faces
from storage.fault_io import write_fault, write_observations
from storage.materials_io import write_materials
from storage.reports import read_summary
from storage.vector_io import read_vectors

MESH = """
[mesh]
extents = 4.0 4.0 4.0
divisions = {n} {n} {n}
fixed_boundary = roller_sides

[materials]
path = {materials}
"""

RUN = """
[run]
output_dir = {out}
seed = 3
"""


@pytest.fixture
def workspace(tmp_path, materials):
    write_materials(materials, str(tmp_path / "materials.txt"))
    return tmp_path


def _ini(workspace, body, n=2, name="run.ini"):
    text = MESH.format(n=n, materials=workspace / "materials.txt") + body + RUN.format(out=workspace / "out")
    path = workspace / name
    path.write_text(text)
    return str(path)


def _summary(workspace, command):
    return read_summary(str(workspace / "out" / f"{command}_summary.txt"))


def test_mesh_command(workspace, capsys):
    assert main(["mesh", "--config", _ini(workspace, "")]) == 0
    summary = _summary(workspace, "mesh")
    assert summary["command"] == "mesh"
    assert summary["tets"] == "48"
    assert summary["nodes"] == "125"
    assert float(summary["volume"]) == pytest.approx(64.0)
    assert os.path.exists(workspace / "out" / "mesh.tsm.dirichlet")
    assert "tets=48" in capsys.readouterr().out


def test_verify_command(workspace):
    assert main(["verify", "--config", _ini(workspace, "")]) == 0
    summary = _summary(workspace, "verify")
    assert summary["checks_failed"] == "0"
    assert summary["check_tet10_patch_test"] == "pass"


def test_solve_command(workspace):
    body = "\n[solver]\nouter_tol = 1e-16\nbatch_size = 2\n\n[rhs]\nsource = manufactured\ncolumns = 3\n"
    assert main(["solve", "--config", _ini(workspace, body), "--compare-single"]) == 0
    summary = _summary(workspace, "solve")
    assert summary["batches"] == "2"
    assert summary["converged"] == "true"
    assert summary["columns"] == "3"
    assert float(summary["true_max_relative_residual"]) <= 2e-16
    assert float(summary["solution_max_relative_error"]) < 1e-4
    assert float(summary["batched_vs_sequential_max_difference"]) < 1e-4

    u = read_vectors(str(workspace / "out" / "solution.vec"))
    assert u.data.shape == (125, 3, 3)
    assert os.path.exists(workspace / "out" / "solve_residuals.log")


def test_batch_flag_overrides_config(workspace):
    body = "\n[solver]\nbatch_size = 2\n\n[rhs]\nsource = surface_load\ncolumns = 3\n"
    assert main(["solve", "--config", _ini(workspace, body), "--batch", "4"]) == 0
    assert "batches" not in _summary(workspace, "solve")
    assert _summary(workspace, "solve")["batch_size"] == "3"


def test_invalid_solver_value(workspace):
    assert main(["solve", "--config", _ini(workspace, "\n[solver]\nbatch_size = 0\n")]) == 2


def test_short_alpha_grid(workspace):
    assert main(["invert", "--config", _ini(workspace, "\n[inversion]\nalpha_count = 4\n")]) == 2


def test_unknown_section(workspace):
    assert main(["mesh", "--config", _ini(workspace, "\n[plotting]\ncolor = red\n")]) == 2


def test_missing_config(workspace):
    assert main(["mesh", "--config", str(workspace / "nope.ini")]) == 2


def test_missing_materials(workspace):
    path = workspace / "run.ini"
    path.write_text(f"[mesh]\nextents = 1 1 1\ndivisions = 1 1 1\n[run]\noutput_dir = {workspace / 'out'}\n")
    assert main(["verify", "--config", str(path)]) == 2


def test_no_convergence_exit_code(workspace):
    body = "\n[solver]\nouter_tol = 1e-22\nouter_max_iter = 1\n\n[rhs]\nsource = manufactured\ncolumns = 1\n"
    assert main(["solve", "--config", _ini(workspace, body)]) == 3


def test_run_config_precedence(workspace):
    settings = Settings(BATCH_SIZE=8, SEED=11, OUTPUT_DIR="from-env")
    path = _ini(workspace, "\n[solver]\nbatch_size = 4\n")

    cfg = load_run_config(path, settings=settings)
    assert cfg.solver.batch_size == 4
    assert cfg.seed == 3
    assert cfg.output_dir == str(workspace / "out")

    cfg = load_run_config(path, batch=2, seed=5, out="flag", settings=settings)
    assert (cfg.solver.batch_size, cfg.seed, cfg.output_dir) == (2, 5, "flag")

    cfg = load_run_config(None, settings=settings)
    assert (cfg.solver.batch_size, cfg.seed, cfg.output_dir) == (8, 11, "from-env")


def test_run_config_levels_merge_with_defaults(workspace):
    cfg = load_run_config(_ini(workspace, "\n[level1]\nmax_iter = 50\n"), settings=Settings())
    assert cfg.solver.levels[1].max_iter == 50
    assert cfg.solver.levels[1].tol == 0.05
    assert cfg.solver.levels[2].max_iter == 3000


def test_run_config_missing_path(workspace):
    path = workspace / "run.ini"
    path.write_text("[fault]\npath = nowhere.txt\n")
    with pytest.raises(ValidationError, match="fault path"):
        load_run_config(str(path), settings=Settings())


def _fault_case(workspace, planted, noise):
    mesh = generate_box_mesh({"extents": (4.0, 4.0, 4.0), "divisions": (4, 4, 4)})
    faces = plane_faces(mesh, 0, 2.0, (1.0, 1.0), (3.0, 3.0))
    fault = FaultDefinition(
        faces=faces, centers=np.array([[2.0, 1.5, 2.0], [2.0, 2.5, 2.0]]), radius=1.0, angles=(0.0, 90.0)
    )
    write_fault(fault, str(workspace / "fault.txt"))
    stations = [(x, y, 4.0) for x in (0.5, 1.5, 2.5, 3.5) for y in (1.0, 3.0)]
    write_observations(
        [ObservationComponent(point=p, axis=a) for p in stations for a in Axis], str(workspace / "stations.txt")
    )

    common = (
        f"\n[fault]\npath = {workspace / 'fault.txt'}\n"
        f"\n[greens]\nplanted = {' '.join(str(a) for a in planted)}\n"
        f"\n[inversion]\nalpha_min = 1e-4\nalpha_max = 1e2\nalpha_count = 9\nnoise = {noise}\n"
    )
    greens_ini = _ini(
        workspace,
        common + f"\n[observations]\npath = {workspace / 'stations.txt'}\n\n[solver]\nbatch_size = 3\n",
        n=4,
        name="greens.ini",
    )
    return greens_ini, _ini(workspace, common, n=4, name="invert.ini")


def _lcurve_rows(workspace):
    rows = []
    with open(workspace / "out" / "inversion_report.txt") as fh:
        for line in fh:
            fields = line.split()
            if len(fields) >= 4 and fields[0][0].isdigit():
                rows.append([float(v) for v in fields[:4]])
    return np.array(rows)


@pytest.mark.slow
def test_greens_then_invert(workspace):
    greens_ini, invert_ini = _fault_case(workspace, (1.0, 0.5, 0.0, 0.2), 1e-5)
    assert main(["greens", "--config", greens_ini]) == 0
    summary = _summary(workspace, "greens")
    assert (summary["rows"], summary["cols"], summary["unit_slips"]) == ("24", "4", "4")
    assert summary["solver_calls"] == "2"
    assert int(summary["split_nodes_added"]) > 0
    assert os.path.exists(workspace / "out" / "synthetic_observations.txt")

    assert main(["invert", "--config", invert_ini]) == 0
    summary = _summary(workspace, "invert")
    assert summary["alphas"] == "9"
    assert 1 <= int(summary["selected_index"]) <= 7
    assert "recovery_relative_error" in summary
    assert os.path.exists(workspace / "out" / "inversion_report.txt")
    assert os.path.exists(workspace / "out" / "slip_field.txt")


@pytest.mark.slow
def test_noise_free_round_trip(workspace):
    # both patches slip nearly alike, so the planted slip sits close to the null space of the smoothing
    greens_ini, invert_ini = _fault_case(workspace, (1.0, 0.98, 0.5, 0.5), 0.0)
    assert main(["greens", "--config", greens_ini]) == 0
    assert main(["invert", "--config", invert_ini]) == 0
    assert float(_summary(workspace, "invert")["recovery_relative_error"]) <= 0.05

    curve = _lcurve_rows(workspace)
    assert curve.shape == (9, 4)
    residuals, seminorms = curve[:, 1], curve[:, 2]
    assert np.all(np.diff(residuals) >= -1e-6 * residuals.max())
    assert np.all(np.diff(seminorms) <= 1e-6 * seminorms.max())
