import numpy as np

from models.vectors import VectorBatch
from services.ebe import EbeOperator, ebe_matvec
from services.verification import CheckResult, constant_stress_forces, rigid_body_modes, run_checks


def test_all_checks_pass(layered_box, materials):
    results = run_checks(layered_box, materials, seed=5)
    names = [r.name for r in results]
    assert names == [
        "ebe_vs_assembled_float64",
        "ebe_vs_assembled_float32",
        "operator_symmetry",
        "rigid_body_nullspace",
        "tet10_patch_test",
        "block_jacobi_inverse",
        "batch_vs_single",
    ]
    failed = [r.summary_line() for r in results if not r.passed]
    assert failed == []


def test_colored_scatter_checks_pass(layered_box, materials):
    assert all(r.passed for r in run_checks(layered_box, materials, workers=3))


def test_check_result():
    ok = CheckResult("demo", 1e-13, 1e-12)
    assert ok.passed
    assert ok.summary_line() == "check_demo=pass value=1.000e-13 threshold=1.0e-12"
    assert not CheckResult("demo", 1e-11, 1e-12).passed
    assert not CheckResult("demo", float("nan"), 1e-12).passed


def test_rigid_body_modes_are_orthogonal_to_each_other(unit_cube):
    modes = rigid_body_modes(unit_cube.coords).reshape(-1, 6)
    gram = modes.T @ modes
    np.testing.assert_allclose(gram - np.diag(np.diag(gram)), 0.0, atol=1e-12)


def test_constant_stress_forces_vanish_on_vertices(two_cells, materials):
    gradient = np.array([[1e-3, 2e-4, 0.0], [0.0, -5e-4, 0.0], [3e-4, 0.0, 2e-3]])
    f = constant_stress_forces(two_cells, materials[:1], gradient)
    np.testing.assert_array_equal(f[: two_cells.vertex_count], 0.0)

    op = EbeOperator(two_cells, materials[:1], mask_dirichlet=False)
    u = two_cells.coords @ gradient.T
    got = ebe_matvec(op, VectorBatch(u[:, :, None])).data[:, :, 0]
    np.testing.assert_allclose(got, f, atol=1e-9 * np.abs(f).max())
