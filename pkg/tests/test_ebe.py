import numpy as np
import pytest
import scipy.sparse as sp

from core.exceptions import DimensionMismatchError, SingularBlockError
from models.operators import BlockCsrMatrix
from models.vectors import Precision, VectorBatch
from services.ebe import (
    EbeOperator,
    assemble_bcsr,
    bcsr_matvec,
    color_elements,
    ebe_matvec,
    extract_block_jacobi,
)
from services.mesh_generator import p1_restrict_view


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


@pytest.fixture
def op(layered_box, materials):
    return EbeOperator(layered_box, materials)


def test_matches_assembled_matrix_in_double(op, rng):
    u = VectorBatch(rng.standard_normal((op.node_count, 3, 5)))
    assembled = assemble_bcsr(op)
    assert rel(ebe_matvec(op, u).data, bcsr_matvec(assembled, u).data) <= 1e-12


def test_matches_assembled_matrix_in_single(op, rng):
    u = VectorBatch(rng.standard_normal((op.node_count, 3, 5)))
    reference = bcsr_matvec(assemble_bcsr(op), u).data
    single = ebe_matvec(op.with_precision(Precision.SINGLE), u.astype(Precision.SINGLE))
    assert single.data.dtype == np.float32
    assert rel(single.data.astype(np.float64), reference) <= 1e-5


def test_p1_operator_matches_assembled(layered_box, materials, rng):
    op1 = EbeOperator(p1_restrict_view(layered_box), materials)
    u = VectorBatch(rng.standard_normal((op1.node_count, 3, 2)))
    assert rel(ebe_matvec(op1, u).data, bcsr_matvec(assemble_bcsr(op1), u).data) <= 1e-12


def test_assembled_matrix_is_symmetric(op):
    dense = assemble_bcsr(op).to_dense()
    assert np.abs(dense - dense.T).max() <= 1e-12 * np.abs(dense).max()


def test_constrained_rows_are_identity(op, rng):
    u = VectorBatch(rng.standard_normal((op.node_count, 3, 3)))
    out = ebe_matvec(op, u)
    np.testing.assert_array_equal(out.data[op.fixed], u.data[op.fixed])


def test_colored_scatter_matches_serial(layered_box, materials, rng):
    serial = EbeOperator(layered_box, materials, workers=1)
    u = VectorBatch(rng.standard_normal((serial.node_count, 3, 4)))
    with EbeOperator(layered_box, materials, workers=3) as colored:
        assert rel(ebe_matvec(colored, u).data, ebe_matvec(serial, u).data) <= 1e-13


def test_colors_share_no_vertex(layered_box):
    colors = color_elements(layered_box.tets4)
    assert sum(len(c) for c in colors) == layered_box.element_count
    for ids in colors:
        nodes = layered_box.tets4[ids].ravel()
        assert len(np.unique(nodes)) == len(nodes)


def test_batched_columns_match_single_columns(op, rng):
    u = VectorBatch(rng.standard_normal((op.node_count, 3, 16)))
    batched = ebe_matvec(op, u).data
    for j in (0, 7, 15):
        single = ebe_matvec(op, u.select([j])).data[:, :, 0]
        np.testing.assert_allclose(batched[:, :, j], single, rtol=1e-14, atol=1e-14 * np.abs(single).max())


def test_unmasked_operator_annihilates_translations(unit_cube, materials):
    op = EbeOperator(unit_cube, materials, mask_dirichlet=False)
    shift = np.zeros((op.node_count, 3, 3))
    for axis in range(3):
        shift[:, axis, axis] = 1.0
    out = ebe_matvec(op, VectorBatch(shift)).data
    reference = ebe_matvec(op, VectorBatch(np.random.default_rng(0).standard_normal((op.node_count, 3, 1)))).data
    assert np.abs(out).max() <= 1e-12 * np.abs(reference).max()


def test_shape_and_precision_mismatch(op):
    with pytest.raises(DimensionMismatchError):
        ebe_matvec(op, VectorBatch.zeros(op.node_count + 1, 1))
    with pytest.raises(DimensionMismatchError):
        ebe_matvec(op, VectorBatch.zeros(op.node_count, 1, Precision.SINGLE))


def test_block_jacobi_inverts_diagonal_blocks(op, rng):
    jacobi = extract_block_jacobi(op)
    blocks = assemble_bcsr(op).diagonal_blocks()
    x = rng.standard_normal((op.node_count, 3, 2))
    back = jacobi.apply(VectorBatch(np.einsum("nij,njb->nib", blocks, x))).data
    np.testing.assert_allclose(back, x, rtol=1e-9, atol=1e-9)


def test_block_jacobi_from_ebe_matches_assembled(op):
    from_ebe = extract_block_jacobi(op).inv_blocks
    from_matrix = extract_block_jacobi(assemble_bcsr(op), fixed=op.fixed).inv_blocks
    np.testing.assert_allclose(from_ebe, from_matrix, rtol=1e-10, atol=1e-10 * np.abs(from_matrix).max())


def test_single_precision_block_jacobi(op):
    jacobi = extract_block_jacobi(op.with_precision(Precision.SINGLE))
    assert jacobi.precision == Precision.SINGLE


def test_singular_block_names_the_node():
    dense = np.diag([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])
    matrix = BlockCsrMatrix(sp.bsr_matrix(dense, blocksize=(3, 3)))
    with pytest.raises(SingularBlockError) as info:
        extract_block_jacobi(matrix)
    assert info.value.node == 1


def test_roller_edge_blocks_are_regular(op):
    two_fixed = np.flatnonzero(op.fixed.sum(axis=1) == 2)
    assert two_fixed.size > 0
    inv = extract_block_jacobi(op).inv_blocks
    blocks = assemble_bcsr(op).diagonal_blocks()
    for node in two_fixed[:4]:
        free = int(np.flatnonzero(~op.fixed[node])[0])
        expected = np.diag(np.where(op.fixed[node], 1.0, 1.0 / blocks[node, free, free]))
        np.testing.assert_allclose(inv[node], expected, rtol=1e-10)


def test_close_releases_scatter_pool(layered_box, materials, rng):
    u = VectorBatch(rng.standard_normal((layered_box.node_count, 3, 2)))
    with EbeOperator(layered_box, materials, workers=3) as colored:
        assert not colored.closed
        before = ebe_matvec(colored, u).data
    assert colored.closed
    after = ebe_matvec(colored, u).data
    assert rel(after, before) <= 1e-13
