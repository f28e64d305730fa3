import numpy as np
import pytest

from core.exceptions import DimensionMismatchError, ValidationError
from models.vectors import Precision, VectorBatch
from services.ebe import EbeOperator, assemble_bcsr
from services.mesh_generator import p1_restrict_view
from services.multigrid import (
    Aggregation,
    aggregate_p1,
    build_geometric_prolongation,
    build_hierarchy,
    build_level2,
    coarse_fixed_mask,
)


@pytest.fixture
def k1_matrix(layered_box, materials):
    return assemble_bcsr(EbeOperator(p1_restrict_view(layered_box), materials))


def test_geometric_prolongation_interpolates_linear_fields(layered_box):
    p1 = build_geometric_prolongation(layered_box)
    assert (p1.fine_count, p1.coarse_count) == (layered_box.node_count, layered_box.vertex_count)
    linear = layered_box.coords[: layered_box.vertex_count] @ np.array([[1.0, 2.0, -1.0]] * 3).T
    out = p1.prolong(VectorBatch(linear[:, :, None].copy()))
    expected = layered_box.coords @ np.array([[1.0, 2.0, -1.0]] * 3).T
    np.testing.assert_allclose(out.data[:, :, 0], expected, atol=1e-12)


def test_prolongation_rows(layered_box):
    matrix = build_geometric_prolongation(layered_box).matrix.toarray()
    v = layered_box.vertex_count
    np.testing.assert_array_equal(matrix[:v], np.eye(v))
    np.testing.assert_allclose(matrix[v:].sum(axis=1), 1.0)
    assert np.all((matrix[v:] > 0).sum(axis=1) == 2)


def test_restriction_is_transpose(layered_box, rng):
    p1 = build_geometric_prolongation(layered_box)
    fine = VectorBatch(rng.standard_normal((p1.fine_count, 3, 2)))
    coarse = VectorBatch(rng.standard_normal((p1.coarse_count, 3, 2)))
    lhs = fine.column_dot(p1.prolong(coarse))
    rhs = p1.restrict(fine).column_dot(coarse)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12)


def test_aggregation_covers_every_node(k1_matrix):
    agg = aggregate_p1(k1_matrix, target_size=8)
    assert agg.aggregate_of.min() == 0
    assert agg.aggregate_of.max() == agg.count - 1
    sizes = np.bincount(agg.aggregate_of)
    assert np.all(sizes >= 2)
    assert agg.count < k1_matrix.n_block_rows
    for a in range(agg.count):
        assert agg.seeds[a] in agg.members(a)


def test_aggregation_is_deterministic(k1_matrix):
    first = aggregate_p1(k1_matrix, 8)
    second = aggregate_p1(k1_matrix, 8)
    np.testing.assert_array_equal(first.aggregate_of, second.aggregate_of)


def test_larger_target_gives_fewer_aggregates(k1_matrix):
    assert aggregate_p1(k1_matrix, 16).count < aggregate_p1(k1_matrix, 4).count


def test_aggregate_size_below_two_rejected(k1_matrix):
    with pytest.raises(ValidationError):
        aggregate_p1(k1_matrix, 1)


def test_galerkin_coarse_operator(k1_matrix, layered_box):
    agg = aggregate_p1(k1_matrix, 8)
    fixed = p1_restrict_view(layered_box).dirichlet
    p2, a2 = build_level2(k1_matrix, agg, fixed=fixed)
    assert a2.node_count == agg.count
    dense = a2.to_dense()
    np.testing.assert_allclose(dense, dense.T, atol=1e-10 * np.abs(dense).max())
    assert np.all(np.linalg.eigvalsh(dense) > 0.0)

    # without constraints the product is exactly P^T K P
    _, unmasked = build_level2(k1_matrix, agg)
    p = np.kron(p2.matrix.toarray(), np.eye(3))
    expected = p.T @ k1_matrix.to_dense() @ p
    np.testing.assert_allclose(unmasked.to_dense(), expected, atol=1e-10 * np.abs(expected).max())


def test_level2_rejects_mismatched_aggregation(k1_matrix):
    agg = Aggregation(aggregate_of=np.zeros(3, dtype=np.int64), count=1, seeds=np.array([0]))
    with pytest.raises(DimensionMismatchError):
        build_level2(k1_matrix, agg)


def test_level2_rejects_empty_aggregates(k1_matrix):
    n = k1_matrix.n_block_rows
    agg = Aggregation(aggregate_of=np.zeros(n, dtype=np.int64), count=2, seeds=np.array([0, 1]))
    with pytest.raises(ValidationError):
        build_level2(k1_matrix, agg)


def test_coarse_fixed_mask():
    agg = Aggregation(aggregate_of=np.array([0, 0, 1, 1]), count=2, seeds=np.array([0, 2]))
    fixed = np.array([[True, True, False], [True, False, False], [True, True, True], [True, True, True]])
    mask = coarse_fixed_mask(fixed, agg)
    np.testing.assert_array_equal(mask, [[True, False, False], [True, True, True]])


def test_hierarchy_precisions_and_sizes(hierarchy, layered_box):
    assert hierarchy.k0.precision == Precision.DOUBLE
    assert hierarchy.k0_single.precision == Precision.SINGLE
    assert hierarchy.k1.precision == Precision.SINGLE
    assert hierarchy.a2.precision == Precision.SINGLE
    assert hierarchy.m0.precision == Precision.SINGLE
    assert hierarchy.k1.node_count == layered_box.vertex_count
    assert hierarchy.a2.node_count == hierarchy.aggregation.count


def test_masked_transfers_zero_constrained_dofs(hierarchy, rng):
    v = VectorBatch(rng.standard_normal((hierarchy.k0.node_count, 3, 2)).astype(np.float32))
    r1 = hierarchy.restrict(0, v)
    assert np.all(r1.data[hierarchy.free1 == 0.0] == 0.0)
    back = hierarchy.prolong(0, r1)
    assert np.all(back.data[hierarchy.free0 == 0.0] == 0.0)
    assert back.data.dtype == np.float32
    with pytest.raises(ValueError):
        hierarchy.restrict(2, r1)


def test_hierarchy_on_two_cells_closes_its_operators(two_cells, bedrock):
    with build_hierarchy(two_cells, bedrock, aggregate_size=4, workers=2) as hierarchy:
        assert hierarchy.p1.fine_count == two_cells.node_count
        assert not hierarchy.k0.closed
    assert hierarchy.k0.closed and hierarchy.k1.closed
