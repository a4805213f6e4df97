import numpy as np
import pytest
from scipy.sparse.csgraph import connected_components

from amplab.errors import DomainError, ValidationError
from amplab.operators import (GridSpace, BoundaryCondition, from_matrix, build_rank_one, build_laplacian,
                              build_coupled, build_dtn, build_power, build_from_params, ladder_builder,
                              save_triplets, load_triplets, dirichlet_min_eigenvalue, boundary_weights)


def test_rank_one_annihilates_constants(rank_one):
    assert np.allclose(rank_one.apply(np.ones(64)), 0.0, atol=1e-14)
    assert rank_one.space.measure == pytest.approx(1.0)
    assert rank_one.is_metzler()
    assert rank_one.is_symmetrizable()


def test_rank_one_needs_two_nodes():
    with pytest.raises(DomainError):
        build_rank_one(1)


def test_dirichlet_stencil_and_weights():
    op = build_laplacian(1, 3, BoundaryCondition.dirichlet())
    dense = op.to_dense()
    assert op.space.h == pytest.approx(0.25)
    assert np.allclose(np.diag(dense), -32.0)
    assert np.allclose(np.diag(dense, 1), 16.0)
    assert op.space.weights.sum() == pytest.approx(0.75)
    assert op.space.boundary_nodes.size == 0


@pytest.mark.parametrize("d", [1, 2, 3])
def test_neumann_has_zero_row_sums(d):
    op = build_laplacian(d, 6, 'neumann')
    assert np.allclose(op.apply(np.ones(op.side)), 0.0, atol=1e-9)
    assert op.space.measure == pytest.approx(1.0)
    assert op.is_metzler()
    assert op.is_symmetrizable()


def test_robin_boundary_row_is_dissipative():
    op = build_laplacian(1, 5, BoundaryCondition.robin(1.0))
    dense = op.to_dense()
    # h = 1/4: (-2 - 2 h beta) / h^2 and 2 / h^2
    assert dense[0, 0] == pytest.approx(-40.0)
    assert dense[0, 1] == pytest.approx(32.0)
    assert dense[-1, -1] == pytest.approx(-40.0)
    assert np.all(op.apply(np.ones(5)) <= 0.0)


def test_robin_corner_touches_two_faces():
    op = build_laplacian(2, 4, BoundaryCondition.robin(1.0))
    # h = 1/3: -4/h^2 from the stencil and -2/h * beta per face
    assert op.to_dense()[0, 0] == pytest.approx(-48.0)


def test_robin_beta_per_boundary_node():
    base = build_laplacian(1, 5, BoundaryCondition.robin(1.0))
    field = build_laplacian(1, 5, BoundaryCondition.robin([1.0, 1.0]))
    assert np.allclose(base.to_dense(), field.to_dense())
    with pytest.raises(DomainError):
        build_laplacian(1, 5, BoundaryCondition.robin([1.0, 2.0, 3.0]))


def test_boundary_condition_validation():
    with pytest.raises(DomainError):
        BoundaryCondition('periodic')
    with pytest.raises(DomainError):
        BoundaryCondition('robin')
    with pytest.raises(DomainError):
        BoundaryCondition('neumann', 1.0)


def test_laplacian_argument_domain():
    with pytest.raises(DomainError):
        build_laplacian(4, 5, 'dirichlet')
    with pytest.raises(DomainError):
        build_laplacian(1, 2, 'dirichlet')


def test_coupled_system_adds_potential_to_constants():
    V = np.array([[0.0, 1.0], [1.0, 0.0]])
    op = build_coupled(8, 1, 2, V)
    assert op.side == 16
    assert op.space.components == 2
    assert op.is_metzler()
    assert np.allclose(op.apply(np.ones(16)), 1.0)
    assert op.params['layout'] == 'component-major'


def test_coupled_rejects_negative_coupling():
    with pytest.raises(ValidationError):
        build_coupled(8, 1, 2, np.array([[0.0, -1.0], [1.0, 0.0]]))


def test_coupled_rejects_reducible_pattern():
    with pytest.raises(ValidationError):
        build_coupled(8, 1, 2, np.array([[1.0, 0.0], [0.0, 1.0]]))
    with pytest.raises(ValidationError):
        build_coupled(8, 1, 2, np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_coupled_is_irreducible():
    op = build_coupled(6, 1, 3, np.array([[0, 1, 0], [0, 0, 1], [1, 0, 0]], dtype=float))
    count, _ = connected_components(op.matrix, directed=True, connection='strong')
    assert count == 1


def test_dtn_annihilates_constants_without_potential():
    op = build_dtn(9, 2, 0.0)
    assert op.side == 4 * 8
    assert op.space.dim == 1
    assert op.space.measure == pytest.approx(4.0)
    assert np.max(np.abs(op.apply(np.ones(op.side)))) <= 1e-8 * op.scale
    assert op.is_metzler(tol=1e-10)
    assert op.is_symmetrizable()


def test_dtn_surface_weights_in_three_dimensions():
    op = build_dtn(5, 3, 0.0)
    h = op.space.h
    assert op.space.measure == pytest.approx(6.0)
    nodes = op.space.nodes
    extreme = np.sum((nodes == 0.0) | (nodes == 1.0), axis=1)
    assert np.allclose(op.space.weights[extreme == 1], h ** 2)
    assert np.allclose(op.space.weights[extreme == 2], h ** 2)
    assert np.allclose(op.space.weights[extreme == 3], 0.75 * h ** 2)
    assert np.count_nonzero(extreme == 3) == 8
    assert np.max(np.abs(op.apply(np.ones(op.side)))) <= 1e-8 * op.scale
    assert op.is_symmetrizable()


def test_boundary_weights_match_face_trapezoids():
    h = 0.25
    square = np.array([[0.0, 0.0], [0.0, 0.5], [1.0, 1.0]])
    assert boundary_weights(square, h) == pytest.approx([h, h, h])
    cube = np.array([[0.0, 0.5, 0.5], [0.0, 0.0, 0.5], [1.0, 0.0, 1.0]])
    assert boundary_weights(cube, h) == pytest.approx([h ** 2, h ** 2, 0.75 * h ** 2])
    with pytest.raises(DomainError):
        boundary_weights(np.array([[0.5, 0.5]]), h)


def test_dtn_positive_potential_is_dissipative():
    op = build_dtn(9, 2, 1.0)
    assert np.all(op.apply(np.ones(op.side)) < 0)


def test_dtn_rejects_large_negative_potential():
    with pytest.raises(ValidationError, match="Dirichlet eigenvalue"):
        build_dtn(9, 2, -1e4)
    with pytest.raises(DomainError):
        build_dtn(9, 1, 0.0)


def test_power_of_robin_is_minus_square(robin_1d):
    square = build_power(robin_1d, 2)
    dense = robin_1d.to_dense()
    assert np.allclose(square.to_dense(), -dense @ dense)
    assert square.params['k'] == 2


def test_power_needs_negative_spectral_bound():
    with pytest.raises(ValidationError):
        build_power(from_matrix(np.diag([1.0, -1.0])), 2)
    with pytest.raises(DomainError):
        build_power(from_matrix(np.diag([-1.0, -2.0])), 0)


def test_build_from_params_dispatch():
    op = build_from_params('laplacian', {'d': 1, 'n': 20, 'bc': 'robin', 'beta': 1.0})
    assert op.family == 'laplacian' and op.params['beta'] == 1.0
    power = build_from_params('power', {'base_family': 'laplacian',
                                        'base_params': {'d': 1, 'bc': 'robin', 'beta': 1.0}, 'n': 12, 'k': 2})
    assert power.side == 12
    with pytest.raises(DomainError, match="Missing parameter"):
        build_from_params('rank_one', {})
    with pytest.raises(DomainError):
        build_from_params('helmholtz', {'n': 4})


def test_ladder_builder_overrides_n():
    builder = ladder_builder('laplacian', {'d': 1, 'bc': 'dirichlet'})
    assert [builder(n).side for n in (5, 9)] == [5, 9]


def test_grid_space_validation():
    with pytest.raises(DomainError):
        GridSpace(dim=1, nodes=[0.5], weights=[0.5], boundary_nodes=[], h=1.0, measure=1.0)
    with pytest.raises(DomainError):
        GridSpace(dim=1, nodes=[0.5], weights=[-1.0], boundary_nodes=[], h=1.0, measure=-1.0)
    with pytest.raises(DomainError):
        GridSpace.discrete(0)


def test_operator_rejects_mismatched_space():
    with pytest.raises(DomainError):
        from_matrix(np.eye(3), GridSpace.discrete(4))
    with pytest.raises(DomainError):
        from_matrix(np.ones((2, 3)))


def test_transposed_flags_params(rng):
    op = from_matrix(rng.normal(size=(4, 4)))
    twice = op.transposed().transposed()
    assert op.transposed().params['transposed']
    assert np.array_equal(twice.to_dense(), op.to_dense())


def test_dirichlet_min_eigenvalue_formula():
    h = 1.0 / 11
    assert dirichlet_min_eigenvalue(1, 10) == pytest.approx(4 / h ** 2 * np.sin(np.pi * h / 2) ** 2)
    assert dirichlet_min_eigenvalue(3, 10) == pytest.approx(3 * dirichlet_min_eigenvalue(1, 10))


def test_triplet_file_keeps_operator(tmp_path, robin_1d):
    path = tmp_path / 'robin.triplets'
    save_triplets(robin_1d, str(path))
    header = path.read_text().splitlines()[:4]
    assert header[0] == '# family laplacian'
    assert header[2].startswith('# shape 60 60 ')

    loaded = load_triplets(str(path))
    assert loaded.family == 'laplacian'
    assert loaded.params['bc'] == 'robin'
    assert (loaded.matrix != robin_1d.matrix).nnz == 0
    assert np.array_equal(loaded.space.weights, robin_1d.space.weights)


def test_triplet_file_missing_header(tmp_path):
    path = tmp_path / 'broken.triplets'
    path.write_text("0 0 1.0\n")
    with pytest.raises(DomainError, match="header"):
        load_triplets(str(path))
