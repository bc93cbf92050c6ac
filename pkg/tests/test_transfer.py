import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from iga_biharm_mg.assembly import assemble
from iga_biharm_mg.bspline import two_scale_matrix
from iga_biharm_mg.geometry import AffineMap, IdentityMap, QuarterAnnulus
from iga_biharm_mg.tensor_space import TensorSpace
from iga_biharm_mg.transfer import NonNestedError, build_transfer

COARSE = (0, 1 / 3, 1 / 2, 4 / 5, 1)


@settings(max_examples=15, deadline=None)
@given(p=st.integers(2, 6), d=st.integers(1, 3), seed=st.integers(0, 2**31))
def test_prolongation_is_exact_embedding(p, d, seed):
    rng = np.random.default_rng(seed)
    coarse = TensorSpace.from_breaks(COARSE, p, d)
    fine = coarse.refine()
    T = build_transfer(coarse, fine)
    c = rng.standard_normal(coarse.size)
    pts = rng.random((100, d))
    a = coarse.evaluate(c, pts)
    assert np.abs(fine.evaluate(T.prolong(c), pts) - a).max() <= 1e-12 * max(1.0, np.abs(a).max())


def test_restriction_is_transpose():
    coarse = TensorSpace.from_breaks(COARSE, 3, 2)
    T = build_transfer(coarse, coarse.refine())
    rng = np.random.default_rng(0)
    x, y = rng.standard_normal(T.shape[1]), rng.standard_normal(T.shape[0])
    assert abs(T.prolong(x) @ y - x @ T.restrict(y)) <= 1e-12 * np.linalg.norm(x) * np.linalg.norm(y)
    np.testing.assert_allclose(T.matrix.T @ y, T.restrict(y), atol=1e-13)


def test_prolongation_full_column_rank():
    coarse = TensorSpace.from_breaks(COARSE, 4, 2)
    P = build_transfer(coarse, coarse.refine()).matrix.toarray()
    assert np.linalg.matrix_rank(P) == P.shape[1]


def test_tensor_structure_of_2d_transfer():
    coarse = TensorSpace.from_breaks(COARSE, 3, 2)
    fine = coarse.refine()
    E = two_scale_matrix(coarse.kvs[0], fine.kvs[0]).toarray()[1:-1, 1:-1]
    np.testing.assert_array_equal(build_transfer(coarse, fine).matrix.toarray(), np.kron(E, E))


def test_unreduced_columns_sum_to_partition_of_unity():
    coarse = TensorSpace.from_breaks(COARSE, 3, 1)
    E = two_scale_matrix(coarse.kvs[0], coarse.refine().kvs[0])
    np.testing.assert_allclose(np.asarray(E.sum(axis=1)).ravel(), 1.0, atol=1e-14)
    # rows away from the removed boundary functions keep the property after reduction
    R = E.toarray()[1:-1, 1:-1]
    inner = np.flatnonzero((E.toarray()[1:-1, 0] == 0) & (E.toarray()[1:-1, -1] == 0))
    np.testing.assert_allclose(R[inner].sum(axis=1), 1.0, atol=1e-14)


def galerkin_defect(G, p=3):
    coarse = TensorSpace.from_breaks(COARSE, p, 2)
    fine = coarse.refine()
    P = build_transfer(coarse, fine).matrix
    Af = assemble(fine, G, beta=1.0).matrix()
    Ac = assemble(coarse, G, beta=1.0).matrix()
    return np.abs((P.T @ Af @ P - Ac).toarray()).max() / np.abs(Ac.toarray()).max()


@pytest.mark.parametrize("G", [IdentityMap(2), AffineMap(np.array([[1.0, 0.4], [0.0, 1.2]]))])
@pytest.mark.parametrize("p", [2, 3, 5])
def test_galerkin_identity(G, p):
    assert galerkin_defect(G, p) <= 1e-10


def test_galerkin_identity_on_curved_map_up_to_quadrature():
    # Gauss rules are not exact for the annulus Jacobian, so coarse and fine
    # integrals differ at quadrature-error level only
    assert galerkin_defect(QuarterAnnulus()) <= 1e-4


def test_non_nested_spaces_rejected():
    a = TensorSpace.from_breaks(COARSE, 3, 2)
    with pytest.raises(NonNestedError):
        build_transfer(a, TensorSpace.from_breaks((0, 0.3, 1), 3, 2))
    with pytest.raises(NonNestedError):
        build_transfer(a, TensorSpace.from_breaks(COARSE, 4, 2).refine())
    with pytest.raises(NonNestedError):
        build_transfer(a, TensorSpace.from_breaks(COARSE, 3, 3).refine())


def test_matrix_is_sparse():
    coarse = TensorSpace.from_breaks(COARSE, 3, 2)
    assert sp.issparse(build_transfer(coarse, coarse.refine()).matrix)
