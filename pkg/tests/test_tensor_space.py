import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from iga_biharm_mg.bspline import KnotVector, basis_derivatives, collocation_matrix, refine_uniform
from iga_biharm_mg.linalg import KroneckerOp
from iga_biharm_mg.tensor_space import (
    TensorSpace, build_split, embed_subspace, l2_project_subspace, space_splits, subspace_embeddings,
)

COARSE = (0, 1 / 3, 1 / 2, 4 / 5, 1)


def relative_even_derivs(kv, coeffs_reduced):
    """|d^{2l} v| at both ends relative to sum |c_i| |d^{2l} b_i|, for 2 <= 2l < p."""
    full = np.concatenate([[0.0], coeffs_reduced, [0.0]])
    out = []
    for x in (0.0, 1.0):
        for l in range(1, (kv.degree - 1) // 2 + 1):
            row = collocation_matrix(kv, [x], 2 * l).toarray()[0]
            scale = np.abs(row) @ np.abs(full)
            out.append(abs(row @ full) / scale if scale > 0 else 0.0)
    return np.array(out)


def test_space_dimensions():
    s = TensorSpace.from_breaks(COARSE, 3, 2)
    assert s.shape == (5, 5) and s.full_shape == (7, 7) and s.size == 25
    r = s.refine()
    assert r.shape == (9, 9)
    assert s.h == pytest.approx(1 / 3) and s.h_min == pytest.approx(1 / 6)


def test_degree_one_rejected():
    with pytest.raises(ValueError):
        TensorSpace.from_breaks(COARSE, 1, 2)
    with pytest.raises(ValueError):
        build_split(KnotVector.from_breaks(COARSE, 1))


def test_extend_restrict_round_trip():
    s = TensorSpace.from_breaks(COARSE, 2, 2)
    c = np.arange(s.size, dtype=float)
    full = s.extend(c)
    assert full.size == int(np.prod(s.full_shape))
    np.testing.assert_array_equal(s.restrict(full), c)
    # reduced functions vanish on the boundary
    pts = np.array([[0.0, 0.3], [1.0, 0.7], [0.4, 0.0], [0.2, 1.0]])
    np.testing.assert_allclose(s.evaluate(c, pts), 0, atol=1e-13)


@pytest.mark.parametrize("p,n1", [(2, 0), (3, 2), (4, 2), (5, 4), (9, 8)])
def test_complement_dimension(p, n1):
    split = build_split(KnotVector.uniform(12, p))
    assert split.n1 == n1
    assert split.n0 + split.n1 == split.n


@pytest.mark.parametrize("p", [3, 4, 5, 6, 7])
@pytest.mark.parametrize("refinements", [0, 1, 2])
def test_split_invariants(p, refinements):
    kv = KnotVector.from_breaks(COARSE, p)
    for _ in range(refinements):
        kv = refine_uniform(kv)
    split = build_split(kv)
    P0 = split.basis_s0.toarray()
    # even derivatives of S0 functions vanish at both ends
    for j in range(P0.shape[1]):
        assert relative_even_derivs(kv, P0[:, j]).max(initial=0.0) <= 1e-10
    cross = split.basis_s1.T @ (split.mass @ P0)
    assert np.abs(cross).max() <= 1e-12
    assert np.linalg.matrix_rank(np.hstack([P0, split.basis_s1])) == split.n


def test_sine_projection_has_zero_second_derivative_at_ends():
    kv = KnotVector.uniform(16, 3)
    split = build_split(kv)
    # L2 projection of sin(pi x) onto S0: solve with the S0 mass matrix
    g, w = np.polynomial.legendre.leggauss(10)
    xs = np.concatenate([(a + b) / 2 + (b - a) / 2 * g for a, b in zip(kv.breaks[:-1], kv.breaks[1:])])
    ws = np.concatenate([(b - a) / 2 * w for a, b in zip(kv.breaks[:-1], kv.breaks[1:])])
    C = collocation_matrix(kv, xs).toarray()[:, 1:-1]
    load = split.basis_s0.T @ (C.T @ (ws * np.sin(np.pi * xs)))
    c0 = split.basis_s0 @ np.linalg.solve(split.mass0.toarray(), load)
    full = np.concatenate([[0.0], c0, [0.0]])
    for x in (0.0, 1.0):
        first, ders = basis_derivatives(kv, [x], 2)
        assert abs(ders[2, 0] @ full[first[0]:first[0] + 4]) <= 1e-10


def test_embeddings_cover_space():
    s = TensorSpace.from_breaks(COARSE, 5, 3)
    emb = subspace_embeddings(space_splits(s))
    assert [e.alpha for e in emb] == list(itertools.product((0, 1), repeat=3))
    assert sum(e.rank for e in emb) == s.size
    full = np.hstack([e.tocsr().toarray() for e in emb])
    assert np.linalg.matrix_rank(full) == s.size


def tensor_mass(s, splits):
    return KroneckerOp([sp_.mass for sp_ in splits])


@settings(max_examples=10, deadline=None)
@given(p=st.integers(3, 6), d=st.integers(1, 3), seed=st.integers(0, 2**31))
def test_projections_decompose_orthogonally(p, d, seed):
    s = TensorSpace.from_breaks(COARSE, p, d)
    splits = space_splits(s)
    M = tensor_mass(s, splits)
    u = np.random.default_rng(seed).standard_normal(s.size)
    total = np.zeros_like(u)
    norms = 0.0
    for alpha in itertools.product((0, 1), repeat=d):
        part = embed_subspace(splits, alpha, l2_project_subspace(s, alpha, u, splits))
        total += part
        norms += part @ (M @ part)
    np.testing.assert_allclose(total, u, atol=1e-11 * np.abs(u).max())
    assert abs(norms - u @ (M @ u)) <= 1e-11 * (u @ (M @ u))


@pytest.mark.parametrize("alpha", [(0, 0), (0, 1), (1, 0), (1, 1)])
def test_projection_idempotent(alpha):
    s = TensorSpace.from_breaks(COARSE, 4, 2).refine()
    splits = space_splits(s)
    rng = np.random.default_rng(0)
    sub = rng.standard_normal(int(np.prod([sp_.basis(a).shape[1] for sp_, a in zip(splits, alpha)])))
    u = embed_subspace(splits, alpha, sub)
    np.testing.assert_allclose(l2_project_subspace(s, alpha, u, splits), sub, atol=1e-12 * np.abs(sub).max())
