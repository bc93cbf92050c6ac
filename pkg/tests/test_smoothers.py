import itertools
import warnings

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from iga_biharm_mg.assembly import assemble
from iga_biharm_mg.linalg import FactorizationError
from iga_biharm_mg.smoothers import (
    GaussSeidel, SmootherConfig, ZeroDiagonalError, build_scms, build_scms_for_level, build_smoother,
    hybrid_apply, scms_apply, scms_sigma, sgs_apply,
)
from iga_biharm_mg.tensor_space import TensorSpace, build_split, space_splits

COARSE = (0, 1 / 3, 1 / 2, 4 / 5, 1)


def tiny_level(p=3, refinements=0, beta=1.0):
    s = TensorSpace.from_breaks(COARSE, p, 2)
    for _ in range(refinements):
        s = s.refine()
    return assemble(s, beta=beta)


def random_spd(rng, n):
    Q = rng.standard_normal((n, n))
    return Q @ Q.T + n * np.eye(n)


# ------------------------------------------------------------------ config

def test_config_defaults_and_aliases():
    assert SmootherConfig("gs").kind == "sgs"
    assert SmootherConfig("scms").damping == 1.0
    assert SmootherConfig("hybrid").damping == 0.1
    assert SmootherConfig("hybrid", tau=0.5).damping == 0.5
    assert SmootherConfig(sigma0_inv=0.02).sigma0 == pytest.approx(50.0)


@pytest.mark.parametrize("kwargs", [dict(kind="jacobi"), dict(tau=0.0), dict(sigma0_inv=-1.0), dict(nu=0),
                                    dict(sigma_scale=0.0)])
def test_config_rejects_invalid(kwargs):
    with pytest.raises(ValueError):
        SmootherConfig(**kwargs)


# -------------------------------------------------------------------- SCMS

def test_sigma_value():
    assert scms_sigma(1 / 6, 1 / 144) == pytest.approx(186624.0, rel=1e-12)


def test_pure_s0_local_operator():
    splits = space_splits(TensorSpace.from_breaks(COARSE, 4, 2).refine())
    sigma, beta = 123.0, 2.5
    s = build_scms(splits, beta, sigma)
    M0 = splits[0].mass0.toarray()
    np.testing.assert_allclose(s.local_operator((0, 0)).toarray(), (2 * sigma + beta) * np.kron(M0, M0),
                               rtol=1e-14, atol=1e-14)


def test_mixed_local_operator():
    splits = space_splits(TensorSpace.from_breaks(COARSE, 3, 2).refine())
    sigma, beta = 10.0, 1.0
    s = build_scms(splits, beta, sigma)
    M0, M1, B1 = splits[0].mass0.toarray(), splits[1].mass1, splits[1].biharmonic1
    np.testing.assert_allclose(s.local_operator((0, 1)).toarray(),
                               (sigma + beta) * np.kron(M0, M1) + np.kron(M0, B1), atol=1e-12)


@pytest.mark.parametrize("alpha", list(itertools.product((0, 1), repeat=2)))
def test_beta_enters_only_through_mass_term(alpha):
    splits = space_splits(TensorSpace.from_breaks(COARSE, 5, 2).refine())
    big = build_scms(splits, 1e7, 50.0).local_operator(alpha).toarray()
    zero = build_scms(splits, 0.0, 50.0).local_operator(alpha).toarray()
    sub = np.ones((1, 1))
    for s_, a in zip(splits, alpha):
        sub = np.kron(sub, s_.mass0.toarray() if a == 0 else s_.mass1)
    np.testing.assert_allclose(big - zero, 1e7 * sub, rtol=1e-12, atol=1e-12 * np.abs(big).max())


def test_apply_matches_materialized_inverse():
    lv = tiny_level()
    assert lv.space.shape == (5, 5)
    s = build_scms_for_level(lv, 0.02)
    dense = s.inverse_matrix()
    applied = np.column_stack([scms_apply(s, e) for e in np.eye(lv.size)])
    assert np.abs(dense - applied).max() <= 1e-11 * np.abs(dense).max()
    np.testing.assert_allclose(dense, dense.T, atol=1e-12 * np.abs(dense).max())


def test_apply_3d_matches_materialized_inverse():
    s = TensorSpace.from_breaks(COARSE, 3, 3)
    scms = build_scms(space_splits(s), 1.0, 1e3)
    dense = scms.inverse_matrix()
    applied = np.column_stack([scms_apply(scms, e) for e in np.eye(s.size)])
    assert np.abs(dense - applied).max() <= 1e-11 * np.abs(dense).max()


def test_apply_zero_and_positivity():
    lv = tiny_level(p=4, refinements=1)
    s = build_scms_for_level(lv, 0.02)
    np.testing.assert_array_equal(scms_apply(s, np.zeros(lv.size)), 0)
    R = np.random.default_rng(0).standard_normal((100, lv.size))
    assert min(r @ scms_apply(s, r) for r in R) > 0


def test_degree_two_warns_and_invalid_inputs_raise():
    splits = space_splits(TensorSpace.from_breaks(COARSE, 2, 2))
    with pytest.warns(UserWarning):
        build_scms(splits, 1.0, 10.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(ValueError):
            build_scms(splits, 1.0, 0.0)
        with pytest.raises(ValueError):
            build_scms(splits, -1.0, 1.0)


def test_factorization_failure_names_subspace():
    s = TensorSpace.from_breaks(COARSE, 3, 2)
    good = build_split(s.kvs[0])
    bad = build_split(s.kvs[0])
    bad.__dict__["biharmonic1"] = -1e12 * np.eye(bad.n1)
    with pytest.raises(FactorizationError, match=r"alpha=\(0, 1\)"):
        build_scms([good, bad], 1.0, 1.0)


# ------------------------------------------------------------ Gauss-Seidel

def test_sgs_diagonal_matrix():
    d = np.array([2.0, 4.0, 5.0, 8.0])
    r = np.array([1.0, -2.0, 3.0, 0.5])
    np.testing.assert_allclose(sgs_apply(sp.diags(d, format="csr"), r), r / d, atol=1e-15)


def test_sgs_3x3_matches_triangular_sweeps():
    A = np.array([[4.0, -1.0, 0.5], [-1.0, 3.0, -0.7], [0.5, -0.7, 2.0]])
    r = np.array([1.0, 2.0, -1.0])
    L = np.tril(A)
    U = np.triu(A)
    x = np.linalg.solve(L, r)             # forward sweep from zero
    x = x + np.linalg.solve(U, r - A @ x)  # backward sweep
    np.testing.assert_allclose(sgs_apply(sp.csr_matrix(A), r), x, atol=1e-14)
    D = np.diag(np.diag(A))
    np.testing.assert_allclose(x, np.linalg.solve(L @ np.linalg.solve(D, U), r), atol=1e-14)


@settings(max_examples=15, deadline=None)
@given(n=st.integers(2, 12), seed=st.integers(0, 2**31))
def test_sgs_error_propagation_contracts(n, seed):
    A = random_spd(np.random.default_rng(seed), n)
    S = np.column_stack([sgs_apply(sp.csr_matrix(A), e) for e in np.eye(n)])
    np.testing.assert_allclose(S, S.T, atol=1e-10 * np.abs(S).max())
    assert np.max(np.abs(np.linalg.eigvals(np.eye(n) - S @ A))) < 1


def test_zero_diagonal_rejected():
    A = sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 0.0]]))
    with pytest.raises(ZeroDiagonalError, match="row 1"):
        GaussSeidel(A)


# ------------------------------------------------------------------ hybrid

def test_hybrid_without_scms_step_is_sgs():
    lv = tiny_level(p=3, refinements=1)
    s = build_scms(space_splits(lv.space), lv.beta, 1e4, tau=0.0)
    A = lv.matrix()
    rng = np.random.default_rng(2)
    x, b = rng.standard_normal((2, lv.size))
    gs = GaussSeidel(A)
    y = x.copy()
    gs.forward(y, b)
    gs.backward(y, b)
    np.testing.assert_array_equal(hybrid_apply(A, s, x, b), y)


def test_hybrid_preconditioner_is_symmetric():
    lv = tiny_level(p=4, refinements=1)
    s = build_scms_for_level(lv, 0.015, tau=0.1, sigma_scale=2.0)
    A = lv.matrix()
    rng = np.random.default_rng(3)
    r, q = rng.standard_normal((2, lv.size))
    Hr, Hq = hybrid_apply(A, s, None, r), hybrid_apply(A, s, None, q)
    assert abs(Hr @ q - r @ Hq) <= 1e-10 * np.linalg.norm(Hr) * np.linalg.norm(q)


@pytest.mark.parametrize("kind", ["scms", "sgs", "hybrid"])
def test_smoothers_reduce_energy_error(kind):
    lv = tiny_level(p=3, refinements=2)
    sm = build_smoother(SmootherConfig(kind), lv)
    A = lv.matrix().toarray()
    rng = np.random.default_rng(4)
    x_star = rng.standard_normal(lv.size)
    b = A @ x_star
    x = rng.standard_normal(lv.size)
    e0 = (x - x_star) @ A @ (x - x_star)
    x1 = sm.smooth(x, b)
    e1 = (x1 - x_star) @ A @ (x1 - x_star)
    assert e1 < e0
    np.testing.assert_allclose(sm.smooth(None, b), sm.smooth(np.zeros(lv.size), b), atol=1e-12)
