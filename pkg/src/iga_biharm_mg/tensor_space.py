"""Tensor-product spline spaces with homogeneous Dirichlet reduction and the
per-direction splitting into functions with vanishing even boundary
derivatives (``S0``) and their L2-orthogonal complement (``S1``)."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .bspline import KnotVector, assemble_univariate, basis_derivatives, refine_uniform
from .linalg import BandedCholesky, KroneckerOp, apply_along_axis, factorize


@dataclass(frozen=True, eq=False)
class TensorSpace:
    """``(S_p,tau_1 (x) ... (x) S_p,tau_d)`` intersected with H^1_0.

    The first and last univariate basis function of each direction are
    removed; reduced index ``i`` corresponds to full index ``i + 1``.
    """

    kvs: tuple

    def __post_init__(self):
        kvs = tuple(self.kvs)
        object.__setattr__(self, "kvs", kvs)
        degs = {kv.degree for kv in kvs}
        if len(degs) != 1:
            raise ValueError("all directions must share one degree")
        if kvs[0].degree < 2:
            raise ValueError("H2-conforming discretization needs degree >= 2")

    @classmethod
    def from_breaks(cls, breaks, degree: int, dim_count: int) -> "TensorSpace":
        kv = KnotVector.from_breaks(breaks, degree)
        return cls((kv,) * dim_count)

    @property
    def dim_count(self) -> int:
        return len(self.kvs)

    @property
    def degree(self) -> int:
        return self.kvs[0].degree

    @property
    def shape(self) -> tuple:
        return tuple(kv.dim - 2 for kv in self.kvs)

    @property
    def full_shape(self) -> tuple:
        return tuple(kv.dim for kv in self.kvs)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def h(self) -> float:
        return max(kv.h for kv in self.kvs)

    @property
    def h_min(self) -> float:
        return min(kv.h_min for kv in self.kvs)

    def refine(self) -> "TensorSpace":
        return TensorSpace(tuple(refine_uniform(kv) for kv in self.kvs))

    def extend(self, coeffs) -> np.ndarray:
        """Embed reduced coefficients into the full space (zero boundary layer)."""
        full = np.zeros(self.full_shape)
        full[tuple(slice(1, -1) for _ in self.kvs)] = np.asarray(coeffs).reshape(self.shape)
        return full.reshape(-1)

    def restrict(self, full_coeffs) -> np.ndarray:
        full = np.asarray(full_coeffs).reshape(self.full_shape)
        return full[tuple(slice(1, -1) for _ in self.kvs)].reshape(-1).copy()

    def evaluate(self, coeffs, points, deriv=None, reduced: bool = True) -> np.ndarray:
        """Evaluate a spline (or a partial derivative) at scattered points."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        d = self.dim_count
        deriv = (0,) * d if deriv is None else tuple(deriv)
        c = self.extend(coeffs) if reduced else np.asarray(coeffs)
        c = c.reshape(self.full_shape)
        p = self.degree
        firsts, vals = [], []
        for k, kv in enumerate(self.kvs):
            f, ders = basis_derivatives(kv, pts[:, k], deriv[k])
            firsts.append(f)
            vals.append(ders[deriv[k]])
        out = np.zeros(pts.shape[0])
        for loc in itertools.product(range(p + 1), repeat=d):
            idx = tuple(firsts[k] + loc[k] for k in range(d))
            w = np.prod([vals[k][:, loc[k]] for k in range(d)], axis=0)
            out += c[idx] * w
        return out


def reduced_univariate(kv: KnotVector, form: str, quad=None) -> sp.csr_matrix:
    """Univariate Galerkin matrix restricted to the H^1_0 basis."""
    return assemble_univariate(kv, form, quad)[1:-1, 1:-1].tocsr()


def n_extra_constraints(p: int) -> int:
    """Number of even-derivative conditions per endpoint, floor((p-1)/2)."""
    return (p - 1) // 2


@dataclass(frozen=True, eq=False)
class DirectionSplit:
    """Bases of ``S0`` (sparse, ``n x n0``) and ``S1`` (dense, ``n x n1``)."""

    kv: KnotVector
    basis_s0: sp.csr_matrix
    basis_s1: np.ndarray
    constraints: np.ndarray
    mass: sp.csr_matrix
    biharmonic: sp.csr_matrix

    @property
    def n(self) -> int:
        return self.mass.shape[0]

    @property
    def n0(self) -> int:
        return self.basis_s0.shape[1]

    @property
    def n1(self) -> int:
        return self.basis_s1.shape[1]

    def basis(self, a: int):
        return self.basis_s0 if a == 0 else self.basis_s1

    @cached_property
    def mass0(self) -> sp.csr_matrix:
        P = self.basis_s0
        return (P.T @ self.mass @ P).tocsr()

    @cached_property
    def biharmonic0(self) -> sp.csr_matrix:
        P = self.basis_s0
        return (P.T @ self.biharmonic @ P).tocsr()

    @cached_property
    def mass1(self) -> np.ndarray:
        P = self.basis_s1
        return P.T @ (self.mass @ P)

    @cached_property
    def biharmonic1(self) -> np.ndarray:
        P = self.basis_s1
        return P.T @ (self.biharmonic @ P)

    @cached_property
    def mass0_factor(self):
        return factorize(self.mass0, label="for the S0 mass matrix")

    @cached_property
    def mass1_factor(self):
        return factorize(self.mass1, label="for the S1 mass matrix")

    def sub_mass(self, a: int):
        return self.mass0 if a == 0 else self.mass1

    def sub_mass_factor(self, a: int):
        return self.mass0_factor if a == 0 else self.mass1_factor


def even_derivative_constraints(kv: KnotVector) -> np.ndarray:
    """Rows ``d^{2l} v(0)`` then ``d^{2l} v(1)`` (l >= 1, 2l < p) on the reduced basis."""
    p = kv.degree
    k = n_extra_constraints(p)
    n = kv.dim - 2
    C = np.zeros((2 * k, n))
    if k == 0:
        return C
    for row0, x in ((0, 0.0), (k, 1.0)):
        first, ders = basis_derivatives(kv, [x], 2 * k)
        for l in range(1, k + 1):
            full = np.zeros(kv.dim)
            full[first[0]:first[0] + p + 1] = ders[2 * l, 0]
            r = full[1:-1]
            C[row0 + l - 1] = r / np.max(np.abs(r))
    return C


def build_split(kv: KnotVector, mass=None, biharmonic=None) -> DirectionSplit:
    """Split ``S_p,tau cap H^1_0`` into ``S0`` and its L2-orthogonal complement.

    ``S0`` is spanned by the basis functions untouched by the boundary
    conditions plus a null-space basis of the constraints on the few
    functions active at each endpoint. ``S1 = M^{-1} C^T`` (M-orthonormalized)
    is the mass-orthogonal complement: ``P0^T M P1 = (C P0)^T (...) = 0``.
    """
    p = kv.degree
    if p < 2:
        raise ValueError("the splitting needs degree >= 2")
    M = reduced_univariate(kv, "mass") if mass is None else sp.csr_matrix(mass)
    B = reduced_univariate(kv, "biharmonic") if biharmonic is None else sp.csr_matrix(biharmonic)
    n = kv.dim - 2
    k = n_extra_constraints(p)
    C = even_derivative_constraints(kv)
    if k == 0:
        return DirectionSplit(kv, sp.identity(n, format="csr"), np.zeros((n, 0)), C, M, B)

    tol = 1e-12
    left = np.flatnonzero(np.any(np.abs(C[:k]) > tol, axis=0))
    right = np.flatnonzero(np.any(np.abs(C[k:]) > tol, axis=0))
    if np.intersect1d(left, right).size == 0:
        blocks = [(left, C[:k][:, left]), (right, C[k:][:, right])]
    else:
        both = np.union1d(left, right)
        blocks = [(both, C[:, both])]

    touched = np.concatenate([cols for cols, _ in blocks])
    free = np.setdiff1d(np.arange(n), touched)
    columns = []  # (row indices, values) per S0 basis vector
    null_blocks = []
    for cols, Cb in blocks:
        Z = sla.null_space(Cb, rcond=1e-10)
        if Z.shape[1] != cols.size - Cb.shape[0]:
            raise np.linalg.LinAlgError("boundary constraint block is rank deficient")
        null_blocks.append((cols, Z))
    # order: left null vectors, untouched functions, right null vectors
    ordered = []
    if len(null_blocks) == 2:
        ordered.append(null_blocks[0])
        ordered.extend((np.array([i]), np.ones((1, 1))) for i in free)
        ordered.append(null_blocks[1])
    else:
        ordered.extend((np.array([i]), np.ones((1, 1))) for i in free)
        ordered.append(null_blocks[0])
    rows, cols_, vals = [], [], []
    j = 0
    for idx, Z in ordered:
        for c in range(Z.shape[1]):
            rows.append(idx)
            cols_.append(np.full(idx.size, j))
            vals.append(Z[:, c])
            j += 1
    P0 = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols_))),
                       shape=(n, j))
    P0.eliminate_zeros()

    Mfac = BandedCholesky(M)
    P1 = Mfac.solve(np.linalg.qr(C.T)[0])
    for _ in range(2):  # second pass restores orthonormality lost to conditioning
        G = P1.T @ (M @ P1)
        w, V = np.linalg.eigh(0.5 * (G + G.T))
        P1 = P1 @ (V / np.sqrt(w))
    return DirectionSplit(kv, P0, P1, C, M, B)


@dataclass(frozen=True, eq=False)
class SubspaceEmbedding:
    """Embedding ``P_alpha = P_{alpha_1} (x) ... (x) P_{alpha_d}`` of one subspace."""

    alpha: tuple
    factors: tuple

    @property
    def op(self) -> KroneckerOp:
        return KroneckerOp(self.factors)

    @property
    def shape(self):
        return self.op.shape

    @property
    def sub_shape(self) -> tuple:
        return tuple(f.shape[1] for f in self.factors)

    @property
    def rank(self) -> int:
        return int(np.prod(self.sub_shape))

    def apply(self, c):
        return self.op @ c

    def apply_T(self, u):
        return KroneckerOp([f.T for f in self.factors]) @ u

    def tocsr(self):
        return self.op.tocsr()


def subspace_embeddings(splits) -> list:
    """All ``2^d`` embeddings, ``alpha`` in lexicographic order."""
    out = []
    for alpha in itertools.product((0, 1), repeat=len(splits)):
        out.append(SubspaceEmbedding(alpha, tuple(s.basis(a) for s, a in zip(splits, alpha))))
    return out


def space_splits(space: TensorSpace) -> list:
    cache = {}
    out = []
    for kv in space.kvs:
        if kv not in cache:
            cache[kv] = build_split(kv)
        out.append(cache[kv])
    return out


def l2_project_subspace(space: TensorSpace, alpha, coeffs, splits=None) -> np.ndarray:
    """Coefficients (in the ``S^alpha`` basis) of the L2 projection of ``coeffs``.

    Computed direction by direction: ``M_a^{-1} P_a^T M`` along each axis.
    """
    splits = space_splits(space) if splits is None else splits
    X = np.asarray(coeffs, dtype=float).reshape(space.shape)
    for k, (s, a) in enumerate(zip(splits, alpha)):
        X = apply_along_axis(s.mass, X, k)
        X = apply_along_axis(s.basis(a).T, X, k)
        Y = np.moveaxis(X, k, 0)
        shp = Y.shape
        if shp[0]:
            Y = s.sub_mass_factor(a).solve(Y.reshape(shp[0], -1)).reshape(shp)
        X = np.moveaxis(Y, 0, k)
    return X.reshape(-1)


def embed_subspace(splits, alpha, sub_coeffs) -> np.ndarray:
    return KroneckerOp([s.basis(a) for s, a in zip(splits, alpha)]) @ sub_coeffs
