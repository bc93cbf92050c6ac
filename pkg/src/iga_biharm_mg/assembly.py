"""Galerkin assembly of mass, biharmonic stiffness and load vectors.

On the identity map every matrix is a short sum of Kronecker products of
univariate matrices and is kept in that form. For other maps the integrals
are evaluated by sum factorization over the tensor Gauss grid: the integrand
weight is contracted one direction at a time against products of univariate
basis derivatives, which yields all entries of the banded tensor pattern at
once.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .bspline import assemble_univariate, basis_derivatives, collocation_matrix, gauss_rule
from .geometry import GeometryMap, IdentityMap, laplacian_coefficients
from .linalg import KroneckerOp, KroneckerSum, apply_along_axis
from .tensor_space import TensorSpace


class LiftError(np.linalg.LinAlgError):
    pass


@dataclass
class ProblemData:
    """``beta u + lap^2 u = f``, ``u = g1`` and ``lap u = g2`` on the boundary."""

    beta: float
    f: Callable
    g1: Optional[Callable] = None
    g2: Optional[Callable] = None
    exact: Optional[Callable] = None

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")


def manufactured_problem(dim: int, beta: float) -> ProblemData:
    """Data for the exact solution ``u = prod_k sin(pi x_k)``."""

    def u(x):
        return np.prod(np.sin(np.pi * np.asarray(x)), axis=-1)

    return ProblemData(
        beta=beta,
        f=lambda x: (beta + dim ** 2 * np.pi ** 4) * u(x),
        g1=u,
        g2=lambda x: -dim * np.pi ** 2 * u(x),
        exact=u,
    )


@dataclass(eq=False)
class AssembledLevel:
    space: TensorSpace
    geometry: GeometryMap
    beta: float
    mass: object
    stiffness: object
    rhs: Optional[np.ndarray] = None
    lift: Optional[np.ndarray] = None
    univariate: list = field(default_factory=list)

    @cached_property
    def operator(self):
        """``A = beta M + B`` as a Kronecker sum or a sparse matrix."""
        if isinstance(self.stiffness, KroneckerSum):
            return self.beta * self.mass + self.stiffness
        return (self.beta * self.mass + self.stiffness).tocsr()

    @property
    def structured(self) -> bool:
        return isinstance(self.operator, KroneckerSum)

    def matrix(self) -> sp.csr_matrix:
        if "_csr" not in self.__dict__:
            op = self.operator
            self.__dict__["_csr"] = op.tocsr() if isinstance(op, KroneckerSum) else op
        return self.__dict__["_csr"]

    def mass_matrix(self) -> sp.csr_matrix:
        m = self.mass
        return m.tocsr() if isinstance(m, (KroneckerOp, KroneckerSum)) else m

    def stiffness_matrix(self) -> sp.csr_matrix:
        b = self.stiffness
        return b.tocsr() if isinstance(b, (KroneckerOp, KroneckerSum)) else b

    @property
    def size(self) -> int:
        return self.space.size


def _quad(space: TensorSpace, order=None):
    return [gauss_rule(kv.grid, order or kv.degree + 1) for kv in space.kvs]


def univariate_matrices(kv, quad=None) -> dict:
    """Full-space univariate mass, stiffness, biharmonic and mixed matrices."""
    return {f: assemble_univariate(kv, f, quad) for f in ("mass", "stiffness", "biharmonic", "mixed")}


def _reduce(A):
    return A[1:-1, 1:-1].tocsr()


def _structured_full(space: TensorSpace, quads):
    """Full-space mass and biharmonic operators on the parameter domain."""
    uni = [univariate_matrices(kv, q) for kv, q in zip(space.kvs, quads)]
    d = space.dim_count
    M = [u["mass"] for u in uni]
    mass = KroneckerOp(M)
    terms = []
    for k in range(d):
        fs = list(M)
        fs[k] = uni[k]["biharmonic"]
        terms.append((1.0, fs))
    for k in range(d):
        for l in range(d):
            if k != l:
                fs = list(M)
                fs[k] = uni[k]["mixed"]
                fs[l] = uni[l]["mixed"].T.tocsr()
                terms.append((1.0, fs))
    return mass, KroneckerSum(terms), uni


def _pair_matrix(kv, first, ders, w, a, b):
    """Rows ``i*(2p+1) + (j - i + p)``, columns quadrature points:
    ``w_q b_i^{(a)}(x_q) b_j^{(b)}(x_q)``."""
    p = kv.degree
    nq = w.size
    s, t = np.meshgrid(np.arange(p + 1), np.arange(p + 1), indexing="ij")
    rows = (first[:, None, None] + s[None]) * (2 * p + 1) + (t - s + p)[None]
    vals = w[:, None, None] * ders[a][:, :, None] * ders[b][:, None, :]
    cols = np.broadcast_to(np.arange(nq)[:, None, None], rows.shape)
    return sp.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())),
                         shape=(kv.dim * (2 * p + 1), nq))


def _tensor_grid(quads, rows=None):
    pts = [q.points for q in quads]
    if rows is not None:
        pts = [pts[0][rows]] + pts[1:]
    return np.stack(np.meshgrid(*pts, indexing="ij"), axis=-1)


def _banded_to_csr(R, dims, p):
    """Convert sum-factorized entries ``R[i_1, o_1, ..., i_d, o_d]`` to CSR."""
    d = len(dims)
    w = 2 * p + 1
    R = R.reshape(sum(([n, w] for n in dims), []))
    R = np.transpose(R, list(range(0, 2 * d, 2)) + list(range(1, 2 * d, 2)))
    idx = np.stack(np.meshgrid(*[np.arange(n) for n in dims], indexing="ij"), axis=-1).reshape(-1, d)
    offs = np.array(list(itertools.product(range(w), repeat=d))) - p
    strides = np.array([int(np.prod(dims[k + 1:])) for k in range(d)])
    nrows = idx.shape[0]
    data = R.reshape(nrows, -1)
    mask = np.ones((nrows, offs.shape[0]), dtype=bool)
    cols = np.zeros((nrows, offs.shape[0]), dtype=np.int64)
    for k in range(d):
        j = idx[:, k:k + 1] + offs[None, :, k]
        mask &= (j >= 0) & (j < dims[k])
        cols += j * strides[k]
    indptr = np.concatenate([[0], np.cumsum(mask.sum(axis=1))])
    A = sp.csr_matrix((data[mask], cols[mask], indptr), shape=(nrows, nrows))
    A.eliminate_zeros()
    return A


def _sumfact_full(space: TensorSpace, G: GeometryMap, quads):
    """Full-space mass and biharmonic CSR matrices for a general map."""
    d = space.dim_count
    p = space.degree
    dims = list(space.full_shape)
    geo = []
    for kv, q in zip(space.kvs, quads):
        first, ders = basis_derivatives(kv, q.points, 2)
        geo.append((kv, first, ders, q.point_weights))
    cache = {}

    def E(k, a, b):
        key = (k, a, b)
        if key not in cache:
            kv, first, ders, w = geo[k]
            cache[key] = _pair_matrix(kv, first, ders, w, a, b)
        return cache[key]

    xi = _tensor_grid(quads)
    S, t, det = laplacian_coefficients(G, xi)
    det = np.abs(det)
    del xi

    def contract(W, orders_a, orders_b):
        X = W
        for k in reversed(range(d)):
            X = apply_along_axis(E(k, orders_a[k], orders_b[k]), X, k)
        return X

    mass = _banded_to_csr(contract(det, (0,) * d, (0,) * d), dims, p)

    ops = []
    for a in range(d):
        for b in range(a, d):
            o = [0] * d
            o[a] += 1
            o[b] += 1
            ops.append((tuple(o), S[..., a, b] * (1.0 if a == b else 2.0)))
    for a in range(d):
        o = [0] * d
        o[a] = 1
        ops.append((tuple(o), t[..., a]))
    del S, t
    R = None
    for (oa, ca), (ob, cb) in itertools.product(ops, ops):
        X = contract(ca * cb * det, oa, ob)
        R = X if R is None else R + X
    stiff = _banded_to_csr(R, dims, p)
    stiff = (0.5 * (stiff + stiff.T)).tocsr()
    return mass, stiff


def integrate_against_basis(space: TensorSpace, G: GeometryMap, func, quads=None,
                            chunk_points: int = 2_000_000) -> np.ndarray:
    """Full-space vector ``int_Omega func(x) phi_i(x) dx``."""
    quads = quads or _quad(space)
    d = space.dim_count
    C = []
    for kv, q in zip(space.kvs, quads):
        C.append((collocation_matrix(kv, q.points).T @ sp.diags(q.point_weights)).tocsr())
    n0 = quads[0].points.size
    per_row = int(np.prod([q.points.size for q in quads[1:]]))
    step = max(1, chunk_points // max(per_row, 1))
    out = np.zeros(space.full_shape)
    for start in range(0, n0, step):
        rows = np.arange(start, min(n0, start + step))
        xi = _tensor_grid(quads, rows)
        x = G.value(xi)
        det = np.linalg.det(G.jacobian(xi))
        X = func(x) * np.abs(det)
        for k in range(1, d):
            X = apply_along_axis(C[k], X, k)
        out += apply_along_axis(C[0][:, rows], X, 0)
    return out.reshape(-1)


def natural_boundary_term(space: TensorSpace, G: GeometryMap, g2, quads=None) -> np.ndarray:
    """Full-space vector ``int_{dOmega} g2 (d phi_i / dn) ds``.

    Uses Nanson's relation ``n ds = det(J) J^{-T} n^ dS`` so that the integrand
    on a parametric face is ``g2 det(J) grad^ phi . (J^{-1} J^{-T} n^)``.
    """
    quads = quads or _quad(space)
    d = space.dim_count
    out = np.zeros(space.full_shape)
    for k in range(d):
        for side in (0.0, 1.0):
            pts = [q.points if m != k else np.array([side]) for m, q in enumerate(quads)]
            xi = np.stack(np.meshgrid(*pts, indexing="ij"), axis=-1)
            J = G.jacobian(xi)
            Jinv = np.linalg.inv(J)
            det = np.linalg.det(J)
            nhat = np.zeros(d)
            nhat[k] = 1.0 if side == 1.0 else -1.0
            q = np.einsum("...ac,...bc,b->...a", Jinv, Jinv, nhat)
            base = g2(G.value(xi)) * det
            for a in range(d):
                X = base * q[..., a]
                for m, (kv, qr) in enumerate(zip(space.kvs, quads)):
                    order = 1 if m == a else 0
                    if m == k:
                        Cm = collocation_matrix(kv, [side], order).T.tocsr()
                    else:
                        Cm = (collocation_matrix(kv, qr.points, order).T @ sp.diags(qr.point_weights)).tocsr()
                    X = apply_along_axis(Cm, X, m)
                out += X
    return out.reshape(-1)


def boundary_mask(space: TensorSpace) -> np.ndarray:
    mask = np.zeros(space.full_shape, dtype=bool)
    for k in range(space.dim_count):
        sl = [slice(None)] * space.dim_count
        sl[k] = 0
        mask[tuple(sl)] = True
        sl[k] = -1
        mask[tuple(sl)] = True
    return mask.reshape(-1)


def lift_boundary(space: TensorSpace, G: GeometryMap, g1) -> np.ndarray:
    """Full-space coefficients on the boundary layer fitting ``g1`` on the boundary.

    Least-squares fit of the trace at the Greville abscissae of every face,
    oversampled twice by adding midpoints. Zero when ``g1`` is absent or zero.
    """
    n = int(np.prod(space.full_shape))
    if g1 is None:
        return np.zeros(n)
    bmask = boundary_mask(space)
    bidx = np.flatnonzero(bmask)
    d = space.dim_count
    rows, rhs = [], []
    for k in range(d):
        for side in (0.0, 1.0):
            mats, pts = [], []
            for m, kv in enumerate(space.kvs):
                if m == k:
                    s = np.array([side])
                else:
                    g = kv.greville()
                    s = np.sort(np.concatenate([g, 0.5 * (g[:-1] + g[1:])]))
                pts.append(s)
                mats.append(collocation_matrix(kv, s))
            C = mats[0]
            for Cm in mats[1:]:
                C = sp.kron(C, Cm, format="csr")
            xi = np.stack(np.meshgrid(*pts, indexing="ij"), axis=-1).reshape(-1, d)
            rows.append(C[:, bidx])
            rhs.append(g1(G.value(xi)))
    Cb = sp.vstack(rows).tocsr()
    y = np.concatenate(rhs)
    out = np.zeros(n)
    if not np.any(y):
        return out
    N = (Cb.T @ Cb).tocsc()
    try:
        c = spla.splu(N).solve(Cb.T @ y)
    except RuntimeError as e:
        raise LiftError("boundary fit is rank deficient") from e
    if not np.all(np.isfinite(c)):
        raise LiftError("boundary fit is rank deficient")
    out[bidx] = c
    return out


def assemble_matrices(space: TensorSpace, G: GeometryMap, quad_order=None):
    """Full-space ``(mass, biharmonic)`` operators and univariate reduced data."""
    quads = _quad(space, quad_order)
    if G.dim != space.dim_count:
        raise ValueError("geometry and space dimensions differ")
    if G.is_identity:
        mass, stiff, uni = _structured_full(space, quads)
    else:
        mass, stiff = _sumfact_full(space, G, quads)
        uni = [univariate_matrices(kv, q) for kv, q in zip(space.kvs, quads)]
    uni_red = [{"mass": _reduce(u["mass"]), "biharmonic": _reduce(u["biharmonic"])} for u in uni]
    return mass, stiff, uni_red, quads


def _reduce_op(op, space):
    if isinstance(op, (KroneckerOp, KroneckerSum)):
        if isinstance(op, KroneckerOp):
            op = KroneckerSum([(1.0, op.factors)])
        return op.map_factors(lambda k, f: _reduce(sp.csr_matrix(f)))
    keep = ~boundary_mask(space)
    idx = np.flatnonzero(keep)
    return op[idx][:, idx].tocsr()


def assemble(space: TensorSpace, G: GeometryMap | None = None, data: ProblemData | None = None,
             quad_order=None, beta: float | None = None) -> AssembledLevel:
    """Assemble ``M``, ``B`` (``B_ij = int lap phi_i lap phi_j``) and the load vector.

    The load vector is ``(f, phi_i) + int g2 d_n phi_i ds - (A lift)_i`` where
    ``lift`` interpolates ``g1`` on the boundary layer.
    """
    G = IdentityMap(space.dim_count) if G is None else G
    if data is None and beta is None:
        raise ValueError("need problem data or beta")
    b = data.beta if data is not None else float(beta)
    if b < 0:
        raise ValueError("beta must be nonnegative")
    mass_f, stiff_f, uni, quads = assemble_matrices(space, G, quad_order)
    mass = _reduce_op(mass_f, space)
    stiff = _reduce_op(stiff_f, space)
    rhs = lift = None
    if data is not None:
        full = integrate_against_basis(space, G, data.f, quads)
        if data.g2 is not None:
            full += natural_boundary_term(space, G, data.g2, quads)
        lift = lift_boundary(space, G, data.g1)
        if np.any(lift):
            full -= b * (mass_f @ lift) + stiff_f @ lift
        rhs = space.restrict(full)
    return AssembledLevel(space, G, b, mass, stiff, rhs, lift, uni)


def assemble_simplified(space: TensorSpace, beta: float = 0.0):
    """Parametric ``(Bbar, Mhat)``: ``Bbar = sum_i M (x) .. B_(i) .. (x) M``, ``Mhat = (x) M``.

    ``beta`` is accepted for symmetry with the smoother set-up; the returned
    operators do not depend on it (``Abar = Bbar + beta Mhat``).
    """
    M = [_reduce(assemble_univariate(kv, "mass")) for kv in space.kvs]
    B = [_reduce(assemble_univariate(kv, "biharmonic")) for kv in space.kvs]
    terms = []
    for k in range(space.dim_count):
        fs = list(M)
        fs[k] = B[k]
        terms.append((1.0, fs))
    return KroneckerSum(terms), KroneckerOp(M)


def evaluate_solution(level: AssembledLevel, coeffs, xi) -> np.ndarray:
    """Discrete solution (interior coefficients plus lift) at parametric points."""
    full = level.space.extend(coeffs)
    if level.lift is not None:
        full = full + level.lift
    return level.space.evaluate(full, xi, reduced=False)


def l2_error(level: AssembledLevel, coeffs, exact, quad_order=None) -> float:
    """``|| u_h - exact ||_{L2(Omega)}`` by tensor Gauss quadrature."""
    space = level.space
    quads = _quad(space, quad_order or space.degree + 3)
    full = space.extend(coeffs)
    if level.lift is not None:
        full = full + level.lift
    X = full.reshape(space.full_shape)
    for k, (kv, q) in enumerate(zip(space.kvs, quads)):
        X = apply_along_axis(collocation_matrix(kv, q.points), X, k)
    xi = _tensor_grid(quads)
    G = level.geometry
    det = np.abs(np.linalg.det(G.jacobian(xi)))
    w = np.ones(X.shape)
    for k, q in enumerate(quads):
        sh = [1] * space.dim_count
        sh[k] = -1
        w = w * q.point_weights.reshape(sh)
    err = (X - exact(G.value(xi))) ** 2 * det * w
    return float(np.sqrt(err.sum()))
