"""Kernels used by the solver: Kronecker-structured operators, small
factorizations, generalized eigenvalue probes and PCG.

Vectors on a tensor-product space are stored in C order: a coefficient vector
of length ``n_1 * ... * n_d`` is the flattening of an array of shape
``(n_1, ..., n_d)``, and ``KroneckerOp([F_1, ..., F_d])`` is
``np.kron(F_1, np.kron(..., F_d))``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from functools import reduce

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class FactorizationError(np.linalg.LinAlgError):
    pass


class EigenProbeError(RuntimeError):
    def __init__(self, msg, best=None):
        super().__init__(msg)
        self.best = best


def apply_along_axis(F, X: np.ndarray, axis: int) -> np.ndarray:
    """Multiply the mode-``axis`` fibres of ``X`` by ``F``."""
    Y = np.moveaxis(X, axis, 0)
    shp = Y.shape
    Z = F @ Y.reshape(shp[0], -1)
    Z = np.asarray(Z).reshape((Z.shape[0],) + shp[1:])
    return np.moveaxis(Z, 0, axis)


def _dims(factors):
    return tuple(f.shape for f in factors)


class KroneckerOp:
    """Product ``F_1 (x) ... (x) F_d``, never materialized unless asked."""

    def __init__(self, factors):
        self.factors = list(factors)

    @property
    def shape(self):
        dims = _dims(self.factors)
        return (int(np.prod([d[0] for d in dims])), int(np.prod([d[1] for d in dims])))

    @property
    def T(self) -> "KroneckerOp":
        return KroneckerOp([f.T for f in self.factors])

    def __matmul__(self, x):
        return kron_apply(self, x)

    def __mul__(self, c):
        return KroneckerSum([(float(c), self.factors)])

    __rmul__ = __mul__

    def __add__(self, other):
        return KroneckerSum([(1.0, self.factors)]) + other

    def tocsr(self):
        return reduce(lambda a, b: sp.kron(a, b, format="csr"),
                      [sp.csr_matrix(f) for f in self.factors]).tocsr()

    def toarray(self):
        return self.tocsr().toarray()


class KroneckerSum:
    """Linear combination ``sum_t c_t (F_{t,1} (x) ... (x) F_{t,d})``."""

    def __init__(self, terms):
        self.terms = [(float(c), list(fs)) for c, fs in terms]
        if not self.terms:
            raise ValueError("empty Kronecker sum")

    @property
    def shape(self):
        return KroneckerOp(self.terms[0][1]).shape

    def _merged(self):
        """Terms sharing all but the first factor, combined into one term."""
        if getattr(self, "_merged_cache", None) is None:
            groups = {}
            for c, fs in self.terms:
                if c == 0.0:
                    continue
                key = tuple(id(f) for f in fs[1:])
                if key in groups:
                    first, rest = groups[key]
                    groups[key] = (first + c * fs[0], rest)
                else:
                    groups[key] = (c * fs[0], fs[1:])
            self._merged_cache = [[first] + rest for first, rest in groups.values()]
        return self._merged_cache

    def __matmul__(self, x):
        x = np.asarray(x)
        y = None
        for fs in self._merged():
            t = kron_apply(KroneckerOp(fs), x)
            y = t if y is None else y + t
        return np.zeros(self.shape[0]) if y is None else y

    def __mul__(self, c):
        return KroneckerSum([(c * a, fs) for a, fs in self.terms])

    __rmul__ = __mul__

    def __add__(self, other):
        if isinstance(other, KroneckerOp):
            other = KroneckerSum([(1.0, other.factors)])
        if not isinstance(other, KroneckerSum):
            return NotImplemented
        return KroneckerSum(self.terms + other.terms)

    def map_factors(self, fn):
        """New sum with ``fn(axis, factor)`` applied to every factor."""
        memo = {}

        def mapped(k, f):
            key = (k, id(f))
            if key not in memo:
                memo[key] = fn(k, f)
            return memo[key]

        return KroneckerSum([(c, [mapped(k, f) for k, f in enumerate(fs)]) for c, fs in self.terms])

    def tocsr(self):
        out = None
        for c, fs in self.terms:
            m = c * KroneckerOp(fs).tocsr()
            out = m if out is None else out + m
        out = out.tocsr()
        out.sum_duplicates()
        out.sort_indices()
        return out

    def toarray(self):
        return self.tocsr().toarray()


def kron_apply(op: KroneckerOp, x) -> np.ndarray:
    """``y = (F_1 (x) ... (x) F_d) x`` by successive mode products."""
    x = np.asarray(x)
    dims = _dims(op.factors)
    cols = [d[1] for d in dims]
    if x.shape[0] != int(np.prod(cols)):
        raise ValueError(f"vector of length {x.shape[0]} does not match Kronecker shape {cols}")
    extra = x.shape[1:]
    X = x.reshape(tuple(cols) + extra)
    for k, F in enumerate(op.factors):
        X = apply_along_axis(F, X, k)
    return X.reshape((-1,) + extra)


class DenseCholesky:
    def __init__(self, A, label=""):
        A = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
        self.n = A.shape[0]
        try:
            self.cf = sla.cho_factor(A, lower=True)
        except np.linalg.LinAlgError as e:
            raise FactorizationError(f"Cholesky failed {label}".strip()) from e

    def solve(self, b):
        return sla.cho_solve(self.cf, b)


class BandedCholesky:
    """Cholesky factorization of a banded SPD matrix (LAPACK ``pbtrf``)."""

    def __init__(self, A, label=""):
        A = sp.csr_matrix(A)
        n = A.shape[0]
        self.n = n
        coo = A.tocoo()
        u = int(np.max(np.abs(coo.row - coo.col))) if coo.nnz else 0
        ab = np.zeros((u + 1, n))
        dia = A.todia()
        for off, row in zip(dia.offsets, dia.data):
            if 0 <= off <= u:
                ab[u - off, off:] = row[off:]
        try:
            self.cb = sla.cholesky_banded(ab, lower=False)
        except np.linalg.LinAlgError as e:
            raise FactorizationError(f"banded Cholesky failed {label}".strip()) from e

    def solve(self, b):
        return sla.cho_solve_banded((self.cb, False), b)


def factorize(A, label=""):
    """Pick a banded or dense Cholesky for a small SPD factor."""
    if sp.issparse(A) and A.shape[0] > 64:
        return BandedCholesky(A, label)
    return DenseCholesky(A, label)


def kron_solve(factors, b, shape=None) -> np.ndarray:
    """Solve ``(F_1 (x) ... (x) F_d) y = b`` given factorizations of each ``F_k``.

    ``factors`` holds objects with a ``solve`` method (or raw SPD matrices,
    which are factorized here). ``None`` stands for an identity factor, in
    which case ``shape`` must give the tensor shape of ``b``.
    """
    facs = []
    for k, f in enumerate(factors):
        if f is None or hasattr(f, "solve"):
            facs.append(f)
        else:
            facs.append(factorize(f, label=f"in direction {k}"))
    if shape is None:
        if any(f is None for f in facs):
            raise ValueError("identity factors need an explicit shape")
        shape = [f.n for f in facs]
    b = np.asarray(b, dtype=float)
    if b.size != int(np.prod(shape)):
        raise ValueError("right-hand side does not match the factor dimensions")
    X = b.reshape(shape)
    for k, f in enumerate(facs):
        if f is None:
            continue
        Y = np.moveaxis(X, k, 0)
        shp = Y.shape
        Y = f.solve(Y.reshape(shp[0], -1)).reshape(shp)
        X = np.moveaxis(Y, 0, k)
    return X.reshape(-1)


def as_solver(B):
    """Return a callable applying ``B^{-1}``."""
    if callable(B) and not hasattr(B, "shape"):
        return B
    if sp.issparse(B):
        lu = spla.splu(sp.csc_matrix(B))
        return lu.solve
    if isinstance(B, (KroneckerOp, KroneckerSum)):
        return as_solver(B.tocsr())
    c = DenseCholesky(B)
    return c.solve


def _dense(A):
    if isinstance(A, (KroneckerOp, KroneckerSum)) or sp.issparse(A):
        return A.toarray()
    return np.asarray(A, dtype=float)


def eig_extremal(A, B, tol: float = 1e-6, dense_limit: int = 1500, solve_A=None, solve_B=None,
                 seed: int = 0, maxiter: int = 5000):
    """Extremal eigenvalues ``(lambda_min, lambda_max)`` of ``A x = lambda B x``.

    Small pencils are solved densely. Larger ones use Lanczos on ``B^{-1} A``
    (for the maximum) and ``A^{-1} B`` (for the minimum) started from a fixed
    seeded vector.
    """
    n = A.shape[0]
    if n <= dense_limit:
        w = sla.eigh(_dense(A), _dense(B), eigvals_only=True)
        return float(w[0]), float(w[-1])
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(n)
    Aop = spla.aslinearoperator(A) if sp.issparse(A) else spla.LinearOperator((n, n), matvec=lambda v: A @ v)
    Bop = spla.aslinearoperator(B) if sp.issparse(B) else spla.LinearOperator((n, n), matvec=lambda v: B @ v)
    sB = solve_B or as_solver(B)
    sA = solve_A or as_solver(A)
    Binv = spla.LinearOperator((n, n), matvec=sB)
    Ainv = spla.LinearOperator((n, n), matvec=sA)
    try:
        lmax = spla.eigsh(Aop, k=1, M=Bop, Minv=Binv, which="LA", v0=v0, tol=tol,
                          maxiter=maxiter, return_eigenvectors=False)[0]
        mu = spla.eigsh(Bop, k=1, M=Aop, Minv=Ainv, which="LA", v0=v0, tol=tol,
                        maxiter=maxiter, return_eigenvectors=False)[0]
    except spla.ArpackNoConvergence as e:
        best = e.eigenvalues[0] if len(e.eigenvalues) else None
        raise EigenProbeError("eigenvalue probe did not converge", best=best) from e
    return float(1.0 / mu), float(lmax)


def eig_max(A, B, solve_B=None, tol: float = 1e-6, dense_limit: int = 1500, seed: int = 0,
            maxiter: int = 5000) -> float:
    """Largest eigenvalue of ``A x = lambda B x`` (no factorization of ``A``)."""
    n = A.shape[0]
    if n <= dense_limit:
        return float(sla.eigh(_dense(A), _dense(B), eigvals_only=True)[-1])
    v0 = np.random.default_rng(seed).standard_normal(n)
    Aop = spla.LinearOperator((n, n), matvec=lambda v: A @ v)
    Bop = spla.LinearOperator((n, n), matvec=lambda v: B @ v)
    Binv = spla.LinearOperator((n, n), matvec=solve_B or as_solver(B))
    try:
        return float(spla.eigsh(Aop, k=1, M=Bop, Minv=Binv, which="LA", v0=v0, tol=tol,
                                maxiter=maxiter, return_eigenvectors=False)[0])
    except spla.ArpackNoConvergence as e:
        best = e.eigenvalues[0] if len(e.eigenvalues) else None
        raise EigenProbeError("eigenvalue probe did not converge", best=best) from e


@dataclass
class SolveReport:
    iterations: int
    residual_history: list
    converged: bool
    solution: np.ndarray | None = None
    seed: int | None = None
    timings: dict = field(default_factory=dict)

    @property
    def reduction(self) -> float:
        return self.residual_history[-1] / self.residual_history[0]


def pcg(A, precond, b, x0=None, rel_tol: float = 1e-8, max_iters: int = 1000) -> SolveReport:
    """Preconditioned CG stopping at ``||r_k|| <= rel_tol * ||r_0||`` (Euclidean)."""
    t0 = time.perf_counter()
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    M = precond if precond is not None else (lambda r: r)
    r = b - A @ x
    r0 = float(np.linalg.norm(r))
    hist = [r0]
    if r0 == 0.0:
        return SolveReport(0, hist, True, x, timings={"pcg": time.perf_counter() - t0})
    z = M(r)
    d = z.copy()
    rz = float(r @ z)
    converged = False
    k = 0
    while k < max_iters:
        Ad = A @ d
        alpha = rz / float(d @ Ad)
        x += alpha * d
        r -= alpha * Ad
        k += 1
        rn = float(np.linalg.norm(r))
        hist.append(rn)
        if rn <= rel_tol * r0:
            converged = True
            break
        z = M(r)
        rz_new = float(r @ z)
        d = z + (rz_new / rz) * d
        rz = rz_new
    return SolveReport(k, hist, converged, x, timings={"pcg": time.perf_counter() - t0})
