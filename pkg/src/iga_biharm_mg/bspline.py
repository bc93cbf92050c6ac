"""Univariate B-splines of maximum smoothness on open knot vectors.

Basis functions are indexed ``0..dim-1``. On the break interval
``[tau_j, tau_{j+1})`` the active functions are ``j..j+p``; the point ``x = 1``
belongs to the last interval.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class GridPoints:
    """Strictly increasing break points ``0 = tau_0 < ... < tau_{N+1} = 1``."""

    breaks: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.breaks, dtype=float)
        if b.ndim != 1 or b.size < 2:
            raise ValueError("need at least two break points")
        if b[0] != 0.0 or b[-1] != 1.0:
            raise ValueError("break points must start at 0 and end at 1")
        if np.any(np.diff(b) <= 0):
            raise ValueError("break points must be strictly increasing")
        b.setflags(write=False)
        object.__setattr__(self, "breaks", b)

    @property
    def n_intervals(self) -> int:
        return self.breaks.size - 1

    @property
    def h(self) -> float:
        return float(np.max(np.diff(self.breaks)))

    @property
    def h_min(self) -> float:
        return float(np.min(np.diff(self.breaks)))

    def refine(self) -> "GridPoints":
        mids = 0.5 * (self.breaks[:-1] + self.breaks[1:])
        return GridPoints(np.sort(np.concatenate([self.breaks, mids])))

    def __eq__(self, other):
        return isinstance(other, GridPoints) and np.array_equal(self.breaks, other.breaks)

    def __hash__(self):
        return hash(self.breaks.tobytes())


@dataclass(frozen=True, eq=False)
class KnotVector:
    """Open knot vector of degree ``p`` with simple interior knots."""

    degree: int
    grid: GridPoints

    def __post_init__(self):
        if self.degree < 1:
            raise ValueError("degree must be >= 1")
        if not isinstance(self.grid, GridPoints):
            object.__setattr__(self, "grid", GridPoints(self.grid))

    @classmethod
    def from_breaks(cls, breaks, degree: int) -> "KnotVector":
        return cls(degree, GridPoints(np.asarray(breaks, dtype=float)))

    @classmethod
    def uniform(cls, n_intervals: int, degree: int) -> "KnotVector":
        return cls.from_breaks(np.linspace(0.0, 1.0, n_intervals + 1), degree)

    @cached_property
    def knots(self) -> np.ndarray:
        p = self.degree
        b = self.grid.breaks
        return np.concatenate([np.zeros(p), b, np.ones(p)])

    @property
    def breaks(self) -> np.ndarray:
        return self.grid.breaks

    @property
    def dim(self) -> int:
        return self.grid.n_intervals + self.degree

    @property
    def n_intervals(self) -> int:
        return self.grid.n_intervals

    @property
    def h(self) -> float:
        return self.grid.h

    @property
    def h_min(self) -> float:
        return self.grid.h_min

    def greville(self) -> np.ndarray:
        p = self.degree
        t = self.knots
        return np.array([t[i + 1:i + p + 1].mean() for i in range(self.dim)])

    def interval_index(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if np.any(x < 0.0) or np.any(x > 1.0):
            raise ValueError("evaluation point outside [0, 1]")
        j = np.searchsorted(self.breaks, x, side="right") - 1
        return np.clip(j, 0, self.n_intervals - 1)

    def __eq__(self, other):
        return (isinstance(other, KnotVector) and self.degree == other.degree
                and self.grid == other.grid)

    def __hash__(self):
        return hash((self.degree, self.grid))

    def __repr__(self):
        return f"KnotVector(p={self.degree}, intervals={self.n_intervals})"


def refine_uniform(kv: KnotVector) -> KnotVector:
    """Insert the midpoint of every knot span."""
    return KnotVector(kv.degree, kv.grid.refine())


def basis_derivatives(kv: KnotVector, x, n: int = 0):
    """Values and derivatives up to order ``n`` of the active basis functions.

    Returns ``(first, ders)`` with ``first`` of shape ``(m,)`` and ``ders`` of
    shape ``(n + 1, m, p + 1)``; ``ders[k, i, j]`` is the ``k``-th derivative of
    basis function ``first[i] + j`` at ``x[i]``. Orders above ``p`` are zero.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    p = kv.degree
    first = kv.interval_index(x)
    span = first + p
    U = kv.knots
    m = x.size

    ndu = np.zeros((p + 1, p + 1, m))
    ndu[0, 0] = 1.0
    left = np.zeros((p + 1, m))
    right = np.zeros((p + 1, m))
    for j in range(1, p + 1):
        left[j] = x - U[span + 1 - j]
        right[j] = U[span + j] - x
        saved = np.zeros(m)
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved

    nd = min(n, p)
    ders = np.zeros((n + 1, p + 1, m))
    ders[0] = ndu[:, p]
    a = np.zeros((2, p + 1, m))
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[:] = 0.0
        a[0, 0] = 1.0
        for k in range(1, nd + 1):
            d = np.zeros(m)
            rk, pk = r - k, p - k
            if r >= k:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d += a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                d += a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                d += a[s2, k] * ndu[r, pk]
            ders[k, r] = d
            s1, s2 = s2, s1
    fac = p
    for k in range(1, nd + 1):
        ders[k] *= fac
        fac *= p - k
    return first, np.transpose(ders, (0, 2, 1))


def eval_basis(kv: KnotVector, x: float, deriv_order: int = 0):
    """Active basis functions (or a derivative of them) at a single point.

    Returns ``(first_active_index, values)`` with ``p + 1`` values. Derivative
    orders above the degree give zeros.
    """
    if deriv_order < 0:
        raise ValueError("derivative order must be nonnegative")
    first, ders = basis_derivatives(kv, [x], deriv_order)
    return int(first[0]), ders[deriv_order, 0].copy()


def collocation_matrix(kv: KnotVector, x, deriv: int = 0) -> sp.csr_matrix:
    """Sparse matrix ``C[i, j] = b_j^{(deriv)}(x_i)``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    p = kv.degree
    first, ders = basis_derivatives(kv, x, deriv)
    rows = np.repeat(np.arange(x.size), p + 1)
    cols = (first[:, None] + np.arange(p + 1)).ravel()
    return sp.csr_matrix((ders[deriv].ravel(), (rows, cols)), shape=(x.size, kv.dim))


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Gauss-Legendre rule replicated on each knot span."""

    nodes: np.ndarray    # (n_spans, order)
    weights: np.ndarray  # (n_spans, order)
    order: int

    @property
    def points(self) -> np.ndarray:
        return self.nodes.ravel()

    @property
    def point_weights(self) -> np.ndarray:
        return self.weights.ravel()


def gauss_rule(grid, order: int) -> QuadratureRule:
    """``order`` Gauss points per span; exact up to degree ``2*order - 1``."""
    if isinstance(grid, KnotVector):
        grid = grid.grid
    g, w = np.polynomial.legendre.leggauss(order)
    a, b = grid.breaks[:-1, None], grid.breaks[1:, None]
    nodes = 0.5 * (a + b) + 0.5 * (b - a) * g[None, :]
    weights = 0.5 * (b - a) * w[None, :]
    return QuadratureRule(nodes, weights, order)


def two_scale_matrix(coarse: KnotVector, fine: KnotVector) -> sp.csr_matrix:
    """Knot-insertion matrix ``E`` with ``fine_coeffs = E @ coarse_coeffs``."""
    if coarse.degree != fine.degree:
        raise ValueError("two-scale matrix needs equal degrees")
    cb, fb = coarse.breaks, fine.breaks
    pos = np.searchsorted(fb, cb)
    pos = np.clip(pos, 0, fb.size - 1)
    if not np.allclose(fb[pos], cb, rtol=0.0, atol=1e-13):
        raise ValueError("fine knot vector does not contain the coarse one")
    new = np.delete(fb, pos)

    p = coarse.degree
    t = coarse.knots.copy()
    E = sp.identity(coarse.dim, format="csr")
    for xk in new:
        # Boehm insertion of xk into t
        k = np.searchsorted(t, xk, side="right") - 1
        n = t.size - p - 1
        rows, cols, vals = [], [], []
        for i in range(n + 1):
            if i <= k - p:
                rows.append(i); cols.append(i); vals.append(1.0)
            elif i >= k + 1:
                rows.append(i); cols.append(i - 1); vals.append(1.0)
            else:
                alpha = (xk - t[i]) / (t[i + p] - t[i])
                rows += [i, i]; cols += [i, i - 1]; vals += [alpha, 1.0 - alpha]
        step = sp.csr_matrix((vals, (rows, cols)), shape=(n + 1, n))
        E = step @ E
        t = np.insert(t, k + 1, xk)
    E = E.tocsr()
    E.eliminate_zeros()
    E.sort_indices()
    return E


_FORMS = {"mass": (0, 0), "stiffness": (1, 1), "biharmonic": (2, 2), "mixed": (2, 0)}


def assemble_univariate(kv: KnotVector, form: str, quad: QuadratureRule | None = None) -> sp.csr_matrix:
    """Galerkin matrix of a univariate form on the full spline space.

    ``mass``: int b_i b_j, ``stiffness``: int b_i' b_j', ``biharmonic``:
    int b_i'' b_j'', ``mixed``: int b_i'' b_j (row index carries the second
    derivative).
    """
    try:
        a, b = _FORMS[form]
    except KeyError:
        raise ValueError(f"unknown form {form!r}") from None
    if quad is None:
        quad = gauss_rule(kv.grid, kv.degree + 1)
    if quad.order < kv.degree + 1:
        raise ValueError("quadrature needs at least p+1 points per span")
    x, w = quad.points, quad.point_weights
    first, ders = basis_derivatives(kv, x, max(a, b))
    Ca = _csr_from_ders(kv, first, ders[a])
    Cb = Ca if a == b else _csr_from_ders(kv, first, ders[b])
    out = (Ca.T @ sp.diags(w) @ Cb).tocsr()
    if a == b:
        out = 0.5 * (out + out.T)
    out.sort_indices()
    return out.tocsr()


def _csr_from_ders(kv, first, vals):
    m, q = vals.shape
    rows = np.repeat(np.arange(m), q)
    cols = (first[:, None] + np.arange(q)).ravel()
    return sp.csr_matrix((vals.ravel(), (rows, cols)), shape=(m, kv.dim))
