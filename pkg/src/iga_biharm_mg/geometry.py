"""Geometry maps ``G: (0,1)^d -> Omega`` with first and second derivatives.

Conventions: ``jacobian(xi)[..., k, a] = dG_k / dxi_a`` and
``hessian(xi)[..., k, a, b] = d^2 G_k / dxi_a dxi_b``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .bspline import basis_derivatives


class SingularJacobianError(ValueError):
    pass


class GeometryMap:
    dim: int = 2
    name: str = "map"
    is_identity: bool = False

    def value(self, xi):
        raise NotImplementedError

    def jacobian(self, xi):
        raise NotImplementedError

    def hessian(self, xi):
        raise NotImplementedError

    def inverse(self, x, tol: float = 1e-12, maxiter: int = 50):
        """Damped Newton inversion of the map, starting at the domain centre."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        xi = np.full_like(x, 0.5)
        for _ in range(maxiter):
            res = self.value(xi) - x
            err = np.linalg.norm(res, axis=-1)
            if np.all(err <= tol * (1.0 + np.linalg.norm(x, axis=-1))):
                return xi
            step = np.linalg.solve(self.jacobian(xi), res[..., None])[..., 0]
            t = np.ones(xi.shape[0])
            for _ in range(30):
                trial = xi - t[:, None] * step
                bad = np.linalg.norm(self.value(trial) - x, axis=-1) > err
                if not np.any(bad):
                    break
                t = np.where(bad, 0.5 * t, t)
            xi = xi - t[:, None] * step
        raise RuntimeError("Newton inversion of the geometry map did not converge")

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r})"


class AffineMap(GeometryMap):
    """``x = A xi + b``; the identity map is the special case ``A = I, b = 0``."""

    def __init__(self, A, b=None, name="affine"):
        self.A = np.asarray(A, dtype=float)
        self.dim = self.A.shape[0]
        self.b = np.zeros(self.dim) if b is None else np.asarray(b, dtype=float)
        self.name = name
        self.is_identity = bool(np.array_equal(self.A, np.eye(self.dim)) and not np.any(self.b))

    def value(self, xi):
        return np.asarray(xi) @ self.A.T + self.b

    def jacobian(self, xi):
        xi = np.asarray(xi)
        return np.broadcast_to(self.A, xi.shape[:-1] + (self.dim, self.dim)).copy()

    def hessian(self, xi):
        xi = np.asarray(xi)
        return np.zeros(xi.shape[:-1] + (self.dim,) * 3)


def IdentityMap(dim: int) -> AffineMap:
    return AffineMap(np.eye(dim), name="unit-square" if dim == 2 else "unit-cube")


class AnnulusMap(GeometryMap):
    """Polar map ``r = r_in + (r_out - r_in) xi_1`` and ``psi = rates . xi``.

    In 2D this is the quarter annulus (``rates = (0, pi/2)``). In 3D the third
    coordinate passes through and the cross-section rotates with it
    (``rates = (0, pi/2, twist)``).
    """

    def __init__(self, r_in=1.0, r_out=2.0, rates=(0.0, np.pi / 2), name="annulus"):
        self.r_in, self.r_out = float(r_in), float(r_out)
        self.g = np.asarray(rates, dtype=float)
        self.dim = self.g.size
        self.name = name

    def _polar(self, xi):
        xi = np.asarray(xi, dtype=float)
        r = self.r_in + (self.r_out - self.r_in) * xi[..., 0]
        psi = xi @ self.g
        return xi, r, np.cos(psi), np.sin(psi)

    def value(self, xi):
        xi, r, c, s = self._polar(xi)
        out = [r * c, r * s]
        if self.dim == 3:
            out.append(xi[..., 2])
        return np.stack(out, axis=-1)

    def jacobian(self, xi):
        xi, r, c, s = self._polar(xi)
        d = self.dim
        dr = self.r_out - self.r_in
        J = np.zeros(xi.shape[:-1] + (d, d))
        e1 = np.zeros(d)
        e1[0] = dr
        J[..., 0, :] = c[..., None] * e1 - (r * s)[..., None] * self.g
        J[..., 1, :] = s[..., None] * e1 + (r * c)[..., None] * self.g
        if d == 3:
            J[..., 2, 2] = 1.0
        return J

    def hessian(self, xi):
        xi, r, c, s = self._polar(xi)
        d = self.dim
        dr = self.r_out - self.r_in
        e1 = np.zeros(d)
        e1[0] = dr
        sym = np.outer(e1, self.g) + np.outer(self.g, e1)
        gg = np.outer(self.g, self.g)
        H = np.zeros(xi.shape[:-1] + (d, d, d))
        H[..., 0, :, :] = -s[..., None, None] * sym - (r * c)[..., None, None] * gg
        H[..., 1, :, :] = c[..., None, None] * sym - (r * s)[..., None, None] * gg
        return H


def QuarterAnnulus(r_in=1.0, r_out=2.0) -> AnnulusMap:
    return AnnulusMap(r_in, r_out, (0.0, np.pi / 2), name="quarter-annulus-2d")


def TwistedAnnulus(r_in=1.0, r_out=2.0, twist_degrees=30.0) -> AnnulusMap:
    return AnnulusMap(r_in, r_out, (0.0, np.pi / 2, np.deg2rad(twist_degrees)),
                      name="twisted-annulus-3d")


class SplineMap(GeometryMap):
    """Tensor-product B-spline map with control points of shape ``(*dims, d)``."""

    def __init__(self, kvs, control_points, name="spline"):
        self.kvs = tuple(kvs)
        self.cp = np.asarray(control_points, dtype=float)
        self.dim = len(self.kvs)
        self.name = name
        if self.cp.shape != tuple(kv.dim for kv in self.kvs) + (self.dim,):
            raise ValueError("control point array does not match the knot vectors")

    @classmethod
    def interpolate(cls, G: GeometryMap, kvs, name=None):
        """Interpolate ``G`` at the tensor Greville points."""
        import scipy.sparse.linalg as spla
        from .bspline import collocation_matrix
        grev = [kv.greville() for kv in kvs]
        X = G.value(np.stack(np.meshgrid(*grev, indexing="ij"), axis=-1))
        for k, (kv, g) in enumerate(zip(kvs, grev)):
            C = collocation_matrix(kv, g).tocsc()
            Y = np.moveaxis(X, k, 0)
            shp = Y.shape
            Y = spla.spsolve(C, Y.reshape(shp[0], -1)).reshape(shp)
            X = np.moveaxis(Y, 0, k)
        return cls(kvs, X, name=name or f"spline({G.name})")

    def _derivs(self, xi, orders):
        xi = np.asarray(xi, dtype=float)
        flat = xi.reshape(-1, self.dim)
        p = [kv.degree for kv in self.kvs]
        data = [basis_derivatives(kv, flat[:, k], 2) for k, kv in enumerate(self.kvs)]
        out = {o: np.zeros((flat.shape[0], self.dim)) for o in orders}
        for loc in itertools.product(*[range(q + 1) for q in p]):
            idx = tuple(data[k][0] + loc[k] for k in range(self.dim))
            c = self.cp[idx]
            for o in orders:
                w = np.prod([data[k][1][o[k]][:, loc[k]] for k in range(self.dim)], axis=0)
                out[o] += w[:, None] * c
        return {o: v.reshape(xi.shape[:-1] + (self.dim,)) for o, v in out.items()}

    def value(self, xi):
        o = (0,) * self.dim
        return self._derivs(xi, [o])[o]

    def jacobian(self, xi):
        d = self.dim
        orders = [tuple(int(k == a) for k in range(d)) for a in range(d)]
        res = self._derivs(xi, orders)
        return np.stack([res[o] for o in orders], axis=-1)

    def hessian(self, xi):
        d = self.dim
        orders = {}
        for a in range(d):
            for b in range(d):
                o = [0] * d
                o[a] += 1
                o[b] += 1
                orders[(a, b)] = tuple(o)
        res = self._derivs(xi, sorted(set(orders.values())))
        xi = np.asarray(xi)
        H = np.zeros(xi.shape[:-1] + (d, d, d))
        for (a, b), o in orders.items():
            H[..., :, a, b] = res[o]
        return H


GEOMETRIES = ("unit-square", "unit-cube", "quarter-annulus-2d", "twisted-annulus-3d")


def get_geometry(name: str) -> GeometryMap:
    if name == "unit-square":
        return IdentityMap(2)
    if name == "unit-cube":
        return IdentityMap(3)
    if name == "quarter-annulus-2d":
        return QuarterAnnulus()
    if name == "twisted-annulus-3d":
        return TwistedAnnulus()
    raise ValueError(f"unknown geometry {name!r}; choose from {', '.join(GEOMETRIES)}")


def _checked_inverse(J, xi):
    det = np.linalg.det(J)
    bad = np.abs(det) <= 1e-14 * np.maximum(1.0, np.abs(J).max(axis=(-2, -1)) ** J.shape[-1])
    if np.any(bad):
        loc = np.asarray(xi).reshape(-1, J.shape[-1])[np.flatnonzero(bad.ravel())[0]]
        raise SingularJacobianError(f"singular Jacobian at xi = {loc}")
    return np.linalg.inv(J), det


def physical_basis_derivs(G: GeometryMap, xi, values, grads, hessians):
    """Push parametric derivatives forward to the physical domain.

    ``grads[..., a]`` and ``hessians[..., a, b]`` are parametric derivatives at
    ``xi``; extra leading axes after the point axes (e.g. several basis
    functions) are not supported, call once per function. Returns
    ``(values, gradients, hessians, laplacians)`` in physical coordinates.
    """
    J = G.jacobian(xi)
    Jinv, _ = _checked_inverse(J, xi)
    HG = G.hessian(xi)
    JinvT = np.swapaxes(Jinv, -1, -2)
    gx = np.einsum("...ka,...a->...k", JinvT, grads)
    corr = hessians - np.einsum("...k,...kab->...ab", gx, HG)
    Hx = JinvT @ corr @ Jinv
    return values, gx, Hx, np.trace(Hx, axis1=-2, axis2=-1)


def laplacian_coefficients(G: GeometryMap, xi):
    """Coefficients with ``lap phi = sum_ab S_ab d_a d_b phi^ + sum_a t_a d_a phi^``.

    Returns ``(S, t, detJ)`` with ``S = J^{-1} J^{-T}``.
    """
    J = G.jacobian(xi)
    Jinv, det = _checked_inverse(J, xi)
    S = Jinv @ np.swapaxes(Jinv, -1, -2)
    lapG = np.einsum("...kab,...ab->...k", G.hessian(xi), S)
    t = -np.einsum("...ak,...k->...a", Jinv, lapG)
    return S, t, det


@dataclass
class GeometryConstants:
    c1: float
    c2: float
    hessian_max: float
    third_max: float


def measure_geometry_constants(G: GeometryMap, samples: int = 12) -> GeometryConstants:
    """Max over a sample grid of ``|J|_2``, ``|J^{-1}|_2`` and raw higher-derivative sizes.

    Third derivatives are estimated by central differences of the Hessian.
    """
    d = G.dim
    t = (np.arange(samples) + 0.5) / samples
    xi = np.stack(np.meshgrid(*([t] * d), indexing="ij"), axis=-1).reshape(-1, d)
    J = G.jacobian(xi)
    s = np.linalg.svd(J, compute_uv=False)
    c1 = float(s[:, 0].max())
    c2 = float((1.0 / s[:, -1]).max())
    H = G.hessian(xi)
    hmax = float(np.sqrt((H ** 2).sum(axis=(1, 2, 3))).max())
    eps = 1e-4
    third = np.zeros(xi.shape[0])
    for a in range(d):
        e = np.zeros(d)
        e[a] = eps
        T = (G.hessian(np.clip(xi + e, 0, 1)) - G.hessian(np.clip(xi - e, 0, 1))) / (2 * eps)
        third += (T ** 2).sum(axis=(1, 2, 3))
    return GeometryConstants(c1, c2, hmax, float(np.sqrt(third).max()))
