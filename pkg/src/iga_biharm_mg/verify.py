"""Numerical checks of the discretization and solver inequalities at small scale.

Each suite returns ``Check`` records holding the measured quantity next to the
bound it must respect.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .assembly import assemble, assemble_simplified, manufactured_problem
from .bench import NONUNIFORM_COARSE
from .bspline import KnotVector, collocation_matrix, gauss_rule, refine_uniform
from .geometry import AffineMap, IdentityMap, QuarterAnnulus
from .linalg import eig_max, kron_solve, pcg
from .multigrid import build_hierarchy, measure_contraction, mg_cycle, solve
from .smoothers import SmootherConfig, _kron_dense, build_scms_for_level, scms_apply
from .tensor_space import TensorSpace, build_split, space_splits
from .transfer import build_transfer

SUITES = ("approximation", "inverse", "equivalence", "smoother", "eigen", "structural", "contraction")


@dataclass
class Check:
    suite: str
    name: str
    measured: float
    bound: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        extra = f"  {self.detail}" if self.detail else ""
        return f"[{tag}] {self.suite}/{self.name}: measured={self.measured:.6g} bound {self.bound}{extra}"


@dataclass
class VerificationReport:
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def text(self) -> str:
        n_fail = sum(not c.passed for c in self.checks)
        lines = [c.line() for c in self.checks]
        lines.append(f"{len(self.checks) - n_fail}/{len(self.checks)} checks passed")
        return "\n".join(lines)


def _kvs(degree: int, levels, breaks=NONUNIFORM_COARSE):
    kv = KnotVector.from_breaks(breaks, degree)
    out = []
    for l in range(max(levels) + 1):
        if l in levels:
            out.append((l, kv))
        kv = refine_uniform(kv)
    return out


# ------------------------------------------------------------ approximation

def _s0_projection_error(kv: KnotVector, u, u2):
    """``(||u - Q0 u||, ||u''||)`` with ``Q0`` the L2 projection onto ``S0``."""
    split = build_split(kv)
    q = gauss_rule(kv.grid, kv.degree + 6)
    C = collocation_matrix(kv, q.points)[:, 1:-1]
    w = q.point_weights
    f = C.T @ (w * u(q.points))
    c0 = sla.solve(split.mass0.toarray(), split.basis_s0.T @ f, assume_a="pos")
    uh = C @ (split.basis_s0 @ c0)
    err = np.sqrt(np.sum(w * (u(q.points) - uh) ** 2))
    return err, np.sqrt(np.sum(w * u2(q.points) ** 2))


PROBES = {
    "sin(pi x)": (lambda x: np.sin(np.pi * x), lambda x: -np.pi ** 2 * np.sin(np.pi * x)),
    "x(1-x)sin(3 pi x)": (
        lambda x: x * (1 - x) * np.sin(3 * np.pi * x),
        lambda x: (-2 * np.sin(3 * np.pi * x) + 6 * np.pi * (1 - 2 * x) * np.cos(3 * np.pi * x)
                   - 9 * np.pi ** 2 * x * (1 - x) * np.sin(3 * np.pi * x)),
    ),
}


def suite_approximation(degrees=(3, 4, 5), levels=(0, 1, 2)) -> list:
    out = []
    for (name, (u, u2)), p in itertools.product(PROBES.items(), degrees):
        for l, kv in _kvs(p, levels):
            err, norm2 = _s0_projection_error(kv, u, u2)
            bound = kv.h ** 2 / np.pi ** 2 * norm2
            out.append(Check("approximation", f"{name} p={p} l={l}", err * np.pi ** 2 / (kv.h ** 2 * norm2),
                             "<= 1", err <= bound + 1e-10, f"error={err:.3e} bound={bound:.3e}"))
    return out


# ------------------------------------------------------------------ inverse

def inverse_constant(kv: KnotVector) -> float:
    """``lambda_max(B0, M0) h_min^4``."""
    s = build_split(kv)
    return eig_max(s.biharmonic0, s.mass0, tol=1e-10) * kv.h_min ** 4


def suite_inverse(degrees=(2, 3, 4, 5, 6), levels=(0, 1, 2)) -> list:
    out = []
    for p in degrees:
        for l, kv in _kvs(p, levels):
            c = inverse_constant(kv)
            out.append(Check("inverse", f"p={p} l={l}", c, "<= 144", c <= 144.0))
    return out


# -------------------------------------------------------------- equivalence

def equivalence_bounds(space: TensorSpace):
    """Extremal generalized eigenvalues of ``(B_hat, B_bar)`` on the parameter domain."""
    level = assemble(space, IdentityMap(space.dim_count) if space.dim_count > 1 else AffineMap(np.eye(1)),
                     beta=0.0)
    Bbar, _ = assemble_simplified(space)
    w = sla.eigh(level.stiffness_matrix().toarray(), Bbar.toarray(), eigvals_only=True)
    return float(w[0]), float(w[-1])


def suite_equivalence(dims=(1, 2), degrees=(3, 4), levels=(0, 1)) -> list:
    out = []
    for d, p, l in itertools.product(dims, degrees, levels):
        s = TensorSpace.from_breaks(NONUNIFORM_COARSE, p, d)
        for _ in range(l):
            s = s.refine()
        lo, hi = equivalence_bounds(s)
        ok = lo >= 1 - 1e-9 and hi <= d + 1e-9
        out.append(Check("equivalence", f"d={d} p={p} l={l}", hi, f"in [1, {d}]", ok, f"min={lo:.12g}"))
    return out


# ----------------------------------------------------------------- smoother

@dataclass
class SmootherConstants:
    tau0: float
    c_s: float
    lam: float


def smoother_constants(space: TensorSpace, beta: float = 1.0, sigma0_inv: float = 1 / 144,
                       sigma_scale: float = 1.0) -> SmootherConstants:
    """``tau0 = 1/lambda_max(L^{-1}A)`` and the smallest ``C_S`` with
    ``L/tau0 <= C_S lambda X``, ``X = A + h^-4 M`` and ``lambda = lambda_max(X^{-1}A)``."""
    level = assemble(space, beta=beta)
    A = level.matrix().toarray()
    X = A + space.h ** -4 * level.mass_matrix().toarray()
    scms = build_scms_for_level(level, sigma0_inv, 1.0, sigma_scale)
    L = np.linalg.inv(scms.inverse_matrix())
    L = 0.5 * (L + L.T)
    l_al = sla.eigh(A, L, eigvals_only=True)[-1]
    l_lx = sla.eigh(L, X, eigvals_only=True)[-1]
    lam = sla.eigh(A, X, eigvals_only=True)[-1]
    return SmootherConstants(1.0 / l_al, l_lx * l_al / lam, lam)


def splitting_constant(space: TensorSpace) -> float:
    """Largest ``sum_alpha |Q^alpha u|^2_Bbar / |u|^2_Bbar``."""
    Bbar, Mhat = assemble_simplified(space)
    Bb, Mh = Bbar.toarray(), Mhat.toarray()
    T = np.zeros_like(Bb)
    for alpha in itertools.product((0, 1), repeat=space.dim_count):
        P = _kron_dense([s.basis(a) for s, a in zip(space_splits(space), alpha)])
        if P.shape[1] == 0:
            continue
        Q = np.linalg.solve(P.T @ Mh @ P, P.T @ Mh)
        T += Q.T @ (P.T @ Bb @ P) @ Q
    return float(sla.eigh(0.5 * (T + T.T), Bb, eigvals_only=True)[-1])


def suite_smoother(degrees=(3, 4, 5), levels=(2, 3)) -> list:
    out = []
    cs = []
    for p, l in itertools.product(degrees, levels):
        s = TensorSpace.from_breaks(NONUNIFORM_COARSE, p, 2)
        for _ in range(l):
            s = s.refine()
        c = smoother_constants(s)
        cs.append(c.c_s)
        out.append(Check("smoother", f"tau0 p={p} l={l}", c.tau0, "> 0 (A <= L/tau0)", c.tau0 > 0,
                         f"C_S={c.c_s:.4g} lambda={c.lam:.6f}"))
    spread = max(cs) / min(cs)
    out.append(Check("smoother", "C_S stability", spread, "<= 1.5 (all within +-20% of a common value)",
                     spread <= 1.5, f"C_S in [{min(cs):.4g}, {max(cs):.4g}]"))
    for p in (3, 4, 5, 6):
        s = TensorSpace.from_breaks(NONUNIFORM_COARSE, p, 2).refine().refine()
        k = splitting_constant(s)
        out.append(Check("smoother", f"splitting stability p={p}", k, "<= 10", k <= 10.0))
    return out


# -------------------------------------------------------------------- eigen

def _mass_solver(lv):
    """``M^{-1}`` for one level: Kronecker solve on the parameter domain, else
    CG preconditioned by the parametric mass (equivalent up to the Jacobian bounds)."""
    factors = [u["mass"] for u in lv.univariate]
    param = lambda v: kron_solve(factors, v)
    if lv.structured:
        return lv.mass, param
    M = lv.mass_matrix()
    if lv.size <= 1500:
        return M, None

    def solve_M(v):
        rep = pcg(M, param, v, rel_tol=1e-12, max_iters=500)
        if not rep.converged:
            raise RuntimeError("mass solve did not converge")
        return rep.solution

    return M, solve_M


def smoother_bound_ratios(h, tol: float = 1e-6) -> list:
    """``lambda_max(X^{-1} A) = mu/(mu + h^-4)`` per level, ``mu = lambda_max(A, M)``."""
    out = []
    for lv in h.levels:
        M, solve_M = _mass_solver(lv)
        mu = eig_max(lv.operator, M, solve_B=solve_M, tol=tol)
        out.append(mu / (mu + lv.space.h ** -4))
    return out


def suite_eigen(degrees=(3, 5, 7), n_levels=4) -> list:
    out = []
    for geom, p in itertools.product(("unit-square", "quarter-annulus-2d"), degrees):
        G = IdentityMap(2) if geom == "unit-square" else QuarterAnnulus()
        levels = n_levels if geom == "unit-square" else n_levels - 1
        h = build_hierarchy(TensorSpace.from_breaks(NONUNIFORM_COARSE, p, 2), levels, SmootherConfig("scms"),
                            geometry=G, beta=1.0)
        r = smoother_bound_ratios(h)
        out.append(Check("eigen", f"{geom} p={p} levels 0..{levels}", max(r), "< 1", max(r) < 1.0))
    return out


# --------------------------------------------------------------- structural

def galerkin_defect(space: TensorSpace, G) -> float:
    fine = assemble(space.refine(), G, beta=1.0).matrix()
    coarse = assemble(space, G, beta=1.0).matrix()
    P = build_transfer(space, space.refine()).matrix
    D = (P.T @ fine @ P - coarse).toarray()
    return float(np.abs(D).max() / np.abs(coarse.toarray()).max())


def prolongation_defect(space: TensorSpace, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    fine = space.refine()
    T = build_transfer(space, fine)
    c = rng.standard_normal(space.size)
    pts = rng.random((200, space.dim_count))
    a = space.evaluate(c, pts)
    b = fine.evaluate(T.prolong(c), pts)
    return float(np.abs(a - b).max() / np.abs(a).max())


def suite_structural() -> list:
    out = []
    s2 = TensorSpace.from_breaks(NONUNIFORM_COARSE, 3, 2)
    shear = AffineMap(np.array([[1.0, 0.4], [0.0, 1.2]]))
    for name, sp_, G in (("unit square p=3", s2, IdentityMap(2)), ("affine p=3", s2, shear),
                         ("unit square p=4", TensorSpace.from_breaks(NONUNIFORM_COARSE, 4, 2), IdentityMap(2))):
        e = galerkin_defect(sp_, G)
        out.append(Check("structural", f"galerkin {name}", e, "<= 1e-10", e <= 1e-10))
    for p in (2, 3, 5):
        for d in (1, 2):
            e = prolongation_defect(TensorSpace.from_breaks(NONUNIFORM_COARSE, p, d))
            out.append(Check("structural", f"prolongation p={p} d={d}", e, "<= 1e-12", e <= 1e-12))

    tiny = assemble(TensorSpace.from_breaks(NONUNIFORM_COARSE, 3, 2), beta=1.0)
    scms = build_scms_for_level(tiny, 0.02)
    dense = scms.inverse_matrix()
    applied = np.column_stack([scms_apply(scms, e) for e in np.eye(tiny.size)])
    e = float(np.abs(dense - applied).max() / np.abs(dense).max())
    out.append(Check("structural", "scms applied vs materialized", e, "<= 1e-11", e <= 1e-11))

    data = manufactured_problem(2, 1.0)
    for kind in ("scms", "sgs", "hybrid"):
        h = build_hierarchy(TensorSpace.from_breaks(NONUNIFORM_COARSE, 3, 2), 2, SmootherConfig(kind), data=data)
        A = h.finest.matrix()
        x = sla.solve(A.toarray(), h.finest.rhs, assume_a="pos")
        b = A @ x
        y = mg_cycle(h, h.n_levels, x, b)
        e = float(np.linalg.norm(y - x) / np.linalg.norm(x))
        out.append(Check("structural", f"fixed point {kind}", e, "<= 1e-12", e <= 1e-12))
        rng = np.random.default_rng(1)
        r, s = rng.standard_normal((2, h.finest.size))
        Br, Bs = h.precondition(r), h.precondition(s)
        asym = abs(Br @ s - r @ Bs) / (np.linalg.norm(Br) * np.linalg.norm(s))
        out.append(Check("structural", f"cycle symmetry {kind}", asym, "<= 1e-10", asym <= 1e-10))
        pos = min(float(v @ h.precondition(v)) for v in rng.standard_normal((20, h.finest.size)))
        out.append(Check("structural", f"cycle positivity {kind}", pos, "> 0", pos > 0))
        r1, r2 = solve(h, seed=7), solve(h, seed=7)
        same = r1.iterations == r2.iterations and r1.residual_history == r2.residual_history \
            and np.array_equal(r1.solution, r2.solution)
        out.append(Check("structural", f"determinism {kind}", float(same), "== 1", same))

    h = build_hierarchy(TensorSpace.from_breaks(NONUNIFORM_COARSE, 3, 2), 1, SmootherConfig("sgs"), beta=1.0)
    rho = measure_contraction(h)
    out.append(Check("structural", "two-grid contraction sgs p=3", rho, "< 1", rho < 1))
    h0 = build_hierarchy(TensorSpace.from_breaks(NONUNIFORM_COARSE, 3, 2), 0, SmootherConfig("scms"), beta=1.0)
    rho0 = measure_contraction(h0)
    out.append(Check("structural", "exact coarse solve contraction", rho0, "<= 1e-10", rho0 <= 1e-10))
    return out


# -------------------------------------------------------------- contraction

def contraction_trend(levels=(2, 3, 4, 5), degree: int = 3, kind: str = "scms", breaks=NONUNIFORM_COARSE):
    """Contraction factors ``rho_L`` and two growth measures of ``k_L = 1/(1 - rho_L)``.

    ``curvature`` is the quadratic term of a least-squares quadratic fit of
    ``k_L`` in ``L``, expressed as a fraction of the range of ``k_L``. It is
    near zero or negative when the growth is at most linear. ``slope`` is the
    log-log fit, which also counts a negative intercept as superlinear growth.
    """
    rhos = []
    for L in levels:
        h = build_hierarchy(TensorSpace.from_breaks(breaks, degree, 2), L, SmootherConfig(kind), beta=1.0)
        rhos.append(measure_contraction(h))
    L = np.asarray(levels, dtype=float)
    kappa = 1.0 / (1.0 - np.array(rhos))
    c2 = np.polyfit(L, kappa, 2)[0]
    curvature = float(c2 * (L[-1] - L[0]) ** 2 / np.ptp(kappa))
    slope = float(np.polyfit(np.log(L), np.log(kappa), 1)[0])
    return rhos, curvature, slope


def suite_contraction(levels=(2, 3, 4, 5)) -> list:
    rhos, curvature, slope = contraction_trend(levels)
    out = [Check("contraction", f"rho L={L}", r, "< 1", r < 1, f"1/(1-rho)={1 / (1 - r):.4g}")
           for L, r in zip(levels, rhos)]
    out.append(Check("contraction", "growth of 1/(1-rho) in L", curvature,
                     "<= 0.1 (quadratic term / range, at most linear)", curvature <= 0.1,
                     f"log-log slope={slope:.3g}"))
    return out


_SUITE_FUNCS = {
    "approximation": suite_approximation,
    "inverse": suite_inverse,
    "equivalence": suite_equivalence,
    "smoother": suite_smoother,
    "eigen": suite_eigen,
    "structural": suite_structural,
    "contraction": suite_contraction,
}


def run_verification(suite: str = "all") -> VerificationReport:
    names = SUITES if suite == "all" else (suite,)
    unknown = [n for n in names if n not in _SUITE_FUNCS]
    if unknown:
        raise ValueError(f"unknown suite {unknown[0]!r}; expected one of {SUITES + ('all',)}")
    report = VerificationReport()
    for n in names:
        report.checks.extend(_SUITE_FUNCS[n]())
    return report
