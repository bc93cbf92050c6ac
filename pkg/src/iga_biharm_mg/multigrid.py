"""Multigrid cycles over a hierarchy of nested spline spaces, and the PCG driver."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .assembly import AssembledLevel, ProblemData, assemble, univariate_matrices
from .geometry import GeometryMap, IdentityMap
from .linalg import DenseCholesky, EigenProbeError, SolveReport, pcg
from .smoothers import Smoother, SmootherConfig, build_smoother
from .tensor_space import TensorSpace
from .transfer import Transfer, build_transfer


class CoarseTooLargeError(ValueError):
    pass


@dataclass(eq=False)
class MgHierarchy:
    levels: list              # AssembledLevel, coarsest first
    transfers: list           # transfers[l] maps level l-1 to level l; transfers[0] is None
    smoothers: list           # smoothers[0] is None
    coarse: DenseCholesky
    nu: int = 1
    cycle: int = 1            # 1: V-cycle, 2: W-cycle
    timings: dict = field(default_factory=dict)

    @property
    def n_levels(self) -> int:
        return len(self.levels) - 1

    @property
    def finest(self) -> AssembledLevel:
        return self.levels[-1]

    def precondition(self, r) -> np.ndarray:
        return mg_cycle(self, self.n_levels, None, r)


def _galerkin_level(fine: AssembledLevel, T: Transfer) -> AssembledLevel:
    P = T.matrix
    mass = (P.T @ fine.mass_matrix() @ P).tocsr()
    stiff = (P.T @ fine.stiffness_matrix() @ P).tocsr()
    uni = [{"mass": u["mass"][1:-1, 1:-1].tocsr(), "biharmonic": u["biharmonic"][1:-1, 1:-1].tocsr()}
           for u in (univariate_matrices(kv) for kv in T.coarse.kvs)]
    return AssembledLevel(T.coarse, fine.geometry, fine.beta, mass, stiff, None, None, uni)


def build_hierarchy(coarse_space: TensorSpace, n_levels: int, smoother: SmootherConfig,
                    geometry: GeometryMap | None = None, data: ProblemData | None = None,
                    beta: float | None = None, galerkin: bool | None = None, nu: int | None = None,
                    cycle: int = 1, coarse_cap: int = 5000) -> MgHierarchy:
    """Levels ``0..n_levels`` from uniform refinement of ``coarse_space``.

    On the identity map every level is assembled directly, which coincides with
    the Galerkin product. Elsewhere coarse operators default to ``P^T A P``.
    """
    if n_levels < 0:
        raise ValueError("n_levels must be nonnegative")
    if cycle not in (1, 2):
        raise ValueError("cycle must be 1 (V) or 2 (W)")
    G = IdentityMap(coarse_space.dim_count) if geometry is None else geometry
    if galerkin is None:
        galerkin = not G.is_identity
    b = data.beta if data is not None else beta
    if b is None:
        raise ValueError("need problem data or beta")
    t0 = time.perf_counter()
    spaces = [coarse_space]
    for _ in range(n_levels):
        spaces.append(spaces[-1].refine())
    if spaces[0].size > coarse_cap:
        raise CoarseTooLargeError(f"coarse level has {spaces[0].size} dofs, cap is {coarse_cap}")
    transfers = [None] + [build_transfer(spaces[l - 1], spaces[l]) for l in range(1, n_levels + 1)]
    finest = assemble(spaces[-1], G, data, beta=b)
    levels = [finest]
    for l in range(n_levels, 0, -1):
        if galerkin:
            levels.append(_galerkin_level(levels[-1], transfers[l]))
        else:
            levels.append(assemble(spaces[l - 1], G, beta=b))
    levels.reverse()
    t1 = time.perf_counter()
    smoothers = [None] + [build_smoother(smoother, lv) for lv in levels[1:]]
    coarse = DenseCholesky(levels[0].matrix().toarray(), label="on the coarse level")
    t2 = time.perf_counter()
    return MgHierarchy(levels, transfers, smoothers, coarse, smoother.nu if nu is None else nu, cycle,
                       timings={"assembly": t1 - t0, "setup": t2 - t1})


def mg_cycle(h: MgHierarchy, level: int, x, b) -> np.ndarray:
    """One multigrid cycle on ``level`` for ``A x = b`` starting from ``x`` (``None``: zero)."""
    if level == 0:
        return h.coarse.solve(np.asarray(b, dtype=float))
    A = h.levels[level].operator
    sm: Smoother = h.smoothers[level]
    if x is not None:
        x = np.asarray(x, dtype=float)
    for _ in range(h.nu):
        x = sm.smooth(x, b)
    T = h.transfers[level]
    rc = T.restrict(b - A @ x)
    q = None
    for _ in range(h.cycle):
        q = mg_cycle(h, level - 1, q, rc)
    x = x + T.prolong(q)
    for _ in range(h.nu):
        x = sm.smooth(x, b)
    return x


def random_initial_guess(n: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).uniform(-1.0, 1.0, n)


def solve(h: MgHierarchy, b=None, seed: int = 0, rel_tol: float = 1e-8, max_iters: int = 1000) -> SolveReport:
    """PCG on the finest level with one multigrid cycle as preconditioner."""
    fine = h.finest
    b = fine.rhs if b is None else np.asarray(b, dtype=float)
    if b is None:
        raise ValueError("finest level has no load vector")
    x0 = random_initial_guess(fine.size, seed)
    rep = pcg(fine.operator, h.precondition, b, x0, rel_tol=rel_tol, max_iters=max_iters)
    rep.seed = seed
    rep.timings = {**h.timings, "solve": rep.timings["pcg"]}
    return rep


def _a_lanczos(A, apply_B, n: int, tol: float, seed: int, maxiter: int):
    """Extremal Ritz values of ``B A`` by Lanczos in the A-inner product.

    ``B A`` is self-adjoint in that inner product, so no factorization of
    ``A`` is needed. Full reorthogonalization keeps the basis clean. Stops
    once ``1 - rho`` is stable to ``tol`` (relative) for three steps.
    """
    v = np.random.default_rng(seed).standard_normal(n)
    Av = A @ v
    nrm = np.sqrt(v @ Av)
    V, AV = [v / nrm], [Av / nrm]
    alphas, betas = [], []
    prev = None
    stable = 0
    for k in range(maxiter):
        w = apply_B(AV[-1])
        Aw = A @ w
        alphas.append(float(AV[-1] @ w))
        Vm, AVm = np.column_stack(V), np.column_stack(AV)
        for _ in range(2):
            coef = AVm.T @ w
            w = w - Vm @ coef
            Aw = Aw - AVm @ coef
        b = float(np.sqrt(max(w @ Aw, 0.0)))
        T = np.diag(alphas) + np.diag(betas, 1) + np.diag(betas, -1)
        ritz = np.linalg.eigvalsh(T)
        cur = (float(ritz[0]), float(ritz[-1]))
        if b <= 1e-14 * max(1.0, abs(cur[1])):
            return cur
        gap = 1.0 - max(1.0 - cur[0], cur[1] - 1.0)
        if prev is not None and k >= 10:
            gap_prev = 1.0 - max(1.0 - prev[0], prev[1] - 1.0)
            stable = stable + 1 if abs(gap - gap_prev) <= tol * abs(gap) else 0
            if stable >= 3:
                return cur
        prev = cur
        betas.append(b)
        V.append(w / b)
        AV.append(Aw / b)
    raise EigenProbeError("contraction probe did not converge", best=prev)


def iteration_operator_eigs(h: MgHierarchy, tol: float = 1e-4, dense_limit: int = 1500, seed: int = 0,
                            maxiter: int = 400):
    """Extremal eigenvalues of ``B A`` (``B`` the cycle as a linear operator)."""
    fine = h.finest
    n = fine.size
    if n <= dense_limit:
        Ad = fine.matrix().toarray()
        BA = np.column_stack([h.precondition(Ad[:, j]) for j in range(n)])
        w = sla.eigh(Ad @ BA, Ad, eigvals_only=True)
        return float(w[0]), float(w[-1])
    return _a_lanczos(fine.operator, h.precondition, n, tol, seed, min(maxiter, n))


def measure_contraction(h: MgHierarchy, tol: float = 1e-4, seed: int = 0) -> float:
    """A-norm of ``I - B A`` for one cycle: ``max(1 - lambda_min, lambda_max - 1)``."""
    lo, hi = iteration_operator_eigs(h, tol=tol, seed=seed)
    return max(1.0 - lo, hi - 1.0, 0.0)
