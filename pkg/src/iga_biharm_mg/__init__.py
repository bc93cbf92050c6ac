"""Multigrid solvers for the B-spline (isogeometric) discretization of ``beta u + lap^2 u = f``."""
from .assembly import AssembledLevel, ProblemData, assemble, assemble_simplified, l2_error, manufactured_problem
from .bench import ExperimentConfig, run_benchmark, run_cell
from .bspline import KnotVector, basis_derivatives, two_scale_matrix
from .geometry import GeometryMap, get_geometry
from .linalg import SolveReport, pcg
from .multigrid import MgHierarchy, build_hierarchy, measure_contraction, mg_cycle, solve
from .smoothers import SmootherConfig, build_scms, hybrid_apply, scms_apply, sgs_apply
from .tensor_space import TensorSpace, build_split
from .transfer import build_transfer
from .verify import run_verification

__all__ = [
    "AssembledLevel", "ProblemData", "assemble", "assemble_simplified", "l2_error", "manufactured_problem",
    "ExperimentConfig", "run_benchmark", "run_cell", "KnotVector", "basis_derivatives", "two_scale_matrix",
    "GeometryMap", "get_geometry", "SolveReport", "pcg", "MgHierarchy", "build_hierarchy",
    "measure_contraction", "mg_cycle", "solve", "SmootherConfig", "build_scms", "hybrid_apply",
    "scms_apply", "sgs_apply", "TensorSpace", "build_split", "build_transfer", "run_verification",
]
