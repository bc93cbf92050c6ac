"""Iteration-count benchmarks over grids of spline degrees and refinement levels."""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import time
from dataclasses import dataclass, field
from pathlib import Path


from .assembly import l2_error, manufactured_problem
from .geometry import GEOMETRIES, get_geometry
from .multigrid import build_hierarchy, solve
from .smoothers import SmootherConfig
from .tensor_space import TensorSpace

NONUNIFORM_COARSE = (0.0, 1 / 3, 1 / 2, 4 / 5, 1.0)
UNIFORM_COARSE = (0.0, 0.25, 0.5, 0.75, 1.0)
MEM = "mem"
NOT_CONVERGED = "nc"


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """One benchmark table: rows are levels, columns are degrees."""

    geometry: str = "unit-square"
    degrees: list = field(default_factory=lambda: list(range(3, 10)))
    levels: list = field(default_factory=lambda: list(range(5, 9)))
    beta: float = 1.0
    smoother: SmootherConfig = field(default_factory=SmootherConfig)
    seed: int = 42
    out: str | None = None
    uniform_coarse: bool = False
    rel_tol: float = 1e-8
    max_iters: int = 1000
    memory_cap_gb: float = 4.0
    galerkin: bool | None = None

    def __post_init__(self):
        if isinstance(self.smoother, dict):
            try:
                self.smoother = SmootherConfig(**self.smoother)
            except (TypeError, ValueError) as e:
                raise ConfigError(f"invalid smoother settings: {e}") from e
        if self.geometry not in GEOMETRIES:
            raise ConfigError(f"unknown geometry {self.geometry!r}; expected one of {GEOMETRIES}")
        self.degrees = [int(p) for p in self.degrees]
        self.levels = [int(l) for l in self.levels]
        if not self.degrees or not self.levels:
            raise ConfigError("degrees and levels must be nonempty")
        bad = [p for p in self.degrees if not 2 <= p <= 12]
        if bad:
            raise ConfigError(f"degrees must lie in 2..12, got {bad}")
        if min(self.levels) < 0:
            raise ConfigError("levels must be nonnegative")
        if not self.beta >= 0:
            raise ConfigError("beta must be nonnegative")
        if not 0 < self.rel_tol < 1:
            raise ConfigError("rel_tol must lie in (0, 1)")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be positive")

    @property
    def dim(self) -> int:
        return get_geometry(self.geometry).dim

    @property
    def coarse_breaks(self) -> tuple:
        return UNIFORM_COARSE if self.uniform_coarse else NONUNIFORM_COARSE

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if "degree" in d:
            d["degrees"] = [d.pop("degree")]
        if "level" in d:
            d["levels"] = [d.pop("level")]
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config fields {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(str(e)) from e

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    def header(self) -> dict:
        s = self.smoother
        return {
            "geometry": self.geometry,
            "coarse": "uniform" if self.uniform_coarse else "nonuniform",
            "smoother": s.kind,
            "sigma0_inv": s.sigma0_inv,
            "sigma_scale": s.sigma_scale,
            "tau": s.damping,
            "nu": s.nu,
            "beta": self.beta,
            "seed": self.seed,
            "rel_tol": self.rel_tol,
        }


def estimate_memory(cfg: ExperimentConfig, degree: int, level: int) -> float:
    """Rough peak memory in bytes of one benchmark cell."""
    d = cfg.dim
    p = degree
    n_int = (len(cfg.coarse_breaks) - 1) * 2 ** level
    n_full = (n_int + p) ** d
    band = (2 * p + 1) ** d
    csr = 12.0 * n_full * band
    if get_geometry(cfg.geometry).is_identity:
        vectors = 8.0 * n_full * 40
        if cfg.smoother.kind == "scms":
            return vectors
        return vectors + 3.0 * csr
    quad = 8.0 * ((p + 1) * n_int) ** d * (d * d + 2 * d + 2)
    return 2.0 * 8.0 * n_full * band + 4.0 * csr + quad


@dataclass
class CellResult:
    degree: int
    level: int
    iterations: int | None
    converged: bool
    status: str
    dofs: int = 0
    l2_error: float | None = None
    timings: dict = field(default_factory=dict)

    @property
    def entry(self):
        if self.status == MEM:
            return MEM
        return self.iterations if self.converged else NOT_CONVERGED


def run_cell(cfg: ExperimentConfig, degree: int, level: int, compute_error: bool = False,
             keep_hierarchy: bool = False):
    if estimate_memory(cfg, degree, level) > cfg.memory_cap_gb * 2 ** 30:
        return CellResult(degree, level, None, False, MEM)
    G = get_geometry(cfg.geometry)
    space = TensorSpace.from_breaks(cfg.coarse_breaks, degree, G.dim)
    data = manufactured_problem(G.dim, cfg.beta)
    h = build_hierarchy(space, level, cfg.smoother, geometry=G, data=data, galerkin=cfg.galerkin)
    rep = solve(h, seed=cfg.seed, rel_tol=cfg.rel_tol, max_iters=cfg.max_iters)
    err = l2_error(h.finest, rep.solution, data.exact) if compute_error else None
    res = CellResult(degree, level, rep.iterations, rep.converged, "ok" if rep.converged else NOT_CONVERGED,
                     h.finest.size, err, rep.timings)
    return (res, h) if keep_hierarchy else res


@dataclass
class BenchmarkTable:
    config: ExperimentConfig
    cells: dict = field(default_factory=dict)   # (level, degree) -> CellResult

    def entry(self, level: int, degree: int):
        return self.cells[(level, degree)].entry

    @property
    def all_converged(self) -> bool:
        return all(c.status != NOT_CONVERGED for c in self.cells.values())

    def rows(self):
        for l in self.config.levels:
            yield l, [self.entry(l, p) for p in self.config.degrees]

    def to_csv(self) -> str:
        buf = io.StringIO()
        for k, v in self.config.header().items():
            buf.write(f"# {k}={v}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["level"] + [f"p{p}" for p in self.config.degrees])
        for l, row in self.rows():
            w.writerow([l] + row)
        return buf.getvalue()

    def to_markdown(self) -> str:
        hdr = ", ".join(f"{k}={v}" for k, v in self.config.header().items())
        lines = [f"<!-- {hdr} -->", "",
                 "| l \\ p | " + " | ".join(str(p) for p in self.config.degrees) + " |",
                 "|---" * (len(self.config.degrees) + 1) + "|"]
        for l, row in self.rows():
            lines.append(f"| {l} | " + " | ".join(str(v) for v in row) + " |")
        return "\n".join(lines) + "\n"

    def write(self, path) -> tuple:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_csv())
        md = path.with_suffix(".md")
        md.write_text(self.to_markdown())
        return path, md


def run_benchmark(cfg: ExperimentConfig, progress=None) -> BenchmarkTable:
    """Solve every (level, degree) cell; ``progress(cell)`` is called after each."""
    table = BenchmarkTable(cfg)
    for l in cfg.levels:
        for p in cfg.degrees:
            t0 = time.perf_counter()
            cell = run_cell(cfg, p, l)
            cell.timings["total"] = time.perf_counter() - t0
            table.cells[(l, p)] = cell
            if progress is not None:
                progress(cell)
    if cfg.out:
        table.write(cfg.out)
    return table


def parse_range(text: str) -> list:
    """``"3..9"`` -> ``[3, ..., 9]``; also accepts ``"3,5,7"`` and single integers."""
    text = str(text).strip()
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            lo, hi = int(a), int(b)
            if hi < lo:
                raise ConfigError(f"empty range {text!r}")
            return list(range(lo, hi + 1))
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError as e:
        raise ConfigError(f"cannot parse range {text!r}") from e
