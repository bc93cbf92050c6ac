"""Regenerate the iteration-count tables into ``results/``.

Usage: python scripts/run_tables.py [name ...]   (no names: all presets)
"""
import sys
import time
from pathlib import Path

from iga_biharm_mg.bench import ExperimentConfig, run_benchmark
from iga_biharm_mg.smoothers import SmootherConfig

OUT = Path(__file__).resolve().parent.parent / "results"

GS = SmootherConfig("sgs")
SCMS = SmootherConfig("scms", sigma0_inv=0.02, tau=1.0)
SCMS_UNIFORM = SmootherConfig("scms", sigma0_inv=0.015, tau=1.0)
HYBRID = SmootherConfig("hybrid", sigma0_inv=0.015, tau=0.1)

PRESETS = {
    "square-gs": dict(smoother=GS, degrees=list(range(3, 10)), levels=[5, 6]),
    "square-scms": dict(smoother=SCMS, degrees=list(range(3, 10)), levels=[5, 6, 7]),
    "square-scms-uniform": dict(smoother=SCMS_UNIFORM, degrees=list(range(3, 10)), levels=[5, 6, 7],
                                uniform_coarse=True),
    "annulus-hybrid": dict(geometry="quarter-annulus-2d", smoother=HYBRID, degrees=list(range(3, 8)),
                           levels=[5, 6]),
}
BETAS = {"": 1.0, "-beta1e7": 1e7, "-beta0": 0.0}


def main(names):
    names = names or list(PRESETS)
    unknown = [n for n in names if n not in PRESETS]
    if unknown:
        sys.exit(f"unknown preset {unknown[0]!r}; choose from {', '.join(PRESETS)}")
    for name in names:
        for suffix, beta in BETAS.items():
            if name == "annulus-hybrid" and suffix:
                continue
            cfg = ExperimentConfig(beta=beta, out=str(OUT / f"{name}{suffix}.csv"), **PRESETS[name])
            t0 = time.perf_counter()
            table = run_benchmark(cfg, progress=lambda c: print(f"  l={c.level} p={c.degree}: {c.entry}",
                                                                 flush=True))
            print(f"{name}{suffix} ({time.perf_counter() - t0:.0f}s)")
            print(table.to_markdown(), flush=True)


if __name__ == "__main__":
    main(sys.argv[1:])
