"""Command-line entry point ``iga-biharm-mg``.

Exit codes: 0 success, 1 solver non-convergence, 2 invalid configuration,
3 verification failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys

from .bench import ConfigError, ExperimentConfig, parse_range, run_benchmark, run_cell
from .smoothers import SmootherConfig
from .verify import SUITES, run_verification

EXIT_OK, EXIT_NONCONVERGED, EXIT_CONFIG, EXIT_VERIFY = 0, 1, 2, 3


def _add_experiment_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON experiment config; flags override its fields")
    p.add_argument("--geometry")
    p.add_argument("--smoother", help="gs | sgs | scms | hybrid")
    p.add_argument("--beta", type=float)
    p.add_argument("--degrees", help="e.g. 3..9 or 3,5,7")
    p.add_argument("--levels", help="e.g. 5..8")
    p.add_argument("--sigma0-inv", type=float)
    p.add_argument("--sigma0", type=float, help="alternative to --sigma0-inv")
    p.add_argument("--sigma-scale", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--nu", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--uniform-coarse", action="store_true", default=None)
    p.add_argument("--memory-cap-gb", type=float)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--out")


def config_from_args(args) -> ExperimentConfig:
    base = ExperimentConfig.from_json(args.config).to_dict() if args.config else {}
    sm = dict(base.pop("smoother", {}) or {})
    for flag, key in (("smoother", "kind"), ("tau", "tau"), ("sigma0_inv", "sigma0_inv"),
                      ("sigma_scale", "sigma_scale"), ("nu", "nu")):
        v = getattr(args, flag, None)
        if v is not None:
            sm[key] = v
    if getattr(args, "sigma0", None) is not None:
        if args.sigma0 <= 0:
            raise ConfigError("sigma0 must be positive")
        sm["sigma0_inv"] = 1.0 / args.sigma0
    for flag in ("geometry", "beta", "seed", "uniform_coarse", "memory_cap_gb", "max_iters", "out"):
        v = getattr(args, flag, None)
        if v is not None:
            base[flag] = v
    for flag in ("degrees", "levels"):
        v = getattr(args, flag, None)
        if v is not None:
            base[flag] = parse_range(v)
    try:
        base["smoother"] = SmootherConfig(**sm)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid smoother settings: {e}") from e
    return ExperimentConfig.from_dict(base)


def cmd_bench(args) -> int:
    cfg = config_from_args(args)

    def progress(cell):
        t = cell.timings.get("total")
        extra = f" ({t:.1f}s)" if t is not None else ""
        print(f"l={cell.level} p={cell.degree}: {cell.entry}{extra}", file=sys.stderr, flush=True)

    table = run_benchmark(cfg, progress=progress)
    print(table.to_markdown(), end="")
    return EXIT_OK if table.all_converged else EXIT_NONCONVERGED


def cmd_verify(args) -> int:
    report = run_verification(args.suite)
    print(report.text())
    return EXIT_OK if report.passed else EXIT_VERIFY


def cmd_solve(args) -> int:
    cfg = config_from_args(args)
    results = []
    status = EXIT_OK
    for l in cfg.levels:
        for p in cfg.degrees:
            cell = run_cell(cfg, p, l, compute_error=True)
            results.append(dataclasses.asdict(cell))
            if cell.status != "ok":
                status = EXIT_NONCONVERGED
            err = f"{cell.l2_error:.3e}" if cell.l2_error is not None else "-"
            print(f"p={p} l={l} dofs={cell.dofs} iterations={cell.iterations} "
                  f"status={cell.status} l2_error={err}")
    if cfg.out:
        with open(cfg.out, "w") as fh:
            json.dump({"config": cfg.to_dict(), "results": results}, fh, indent=2)
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iga-biharm-mg",
                                     description="Multigrid-preconditioned CG for the B-spline biharmonic problem.")
    sub = parser.add_subparsers(dest="command", required=True)
    b = sub.add_parser("bench", help="iteration-count table over degrees and levels")
    _add_experiment_flags(b)
    b.set_defaults(func=cmd_bench)
    v = sub.add_parser("verify", help="numerical checks of the discretization and solver bounds")
    v.add_argument("suite", choices=SUITES + ("all",))
    v.set_defaults(func=cmd_verify)
    s = sub.add_parser("solve", help="solve the manufactured problem and report errors")
    _add_experiment_flags(s)
    s.set_defaults(func=cmd_solve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"invalid configuration: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
