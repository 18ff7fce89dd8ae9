"""Command-line entry point: `tic-solve <command> [flags]`.

Commands
--------
cascade      solve the multi-player partition cascade and report the value
equilibrium  solve the limit equilibrium (march / picard / kernel)
mc           Monte-Carlo check of the equilibrium value along closed-loop paths
converge     cascade-vs-limit error ladder over partition sizes
consistency  cross-check suite for problems with start-time-independent data
export       solve and write value/strategy tables plus a hash manifest

Exit codes: 0 success, 2 usage error, 3 numerical failure, 4 unsupported
problem.
"""

from __future__ import annotations

import argparse
import json
import sys

from .analysis import (
    ExperimentConfig,
    export_results,
    run_consistency_suite,
    run_convergence_study,
)
from .cascade import cascade_solve
from .equilibrium import (
    diagonal_march_solve,
    kernel_picard_solve,
    picard_window_solve,
)
from .errors import TicSolveError, UsageError
from .mc import feynman_kac_check

__all__ = ["build_parser", "main"]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    pg = common.add_argument_group("problem and grid")
    pg.add_argument("--preset", help="built-in problem name")
    pg.add_argument("--problem-file", help="path to a problem definition file")
    pg.add_argument("--nx", type=int, default=201, help="spatial nodes (default 201)")
    pg.add_argument("--nt", type=int, default=None,
                    help="time levels (default: explicit stability bound)")
    pg.add_argument("--controls", type=int, default=65,
                    help="control lattice points (default 65)")
    pg.add_argument("--scheme", default="explicit-upwind",
                    choices=["explicit-upwind", "semi-implicit-diffusion"])
    pg.add_argument("--cfl", type=float, default=0.9, help="CFL safety factor")
    pg.add_argument("--seed", type=int, default=0)
    pg.add_argument("--out", default=None, help="directory for exported artifacts")
    pg.add_argument("--strict", action="store_true",
                    help="treat boundary exits in Monte-Carlo runs as errors")

    p = argparse.ArgumentParser(
        prog="tic-solve",
        description="Equilibrium strategies for time-inconsistent stochastic control.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    pc = sub.add_parser("cascade", parents=[common],
                        help="solve the multi-player partition cascade")
    pc.add_argument("--players", type=int, default=8, metavar="N",
                    help="number of partition intervals (default 8)")
    pc.add_argument("--partition-kind", default="uniform",
                    choices=["uniform", "geometric"])
    pc.add_argument("--ratio", type=float, default=1.0,
                    help="geometric partition ratio (default 1)")

    pe = sub.add_parser("equilibrium", parents=[common],
                        help="solve the limit equilibrium system")
    pe.add_argument("--method", default="march",
                    choices=["march", "picard", "kernel"])
    pe.add_argument("--tau-stride", type=int, default=1,
                    help="march: host every k-th start-time slice")
    pe.add_argument("--delta", type=float, default=None,
                    help="picard: window length (default: auto)")
    pe.add_argument("--nt-coarse", type=int, default=None,
                    help="kernel: coarse time levels (default: auto)")

    pm = sub.add_parser("mc", parents=[common],
                        help="Monte-Carlo check of the equilibrium value")
    pm.add_argument("--paths", type=int, default=10_000)
    pm.add_argument("--x0", type=float, default=0.0)
    pm.add_argument("--tau", type=float, default=0.0,
                    help="start time of the checked value slice")

    pv = sub.add_parser("converge", parents=[common],
                        help="cascade error ladder against the limit equilibrium")
    pv.add_argument("--ladder", default="2,4,8,16,32",
                    help="comma-separated partition sizes (default 2,4,8,16,32)")
    pv.add_argument("--method", default="march", choices=["march", "picard"],
                    help="reference solver (default march)")
    pv.add_argument("--partition-kind", default="uniform",
                    choices=["uniform", "geometric"])
    pv.add_argument("--ratio", type=float, default=1.0)

    ps = sub.add_parser("consistency", parents=[common],
                        help="cross-checks for start-time-independent problems")
    ps.add_argument("--tol", type=float, default=1e-8,
                    help="comparison tolerance (default 1e-8)")

    px = sub.add_parser("export", parents=[common],
                        help="solve and write value/strategy tables (requires --out)")
    px.add_argument("--method", default="march",
                    choices=["march", "picard", "kernel"])
    return p


def _config(args, **overrides) -> ExperimentConfig:
    base = dict(
        preset=args.preset,
        problem_file=args.problem_file,
        nx=args.nx,
        nt=args.nt,
        controls=args.controls,
        stepper=args.scheme,
        cfl=args.cfl,
        seed=args.seed,
        out_dir=args.out,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


def _setup(config: ExperimentConfig):
    spec = config.build_problem()
    scheme = config.build_scheme()
    grid = config.build_grid(spec, scheme)
    print(f"problem: {spec.name}  grid: nx={grid.nx} nt={grid.nt} "
          f"dx={grid.dx:.6g} dt={grid.dt:.6g}  controls={config.controls}")
    return spec, scheme, grid


def _maybe_export(config: ExperimentConfig, artifacts: dict, meta: dict) -> None:
    if config.out_dir is None:
        return
    manifest = export_results(artifacts, config.out_dir, meta=meta)
    print(f"wrote {len(manifest['files'])} files to {config.out_dir} (manifest.json)")


def _meta(config: ExperimentConfig, **extra) -> dict:
    meta = {k: v for k, v in config.to_dict().items() if k != "out_dir" and v is not None}
    meta.update(extra)
    return meta


def _cmd_cascade(args) -> int:
    part_spec = {"kind": args.partition_kind, "n": args.players}
    if args.partition_kind == "geometric":
        part_spec["ratio"] = args.ratio
    config = _config(args, partition=part_spec, method="cascade")
    spec, scheme, grid = _setup(config)
    partition = config.build_partition(spec.horizon)
    sol = cascade_solve(spec, partition, grid, scheme)
    mid = grid.nx // 2
    jump = max(abs(float(j)) for j in sol.jumps) if len(sol.jumps) else 0.0
    print(f"cascade: N={partition.n_intervals} mesh={partition.mesh:.6g}  "
          f"V(0, {grid.xs[mid]:g}) = {sol.value.values[0, mid]:.9g}  max jump = {jump:.3e}")
    _maybe_export(config, {"cascade": sol}, _meta(config))
    return 0


def _cmd_equilibrium(args) -> int:
    config = _config(args, method=args.method)
    spec, scheme, grid = _setup(config)
    if args.method == "march":
        sol = diagonal_march_solve(spec, grid, scheme, tau_stride=args.tau_stride)
    elif args.method == "picard":
        sol = picard_window_solve(spec, grid, scheme, delta=args.delta)
    else:
        sol = kernel_picard_solve(spec, grid, scheme, nt_coarse=args.nt_coarse)
    mid = grid.nx // 2
    diag = {k: v for k, v in sol.diagnostics.items()
            if isinstance(v, (int, float, str))}
    print(f"{args.method}: V(0, {grid.xs[mid]:g}) = {sol.value.values[0, mid]:.9g}  "
          + "  ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}"
                      for k, v in sorted(diag.items())))
    _maybe_export(config, {args.method: sol}, _meta(config))
    return 0


def _cmd_mc(args) -> int:
    config = _config(args)
    spec, scheme, grid = _setup(config)
    sol = diagonal_march_solve(spec, grid, scheme, tau_keep=[args.tau])
    report = feynman_kac_check(
        spec, sol.theta, sol.strategy, args.tau, args.x0, args.paths,
        seed=args.seed, strict=args.strict,
    )
    payload = dict(report.__dict__)
    payload["inputs"] = _meta(config, paths=args.paths, x0=args.x0, tau=args.tau)
    print(json.dumps(payload, sort_keys=True, indent=2, default=float))
    _maybe_export(config, {"mc": payload}, _meta(config))
    return 0


def _cmd_converge(args) -> int:
    try:
        ladder = [int(tok) for tok in args.ladder.split(",") if tok.strip()]
    except ValueError:
        raise UsageError(f"cannot parse ladder {args.ladder!r}; expected e.g. 2,4,8")
    part_spec = {"kind": args.partition_kind, "n": max(ladder, default=1)}
    if args.partition_kind == "geometric":
        part_spec["ratio"] = args.ratio
    # the study writes its own CSV when out_dir is set; export below instead
    config = _config(args, partition=part_spec, method=args.method, out_dir=None)
    report = run_convergence_study(config, ladder)
    print(f"reference: {report.reference}")
    print("      N       mesh    value-err  strategy-err")
    for n, m, ev, eu in zip(ladder, report.mesh_sizes,
                            report.value_errors, report.strategy_errors):
        print(f"  {n:5d}  {m:9.6f}  {ev:11.4e}  {eu:11.4e}")
    print(f"fitted rate: {report.fitted_rate:.4f}"
          + (f"  flags: {', '.join(report.flags)}" if report.flags else ""))
    if args.out is not None:
        manifest = export_results({"convergence": report}, args.out,
                                  meta=_meta(config, ladder=ladder))
        print(f"wrote {len(manifest['files'])} files to {args.out} (manifest.json)")
    return 0


def _cmd_consistency(args) -> int:
    config = _config(args, tol=args.tol)
    report = run_consistency_suite(config)
    for c in report.checks:
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']:26s} "
              f"magnitude={c['magnitude']:.3e}  tolerance={c['tolerance']:.3e}")
    print(f"consistency suite: {'PASS' if report.passed else 'FAIL'} ({report.problem})")
    _maybe_export(config, {"consistency": report}, _meta(config))
    return 0 if report.passed else 3


def _cmd_export(args) -> int:
    if args.out is None:
        raise UsageError("export requires --out")
    config = _config(args, method=args.method)
    spec, scheme, grid = _setup(config)
    solver = {
        "march": diagonal_march_solve,
        "picard": picard_window_solve,
        "kernel": kernel_picard_solve,
    }[args.method]
    sol = solver(spec, grid, scheme)
    # record the experiment identity, not the destination: exports of the
    # same run into different directories must hash identically
    recorded = dict(config.to_dict(), out_dir=None)
    manifest = export_results(
        {"solution": sol, "config": recorded},
        config.out_dir,
        meta=_meta(config),
    )
    print(f"wrote {len(manifest['files'])} files to {config.out_dir} (manifest.json)")
    return 0


_COMMANDS = {
    "cascade": _cmd_cascade,
    "equilibrium": _cmd_equilibrium,
    "mc": _cmd_mc,
    "converge": _cmd_converge,
    "consistency": _cmd_consistency,
    "export": _cmd_export,
}


def main(argv=None) -> int:
    """Run the CLI; returns the process exit code instead of raising."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except TicSolveError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
