"""Experiment orchestration: configs, convergence studies, consistency suites, export.

This module is the plumbing layer between the numerical core and the command
line.  An :class:`ExperimentConfig` captures one run declaratively and
round-trips through plain dicts / JSON, so experiments can be versioned and
replayed.  :func:`run_convergence_study` measures how fast the cascade values
approach the limit equilibrium as the partition refines,
:func:`run_consistency_suite` cross-checks the solvers against each other (and
against Monte-Carlo) on problems whose data do not depend on the evaluation
time, and :func:`export_results` writes artifacts to disk with a content-hash
manifest so that reruns can be compared byte-for-byte.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cascade import CascadeSolution, cascade_solve
from .equilibrium import (
    EquilibriumSolution,
    diagonal_march_solve,
    picard_window_solve,
)
from .errors import UsageError
from .exprfile import load_problem_file
from .grids import Field2D, Grid, Partition, gradient_rows, inner_slice
from .mc import (
    McReport,
    detect_generator_mode,
    recursive_cost_estimate,
    simulate_closed_loop,
)
from .pde import SchemeConfig, hjb_backward_solve, stable_nt
from .presets import get_preset, preset_names
from .problem import ProblemSpec

__all__ = [
    "ConsistencyReport",
    "ConvergenceReport",
    "ExperimentConfig",
    "export_results",
    "run_consistency_suite",
    "run_convergence_study",
]

_PARTITION_KINDS = ("uniform", "geometric", "explicit")
_METHODS = ("march", "picard", "kernel", "cascade")
_STEPPERS = ("explicit-upwind", "semi-implicit-diffusion")
_BOUNDARIES = ("linear-extrapolation", "neumann")


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    """Declarative description of one experiment.

    Exactly one of `preset` / `problem_file` selects the problem; the spatial
    domain and horizon come from the problem itself.  `nt=None` means "use the
    explicit-stability bound".  The partition dict takes one of three shapes:
    ``{"kind": "uniform", "n": N}``, ``{"kind": "geometric", "n": N,
    "ratio": r}``, or ``{"kind": "explicit", "knots": [0, ..., T]}``.

    Parameters
    ----------
    preset : str, optional
        Name of a built-in problem (see `preset_names()`).
    problem_file : str, optional
        Path to a problem definition file (see `ticsolve.exprfile`).
    nx : int
        Spatial nodes.
    nt : int, optional
        Time levels; defaults to the stability bound of the chosen stepper.
    controls : int
        Control lattice points.
    stepper, cfl, boundary :
        Scheme selection, forwarded to `SchemeConfig`.
    partition : dict
        Partition family for cascade runs (see above).
    method : str
        One of ``march``, ``picard``, ``kernel``, ``cascade``.
    tol : float
        Comparison tolerance used by the consistency suite.
    seed : int
        Seed for all stochastic components.
    out_dir : str, optional
        Directory for exported artifacts; nothing is written when None.
    """

    preset: str | None = None
    problem_file: str | None = None
    nx: int = 201
    nt: int | None = None
    controls: int = 65
    stepper: str = "explicit-upwind"
    cfl: float = 0.9
    boundary: str = "linear-extrapolation"
    partition: dict = field(default_factory=lambda: {"kind": "uniform", "n": 8})
    method: str = "march"
    tol: float = 1e-8
    seed: int = 0
    out_dir: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        """Raise `UsageError` on the first invalid field."""
        if (self.preset is None) == (self.problem_file is None):
            raise UsageError("set exactly one of preset / problem_file")
        if self.preset is not None and self.preset not in preset_names():
            raise UsageError(
                f"unknown preset {self.preset!r}; available: "
                + ", ".join(preset_names())
            )
        if not isinstance(self.nx, int) or self.nx < 5:
            raise UsageError(f"nx={self.nx!r} too small (need an int >= 5)")
        if self.nt is not None and (not isinstance(self.nt, int) or self.nt < 1):
            raise UsageError(f"nt={self.nt!r} must be a positive int or None")
        if not isinstance(self.controls, int) or self.controls < 2:
            raise UsageError(f"controls={self.controls!r} must be an int >= 2")
        if self.stepper not in _STEPPERS:
            raise UsageError(f"unknown stepper {self.stepper!r}")
        if not 0.0 < self.cfl <= 1.0:
            raise UsageError(f"cfl={self.cfl!r} outside (0, 1]")
        if self.boundary not in _BOUNDARIES:
            raise UsageError(f"unknown boundary {self.boundary!r}")
        if self.method not in _METHODS:
            raise UsageError(f"unknown method {self.method!r}")
        if not (isinstance(self.tol, (int, float)) and self.tol > 0):
            raise UsageError(f"tol={self.tol!r} must be positive")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise UsageError(f"seed={self.seed!r} must be a nonnegative int")
        self._validate_partition()

    def _validate_partition(self) -> None:
        p = self.partition
        if not isinstance(p, dict) or "kind" not in p:
            raise UsageError("partition must be a dict with a 'kind' key")
        kind = p["kind"]
        if kind not in _PARTITION_KINDS:
            raise UsageError(
                f"partition kind {kind!r} not one of {_PARTITION_KINDS}"
            )
        if kind == "explicit":
            if set(p) != {"kind", "knots"}:
                raise UsageError("explicit partition takes exactly {kind, knots}")
            knots = p["knots"]
            if not isinstance(knots, (list, tuple)) or len(knots) < 2:
                raise UsageError("explicit partition needs >= 2 knots")
            return
        allowed = {"kind", "n"} | ({"ratio"} if kind == "geometric" else set())
        if set(p) - allowed:
            raise UsageError(f"unexpected partition keys: {sorted(set(p) - allowed)}")
        n = p.get("n")
        if not isinstance(n, int) or n < 1:
            raise UsageError(f"partition n={n!r} must be an int >= 1")
        if kind == "geometric" and not (isinstance(p.get("ratio", 1.0), (int, float)) and p.get("ratio", 1.0) > 0):
            raise UsageError(f"geometric ratio={p.get('ratio')!r} must be positive")

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        """Plain-dict form; `from_dict(to_dict())` is the identity."""
        d = dataclasses.asdict(self)
        d["partition"] = dict(self.partition)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        """Build from a dict, rejecting unknown keys."""
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(data) - known
        if extra:
            raise UsageError(f"unknown config keys: {sorted(extra)}")
        return cls(**data)

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n")

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path}: {exc}") from None
        if not isinstance(data, dict):
            raise UsageError(f"config file {path}: expected a JSON object")
        return cls.from_dict(data)

    # -- builders -----------------------------------------------------------

    def build_problem(self) -> ProblemSpec:
        if self.preset is not None:
            return get_preset(self.preset)
        return load_problem_file(self.problem_file)

    def build_scheme(self) -> SchemeConfig:
        return SchemeConfig(
            stepper=self.stepper,
            cfl_safety=self.cfl,
            control_points=self.controls,
            boundary=self.boundary,
        )

    def build_grid(self, spec: ProblemSpec, scheme: SchemeConfig | None = None) -> Grid:
        scheme = scheme or self.build_scheme()
        nt = self.nt
        if nt is None:
            probe = Grid(spec.x_lo, spec.x_hi, self.nx, spec.horizon, 1)
            nt = stable_nt(spec, probe, scheme, spec.control_grid(self.controls))
        return Grid(spec.x_lo, spec.x_hi, self.nx, spec.horizon, nt)

    def build_partition(self, horizon: float, n: int | None = None) -> Partition:
        kind = self.partition["kind"]
        if kind == "explicit":
            if n is not None:
                raise UsageError(
                    "explicit partitions fix their knots; a size ladder needs "
                    "a uniform or geometric family"
                )
            return Partition(tuple(float(k) for k in self.partition["knots"]))
        count = n if n is not None else self.partition["n"]
        if kind == "uniform":
            return Partition.uniform(count, horizon)
        return Partition.geometric(count, float(self.partition.get("ratio", 1.0)), horizon)


# ---------------------------------------------------------------------------
# convergence study


@dataclass
class ConvergenceReport:
    """Error-vs-mesh table from a partition refinement ladder.

    `value_errors[k]` is sup over the compact window (middle half of the
    spatial domain, all times) of |value gap| + |gradient gap| against the
    reference; `strategy_errors[k]` the same sup of the control gap.
    `fitted_rate` is the log-log slope of `value_errors` vs `mesh_sizes`.
    """

    mesh_sizes: list[float]
    value_errors: list[float]
    strategy_errors: list[float]
    fitted_rate: float
    reference: str
    flags: list[str] = field(default_factory=list)

    def __post_init__(self):
        m = np.asarray(self.mesh_sizes, dtype=float)
        if m.ndim != 1 or len(m) != len(self.value_errors) or len(m) != len(self.strategy_errors):
            raise UsageError("mesh/error lists must have equal length")
        if np.any(np.diff(m) >= 0):
            raise UsageError(f"mesh sizes must be strictly decreasing, got {self.mesh_sizes}")
        if min(self.value_errors) < 0 or min(self.strategy_errors) < 0:
            raise UsageError("errors must be nonnegative")

    def to_csv(self, path) -> None:
        """One row per ladder rung: mesh, value_error, strategy_error."""
        lines = ["mesh,value_error,strategy_error"]
        for m, ev, eu in zip(self.mesh_sizes, self.value_errors, self.strategy_errors):
            lines.append(f"{m!r},{ev!r},{eu!r}")
        Path(path).write_text("\n".join(lines) + "\n")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def run_convergence_study(config: ExperimentConfig, partition_ladder) -> ConvergenceReport:
    """Cascade error against the limit equilibrium for a ladder of partition sizes.

    Solves the cascade for each N in `partition_ladder` on one fixed grid,
    solves the limit equilibrium on the *same* grid with `config.method`
    (march or picard), and measures sup-norm gaps over the middle half of the
    spatial domain at every time level.  Writes ``convergence.csv`` into
    `config.out_dir` when set.

    Parameters
    ----------
    config : ExperimentConfig
        Problem, grid, scheme, and partition-family selection.
    partition_ladder : sequence of int
        Strictly increasing interval counts, at least three.

    Returns
    -------
    ConvergenceReport
    """
    ladder = [int(n) for n in partition_ladder]
    if len(ladder) < 3:
        raise UsageError(f"partition ladder needs >= 3 sizes, got {ladder}")
    if any(b <= a for a, b in zip(ladder, ladder[1:])):
        raise UsageError(f"partition ladder must be strictly increasing, got {ladder}")
    if config.method not in ("march", "picard"):
        raise UsageError(
            f"reference method {config.method!r} unsupported: the reference must "
            "live on the same grid as the cascade (use march or picard)"
        )

    spec = config.build_problem()
    scheme = config.build_scheme()
    grid = config.build_grid(spec, scheme)
    solver = diagonal_march_solve if config.method == "march" else picard_window_solve
    ref = solver(spec, grid, scheme, tau_keep=[0.0])
    ref_v = ref.value.values
    ref_p = gradient_rows(ref_v, grid.dx)
    ref_u = ref.strategy.values
    window = inner_slice(grid)

    meshes, verrs, uerrs = [], [], []
    for n in ladder:
        part = config.build_partition(spec.horizon, n=n)
        sol = cascade_solve(spec, part, grid, scheme)
        dv = np.abs(sol.value.values - ref_v)
        dp = np.abs(gradient_rows(sol.value.values, grid.dx) - ref_p)
        verrs.append(float((dv + dp)[:, window].max()))
        uerrs.append(float(np.abs(sol.strategy.values - ref_u)[:, window].max()))
        meshes.append(part.snapped(grid).mesh)

    flags = []
    errs = np.asarray(verrs)
    if np.all(errs < 1e-12):
        # partition-invariant problem: the ladder sits at the noise floor
        rate = float("inf")
        flags.append("at-floor")
    else:
        rate = float(np.polyfit(np.log(meshes), np.log(np.maximum(errs, 1e-16)), 1)[0])
        if np.any(np.diff(errs) > 0):
            flags.append("non-monotone")

    report = ConvergenceReport(
        mesh_sizes=meshes,
        value_errors=verrs,
        strategy_errors=uerrs,
        fitted_rate=rate,
        reference=f"{config.method} on nx={grid.nx}, nt={grid.nt}",
        flags=flags,
    )
    if config.out_dir is not None:
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        report.to_csv(out / "convergence.csv")
    return report


# ---------------------------------------------------------------------------
# consistency suite


@dataclass
class ConsistencyReport:
    """Pass/fail record of the time-consistent cross-checks.

    Each entry of `checks` is a dict with keys ``name``, ``passed``,
    ``magnitude``, ``tolerance``, and ``detail``.
    """

    problem: str
    checks: list[dict]
    passed: bool

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _assert_tau_independent(spec: ProblemSpec) -> None:
    """Refuse problems whose running or terminal data saturate on the start time."""
    if spec.tau_free is True:
        return
    T = spec.horizon
    width = spec.x_hi - spec.x_lo
    xs = (spec.x_lo + 0.31 * width, spec.x_lo + 0.5 * width, spec.x_lo + 0.82 * width)
    u = 0.5 * (spec.u_lo + spec.u_hi)
    drift = False
    for tau in (0.37 * T, 0.81 * T):
        for x in xs:
            if abs(spec.h(tau, x) - spec.h(0.0, x)) > 1e-12 * (1.0 + abs(spec.h(0.0, x))):
                drift = True
            for t in (0.5 * T, 0.93 * T):
                g0 = spec.g(0.0, t, x, u, 0.7, -0.3)
                if abs(spec.g(tau, t, x, u, 0.7, -0.3) - g0) > 1e-12 * (1.0 + abs(g0)):
                    drift = True
    if drift or spec.tau_free is False:
        raise UsageError(
            f"problem {spec.name!r} has start-time-dependent data; the "
            "consistency suite only applies when g and h are free of tau"
        )


def run_consistency_suite(config: ExperimentConfig) -> ConsistencyReport:
    """Cross-check the solvers on a problem with start-time-independent data.

    Such problems are ordinary time-consistent control problems, so three
    identities must hold: (a) the cascade value is invariant under the
    partition, (b) the limit equilibrium value equals the classical dynamic
    programming value, and (c) the closed-loop cost of the computed strategy
    is no worse than randomly perturbed strategies (verification inequality,
    by Monte-Carlo; a single deterministic path when the noise vanishes).

    Returns
    -------
    ConsistencyReport
        Structured pass/fail with the measured magnitudes.
    """
    spec = config.build_problem()
    _assert_tau_independent(spec)
    scheme = config.build_scheme()
    grid = config.build_grid(spec, scheme)
    checks: list[dict] = []

    # (a) partition invariance of the cascade value
    sol1 = cascade_solve(spec, Partition.uniform(1, spec.horizon), grid, scheme)
    sol4 = cascade_solve(spec, Partition.uniform(4, spec.horizon), grid, scheme)
    gap_a = float(np.abs(sol1.value.values - sol4.value.values).max())
    checks.append({
        "name": "partition-invariance",
        "passed": gap_a <= config.tol,
        "magnitude": gap_a,
        "tolerance": config.tol,
        "detail": "sup |V(1 interval) - V(4 intervals)|",
    })

    # (b) limit equilibrium vs classical dynamic programming
    eq = diagonal_march_solve(spec, grid, scheme, tau_keep=[0.0])
    xs = grid.xs
    cls_v, cls_u = hjb_backward_solve(
        spec, 0.0, (0.0, spec.horizon), spec.h(0.0, xs), grid, scheme
    )
    gap_b = float(np.abs(eq.value.values - cls_v.values).max())
    checks.append({
        "name": "equilibrium-is-classical",
        "passed": gap_b <= config.tol,
        "magnitude": gap_b,
        "tolerance": config.tol,
        "detail": "sup |equilibrium V - classical HJB V|",
    })

    # (c) verification inequality: the computed strategy beats perturbations
    deterministic = _noise_vanishes(spec)
    n_paths = 8 if deterministic else 2000
    x0 = 0.5 * (spec.x_lo + spec.x_hi)
    mode, _ = detect_generator_mode(spec)
    rng = np.random.default_rng(config.seed)
    opt = _closed_loop_cost(spec, cls_u, x0, n_paths, config.seed, mode)
    # deterministic runs carry no sampling error, only O(dt + dx) bias
    slack = 0.0 if not deterministic else 10.0 * (grid.dt + grid.dx) * (1.0 + abs(opt.estimate))
    margins = []
    worst = np.inf
    amp = 0.25 * (spec.u_hi - spec.u_lo)
    for k in range(3):
        bump = rng.uniform(-amp, amp, size=cls_u.values.shape)
        pert = Field2D(grid, 0, np.clip(cls_u.values + bump, spec.u_lo, spec.u_hi))
        cost = _closed_loop_cost(spec, pert, x0, n_paths, config.seed + 101 + k, mode)
        comb = float(np.hypot(opt.std_error, cost.std_error))
        margin = cost.estimate - opt.estimate
        margins.append(margin)
        worst = min(worst, margin + 3.0 * comb + slack)
    checks.append({
        "name": "verification-inequality",
        "passed": worst >= 0.0,
        "magnitude": float(min(margins)),
        "tolerance": -slack,
        "detail": (
            f"min over 3 perturbed strategies of (cost - optimal cost); "
            f"{'deterministic single-path' if deterministic else f'{n_paths} paths'} mode"
        ),
    })

    return ConsistencyReport(
        problem=spec.name,
        checks=checks,
        passed=all(c["passed"] for c in checks),
    )


def _noise_vanishes(spec: ProblemSpec) -> bool:
    T, w = spec.horizon, spec.x_hi - spec.x_lo
    pts = [(0.0, spec.x_lo + 0.3 * w), (0.5 * T, spec.x_lo + 0.5 * w), (0.9 * T, spec.x_lo + 0.75 * w)]
    u = 0.5 * (spec.u_lo + spec.u_hi)
    return all(abs(spec.sigma(t, x, u)) == 0.0 for t, x in pts)


def _closed_loop_cost(spec, strategy, x0, n_paths, seed, mode) -> McReport:
    bundle = simulate_closed_loop(spec, strategy, x0, n_paths, seed)
    return recursive_cost_estimate(spec, 0.0, bundle, mode)


# ---------------------------------------------------------------------------
# export


def _jsonable(obj):
    """Recursively convert numpy scalars/arrays so json.dumps accepts the tree."""
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    return obj


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(_jsonable(payload), sort_keys=True, indent=2) + "\n")


def export_results(artifacts: dict, out_dir, meta: dict | None = None) -> dict:
    """Write artifacts to `out_dir` and return a manifest of content hashes.

    Supported artifact values: `Field2D` (CSV + sidecar), `EquilibriumSolution`
    and `CascadeSolution` (value/strategy CSVs + a JSON summary), `McReport`,
    `ConvergenceReport`, `ConsistencyReport`, and plain dicts (JSON).  The
    manifest maps each written file name to the SHA-256 of its bytes, so two
    runs agree exactly iff their artifacts agree byte-for-byte; it is written
    to ``manifest.json`` alongside the artifacts.

    Parameters
    ----------
    artifacts : dict
        Mapping from artifact name (used as the file stem) to artifact.
    out_dir : path-like
        Target directory, created if needed.
    meta : dict, optional
        Run metadata recorded in the manifest and CSV sidecars.

    Returns
    -------
    dict
        ``{"meta": ..., "files": {name: sha256-hex}}``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    def emit_field(stem: str, fld: Field2D):
        path = out / f"{stem}.csv"
        fld.to_csv(path, meta=meta)
        written.extend([path, Path(str(path) + ".json")])

    for name in sorted(artifacts):
        if "/" in name or "\\" in name or name in ("", ".", ".."):
            raise UsageError(f"artifact name {name!r} is not a valid file stem")
        art = artifacts[name]
        if isinstance(art, Field2D):
            emit_field(name, art)
        elif isinstance(art, EquilibriumSolution):
            emit_field(f"{name}.value", art.value)
            emit_field(f"{name}.strategy", art.strategy)
            path = out / f"{name}.json"
            _write_json(path, {"method": art.method, "diagnostics": art.diagnostics})
            written.append(path)
        elif isinstance(art, CascadeSolution):
            emit_field(f"{name}.value", art.value)
            emit_field(f"{name}.strategy", art.strategy)
            path = out / f"{name}.json"
            _write_json(path, {
                "method": "cascade",
                "partition": list(art.partition.knots),
                "jumps": art.jumps,
                "control_points": len(art.control_grid),
            })
            written.append(path)
        elif isinstance(art, McReport):
            path = out / f"{name}.json"
            _write_json(path, dataclasses.asdict(art))
            written.append(path)
        elif isinstance(art, ConvergenceReport):
            cpath = out / f"{name}.csv"
            art.to_csv(cpath)
            jpath = out / f"{name}.json"
            _write_json(jpath, art.to_dict())
            written.extend([cpath, jpath])
        elif isinstance(art, ConsistencyReport):
            path = out / f"{name}.json"
            _write_json(path, art.to_dict())
            written.append(path)
        elif isinstance(art, dict):
            path = out / f"{name}.json"
            _write_json(path, art)
            written.append(path)
        else:
            raise UsageError(
                f"cannot export artifact {name!r} of type {type(art).__name__}"
            )

    files = {}
    for path in written:
        try:
            files[path.name] = hashlib.sha256(path.read_bytes()).hexdigest()
        except OSError as exc:
            raise UsageError(f"failed to hash exported file {path}: {exc}") from None
    manifest = {"meta": _jsonable(meta or {}), "files": dict(sorted(files.items()))}
    _write_json(out / "manifest.json", manifest)
    return manifest
