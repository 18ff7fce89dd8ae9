"""Monte-Carlo validation of the PDE value fields.

Forward Euler--Maruyama simulation of the closed-loop state process under a
frozen feedback strategy, plus direct estimation of the recursive cost along
the simulated paths. The estimators cover the two generator shapes that
integrate in closed form -- g independent of (y, z), and g linear in y with a
constant slope -- so the Monte-Carlo side stays an independent oracle with no
regression step. Anything else is refused and validated through the PDE
representation instead.

Randomness comes from counter-based Philox streams keyed by an explicit
64-bit seed, one stream per path block, so runs are bit-reproducible and
embarrassingly parallel over blocks.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, UnsupportedProblemError, UsageError
from .grids import Field2D, Field3D
from .problem import ProblemSpec

__all__ = [
    "PathBundle",
    "McReport",
    "detect_generator_mode",
    "simulate_closed_loop",
    "recursive_cost_estimate",
    "feynman_kac_check",
]

_BLOCK = 4096  # paths per RNG stream
_EXIT_LIMIT = 0.01


@dataclass
class PathBundle:
    """Simulated closed-loop paths with their controls and noise.

    ``states`` has one column per time level of ``times`` (the first column
    is the start point); ``controls`` and ``increments`` have one column per
    step. Paths that leave the spatial domain are clamped to the boundary,
    frozen there, and flagged in ``exited``.
    """

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    increments: np.ndarray
    seed: int
    exited: np.ndarray
    exit_fraction: float
    x0: float

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def n_steps(self) -> int:
        return self.increments.shape[1]


@dataclass
class McReport:
    """Point estimate of a recursive cost with its sampling error.

    ``z_score`` and ``reference`` are filled by checks that compare the
    estimate against a PDE value; ``details`` carries auxiliary results
    (mid-horizon restart scores, exit statistics).
    """

    estimate: float
    std_error: float
    n_paths: int
    target: str
    seed: int
    z_score: float | None = None
    reference: float | None = None
    details: dict = field(default_factory=dict)


def _block_normals(seed: int, n_paths: int, n_steps: int) -> np.ndarray:
    """Standard normals in blocks, one Philox stream per block index."""
    out = np.empty((n_paths, n_steps))
    for block, lo in enumerate(range(0, n_paths, _BLOCK)):
        hi = min(lo + _BLOCK, n_paths)
        rng = np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, block, 0]))
        out[lo:hi] = rng.standard_normal((hi - lo, n_steps))
    return out


def _interp_row(row: np.ndarray, xs: np.ndarray, x: np.ndarray) -> np.ndarray:
    idx = np.clip(np.searchsorted(xs, x) - 1, 0, xs.size - 2)
    w = (x - xs[idx]) / (xs[1] - xs[0])
    return row[idx] * (1.0 - w) + row[idx + 1] * w


def simulate_closed_loop(spec: ProblemSpec, strategy: Field2D, x0: float,
                         n_paths: int, seed: int, t0: float = 0.0,
                         strict: bool = False) -> PathBundle:
    """Euler--Maruyama paths of the state under a frozen feedback strategy.

    Parameters
    ----------
    spec : ProblemSpec
        Dynamics b and sigma (the generator is not used here).
    strategy : Field2D
        Feedback field u(t, x); interpolated bilinearly, which on the
        simulation's own grid times reduces to linear interpolation in x.
    x0 : float
        Start point; must lie in the inner half of the spatial domain.
    n_paths, seed : int
        Path count and the 64-bit key of the Philox streams.
    t0 : float
        Start time (a grid time of the strategy field).
    strict : bool
        Escalate the >1% boundary-exit warning to NumericalError.

    Returns
    -------
    PathBundle
        Paths stepped on the strategy's time grid from t0 to the horizon;
        exiting paths are frozen at the boundary and flagged.
    """
    if n_paths < 1:
        raise UsageError("n_paths must be >= 1")
    grid = strategy.grid
    width = grid.x_hi - grid.x_lo
    if not (grid.x_lo + 0.25 * width <= x0 <= grid.x_hi - 0.25 * width):
        raise UsageError(
            f"x0={x0} is outside the inner half of [{grid.x_lo}, {grid.x_hi}]"
        )
    i0 = grid.time_index(t0)
    if i0 < strategy.i_start:
        raise UsageError("strategy field does not cover the start time")

    ts = grid.ts[i0:]
    n_steps = ts.size - 1
    dt = grid.dt
    noise = _block_normals(int(seed), n_paths, max(n_steps, 1))[:, :n_steps]
    dw = noise * math.sqrt(dt)

    states = np.empty((n_paths, n_steps + 1))
    controls = np.empty((n_paths, n_steps))
    states[:, 0] = x0
    exited = np.zeros(n_paths, dtype=bool)
    xs = grid.xs

    x = states[:, 0].copy()
    for j in range(n_steps):
        row = strategy.row(i0 + j)
        u = _interp_row(row, xs, x)
        controls[:, j] = u
        live = ~exited
        b = np.broadcast_to(np.asarray(spec.b(ts[j], x, u), dtype=float), x.shape)
        s = np.broadcast_to(np.asarray(spec.sigma(ts[j], x, u), dtype=float), x.shape)
        x = x + live * (b * dt + s * dw[:, j])
        out_lo = x < grid.x_lo
        out_hi = x > grid.x_hi
        x[out_lo] = grid.x_lo
        x[out_hi] = grid.x_hi
        exited |= out_lo | out_hi
        states[:, j + 1] = x

    frac = float(exited.mean())
    if frac > _EXIT_LIMIT:
        msg = (
            f"{frac:.1%} of paths hit the spatial boundary and were frozen; "
            "estimates are biased -- enlarge the domain"
        )
        if strict:
            raise NumericalError(msg)
        warnings.warn(msg, stacklevel=2)
    return PathBundle(ts, states, controls, dw, int(seed), exited, frac, float(x0))


def detect_generator_mode(spec: ProblemSpec, tau: float = 0.0):
    """Classify g for Monte-Carlo integration by probing its (y, z) slots.

    Returns
    -------
    (mode, mu) : (str, float)
        ``("g-free-of-yz", 0.0)`` when g ignores y and z, or
        ``("y-linear", mu)`` when g = mu*y + g0(tau, t, x, u) with one
        constant slope mu.

    Raises
    ------
    UnsupportedProblemError
        If g depends on z, is nonlinear in y, or its y-slope varies with
        (t, x, u); such generators are validated through the PDE
        representation, not by Monte Carlo.
    """
    T = spec.horizon
    probes = [
        (0.23 * T, 0.6 * spec.x_lo + 0.4 * spec.x_hi, spec.u_lo),
        (0.71 * T, 0.3 * spec.x_lo + 0.7 * spec.x_hi, spec.u_hi),
        (0.50 * T, 0.5 * (spec.x_lo + spec.x_hi), 0.5 * (spec.u_lo + spec.u_hi)),
    ]
    slopes = []
    for t, x, u in probes:
        g00 = float(spec.g(tau, t, x, u, 0.0, 0.0))
        g10 = float(spec.g(tau, t, x, u, 1.0, 0.0))
        g20 = float(spec.g(tau, t, x, u, 2.0, 0.0))
        g01 = float(spec.g(tau, t, x, u, 0.0, 1.0))
        scale = max(1.0, abs(g00), abs(g10), abs(g20))
        if abs(g01 - g00) > 1e-10 * scale:
            raise UnsupportedProblemError(
                "generator depends on z; use the PDE representation "
                "(representation_solve) to validate this problem"
            )
        if abs(g20 - 2.0 * g10 + g00) > 1e-10 * scale:
            raise UnsupportedProblemError(
                "generator is nonlinear in y; use the PDE representation "
                "(representation_solve) to validate this problem"
            )
        slopes.append(g10 - g00)
    mu = slopes[0]
    if max(abs(s - mu) for s in slopes) > 1e-10 * max(1.0, abs(mu)):
        raise UnsupportedProblemError(
            "generator's y-slope varies with (t, x, u); only a constant "
            "slope integrates in closed form"
        )
    if abs(mu) <= 1e-13:
        return "g-free-of-yz", 0.0
    return "y-linear", mu


def recursive_cost_estimate(spec: ProblemSpec, tau: float, bundle: PathBundle,
                            mode: str) -> McReport:
    """Estimate the recursive cost from the bundle's start point.

    ``g-free-of-yz`` integrates g directly along each path; ``y-linear``
    (g = mu*y + g0) applies the closed-form exponential weights
    exp(mu*(s - t0)) to the running cost and exp(mu*(T - t0)) to the
    terminal cost, with t0 the bundle's start time. The slope is probed,
    so a mismatched mode is rejected rather than silently misintegrated.
    """
    detected, mu = detect_generator_mode(spec, tau)
    if mode not in ("g-free-of-yz", "y-linear"):
        raise UsageError(f"unknown mode {mode!r}")
    if mode == "g-free-of-yz" and detected == "y-linear":
        raise UsageError(
            f"generator is linear in y with slope {mu:.6g}; use mode='y-linear'"
        )
    if mode == "g-free-of-yz":
        mu = 0.0

    ts = bundle.times
    t0 = ts[0]
    dt = ts[1] - ts[0] if ts.size > 1 else 0.0
    acc = np.zeros(bundle.n_paths)
    for j in range(bundle.n_steps):
        g0 = spec.g(tau, ts[j], bundle.states[:, j], bundle.controls[:, j], 0.0, 0.0)
        g0 = np.broadcast_to(np.asarray(g0, dtype=float), acc.shape)
        acc = acc + math.exp(mu * (ts[j] - t0)) * g0
    terminal = np.broadcast_to(
        np.asarray(spec.h(tau, bundle.states[:, -1]), dtype=float), acc.shape
    )
    cost = dt * acc + math.exp(mu * (ts[-1] - t0)) * terminal

    estimate = float(cost.mean())
    spread = float(cost.std(ddof=1)) if bundle.n_paths > 1 else 0.0
    report = McReport(
        estimate=estimate,
        std_error=spread / math.sqrt(bundle.n_paths),
        n_paths=bundle.n_paths,
        target=f"recursive cost from (t={t0:g}, x={bundle.x0:g}) at tau={tau:g}",
        seed=bundle.seed,
        details={"mode": mode, "mu": mu, "exit_fraction": bundle.exit_fraction},
    )
    return report


def feynman_kac_check(spec: ProblemSpec, theta: Field3D, strategy: Field2D,
                      tau: float, x0: float, n_paths: int, seed: int = 0,
                      strict: bool = False) -> McReport:
    """Validate a tau-slice of the value family against simulation.

    Simulates from (tau, x0) under the frozen strategy, estimates the
    recursive cost, and reports the z-score of the estimate against
    theta(tau; tau, x0). The pathwise identity is also spot-checked at the
    mid-horizon time: sub-bundles restart from quantile states of the main
    bundle and their tail-cost estimates are scored against the slice there
    (``details["midpoint"]``).
    """
    sl = theta.slice_for(tau)
    grid = sl.grid
    mode, _ = detect_generator_mode(spec, tau)
    bundle = simulate_closed_loop(spec, strategy, x0, n_paths, seed, t0=tau,
                                  strict=strict)
    report = recursive_cost_estimate(spec, tau, bundle, mode)
    ref = float(_interp_row(sl.values[0], grid.xs, np.array([x0]))[0])
    if report.std_error > 0:
        z = (report.estimate - ref) / report.std_error
    else:
        z = 0.0 if report.estimate == ref else math.inf
    report.reference = ref
    report.z_score = float(z)
    report.target = f"theta(tau={tau:g}) at (t={tau:g}, x={x0:g})"

    # pathwise identity at the mid-horizon level: restart sub-bundles from
    # quantile states and score their tail costs against the slice values
    i_tau = sl.i_start
    i_mid = grid.time_index(0.5 * (tau + grid.horizon))
    if i_mid > i_tau and i_mid < grid.nt:
        s_mid = grid.ts[i_mid]
        x_mid = bundle.states[:, i_mid - i_tau]
        width = grid.x_hi - grid.x_lo
        points = np.quantile(x_mid, [0.1, 0.3, 0.5, 0.7, 0.9])
        points = np.clip(points, grid.x_lo + 0.251 * width, grid.x_hi - 0.251 * width)
        n_sub = max(200, n_paths // 10)
        z_scores = []
        for k, xk in enumerate(points):
            sub = simulate_closed_loop(spec, strategy, float(xk), n_sub,
                                       seed + 7001 + k, t0=s_mid)
            sub_rep = recursive_cost_estimate(spec, tau, sub, mode)
            ref_k = float(_interp_row(sl.values[i_mid - i_tau], grid.xs,
                                      np.array([xk]))[0])
            if sub_rep.std_error > 0:
                z_scores.append((sub_rep.estimate - ref_k) / sub_rep.std_error)
            else:
                z_scores.append(0.0 if sub_rep.estimate == ref_k else math.inf)
        report.details["midpoint"] = {
            "time": float(s_mid),
            "points": [float(p) for p in points],
            "z_scores": [float(z) for z in z_scores],
            "n_paths": n_sub,
        }
    return report
