"""Problem definitions: coefficients, Hamiltonian, and control argmin.

A problem is the tuple (b, sigma, g, h, U, T) of a controlled 1-D diffusion
with a recursive running cost. The generator g and terminal cost h may depend
on the initial-time parameter tau, which is what makes the control problem
time-inconsistent; everything downstream keys off that dependence.

Coefficient callables must be numpy-broadcastable:

    b(t, x, u)          drift
    sigma(t, x, u)      diffusion (scalar noise)
    g(tau, t, x, u, y, z)   generator / running cost rate
    h(tau, x)           terminal cost
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import UnsupportedProblemError, UsageError

__all__ = [
    "ProblemSpec",
    "HamiltonianArgs",
    "hamiltonian",
    "psi_argmin",
    "detect_generator_structure",
    "coefficient_bounds",
]


def _probe_points(spec: "ProblemSpec"):
    ts = np.array([0.0, 0.5 * spec.horizon, spec.horizon])
    xs = np.array([spec.x_lo, 0.5 * (spec.x_lo + spec.x_hi), spec.x_hi])
    us = np.array([spec.u_lo, 0.5 * (spec.u_lo + spec.u_hi), spec.u_hi])
    return ts, xs, us


@dataclass(frozen=True)
class ProblemSpec:
    """Immutable problem definition.

    Parameters
    ----------
    name : str
        Identifier used in reports and export metadata.
    horizon : float
        Final time T.
    b, sigma : callable
        Drift/diffusion maps (t, x, u) -> rate.
    g : callable
        Generator (tau, t, x, u, y, z) -> cost rate.
    h : callable
        Terminal cost (tau, x).
    u_lo, u_hi : float
        Control interval; discretized uniformly where a grid is needed.
    x_lo, x_hi : float
        Suggested state-space truncation bounds carried with the problem.
    sigma_control_free : bool or None
        Whether sigma ignores u. Probed at construction when None.
    tau_free : bool or None
        Whether (g, h) ignore tau. Probed at construction when None.
    lipschitz_L : float or None
        Declared Lipschitz bound of the data, if known (diagnostic only).
    """

    name: str
    horizon: float
    b: Callable
    sigma: Callable
    g: Callable
    h: Callable
    u_lo: float
    u_hi: float
    x_lo: float
    x_hi: float
    sigma_control_free: bool | None = None
    tau_free: bool | None = None
    lipschitz_L: float | None = None
    default_controls: int | None = None

    def __post_init__(self):
        if self.horizon <= 0:
            raise UsageError(f"horizon must be positive, got {self.horizon}")
        if self.u_lo > self.u_hi:
            raise UsageError(f"empty control interval [{self.u_lo}, {self.u_hi}]")
        if self.x_lo >= self.x_hi:
            raise UsageError(f"bad state bounds [{self.x_lo}, {self.x_hi}]")
        self._spot_check_finiteness()
        if self.sigma_control_free is None:
            object.__setattr__(self, "sigma_control_free", self._probe_sigma_control_free())
        if self.tau_free is None:
            object.__setattr__(self, "tau_free", self._probe_tau_free())

    # -- probes -------------------------------------------------------------

    def _spot_check_finiteness(self):
        ts, xs, us = _probe_points(self)
        tt, xx, uu = np.meshgrid(ts, xs, us, indexing="ij")
        for label, vals in (
            ("b", self.b(tt, xx, uu)),
            ("sigma", self.sigma(tt, xx, uu)),
            ("g", self.g(0.0, tt, xx, uu, 0.0, 0.0)),
            ("h", self.h(0.0, xx)),
        ):
            if not np.all(np.isfinite(vals)):
                raise UsageError(f"coefficient {label} is non-finite on the probe grid")

    def _probe_sigma_control_free(self) -> bool:
        ts, xs, us = _probe_points(self)
        tt, xx = np.meshgrid(ts, xs, indexing="ij")
        base = np.asarray(self.sigma(tt, xx, us[0]), dtype=float)
        for u in us[1:]:
            if not np.array_equal(base, np.asarray(self.sigma(tt, xx, u), dtype=float)):
                return False
        return True

    def _probe_tau_free(self) -> bool:
        ts, xs, us = _probe_points(self)
        tt, xx, uu = np.meshgrid(ts, xs, us, indexing="ij")
        taus = np.array([0.0, 0.37 * self.horizon, 0.81 * self.horizon])
        g0 = np.asarray(self.g(taus[0], tt, xx, uu, 0.7, -0.3), dtype=float)
        h0 = np.asarray(self.h(taus[0], xx), dtype=float)
        for tau in taus[1:]:
            if not np.allclose(self.g(tau, tt, xx, uu, 0.7, -0.3), g0, rtol=0, atol=1e-14):
                return False
            if not np.allclose(self.h(tau, xx), h0, rtol=0, atol=1e-14):
                return False
        return True

    # -- helpers ------------------------------------------------------------

    def control_grid(self, count: int = 65) -> np.ndarray:
        if count < 1:
            raise UsageError(f"control count must be >= 1, got {count}")
        if self.u_lo == self.u_hi:
            return np.array([self.u_lo])
        return np.linspace(self.u_lo, self.u_hi, count)


@dataclass(frozen=True)
class HamiltonianArgs:
    """Argument bundle for the Hamiltonian; u may be a scalar or an array."""

    tau: float
    t: float
    x: float
    u: object
    theta: float
    p: float
    P: float


def hamiltonian(spec: ProblemSpec, args: HamiltonianArgs) -> np.ndarray:
    """Hamiltonian a*P + b*p + g(tau, t, x, u, theta, p*sigma).

    Vectorizes over args.u when it is an array of candidate controls; the
    z-slot of g is fed p*sigma(t, x, u). Raises on non-finite coefficient
    values, naming the offending coefficient.
    """
    u = np.asarray(args.u, dtype=float)
    sig = np.asarray(spec.sigma(args.t, args.x, u), dtype=float)
    bb = np.asarray(spec.b(args.t, args.x, u), dtype=float)
    if not np.all(np.isfinite(sig)):
        raise UsageError(f"sigma non-finite at t={args.t}, x={args.x}")
    if not np.all(np.isfinite(bb)):
        raise UsageError(f"b non-finite at t={args.t}, x={args.x}")
    a = 0.5 * sig * sig
    gg = np.asarray(
        spec.g(args.tau, args.t, args.x, u, args.theta, args.p * sig), dtype=float
    )
    if not np.all(np.isfinite(gg)):
        raise UsageError(f"g non-finite at t={args.t}, x={args.x}")
    return a * args.P + bb * args.p + gg


def psi_argmin(
    spec: ProblemSpec,
    tau: float,
    t: float,
    x: float,
    theta: float,
    p: float,
    P: float,
    control_grid,
) -> float:
    """Pointwise minimizer of the Hamiltonian over a finite control grid.

    Ties are broken toward the smallest control value, which makes the
    selection deterministic.
    """
    grid = np.asarray(control_grid, dtype=float)
    if grid.size == 0:
        raise UsageError("empty control grid")
    hvals = hamiltonian(spec, HamiltonianArgs(tau, t, x, grid, theta, p, P))
    m = hvals.min()
    return float(grid[hvals == m].min())


def detect_generator_structure(spec: ProblemSpec) -> tuple:
    """Classify g as ('g-free-of-yz', 0.0) or ('y-linear', slope).

    Probes g at distinct (y, z) values over a coarse (tau, t, x, u) sample.
    Any z-dependence, y-nonlinearity, or non-constant y-slope raises
    UnsupportedProblemError: those generators have no analytically
    integrable Monte-Carlo form and must be validated through the PDE
    representation instead.
    """
    ts, xs, us = _probe_points(spec)
    tt, xx, uu = np.meshgrid(ts, xs, us, indexing="ij")
    taus = (0.0, 0.43 * spec.horizon)
    scale = 0.0
    slopes = []
    for tau in taus:
        g00 = np.asarray(spec.g(tau, tt, xx, uu, 0.0, 0.0), dtype=float)
        scale = max(scale, float(np.max(np.abs(g00))), 1.0)
        for z in (1.0, -2.0):
            gz = np.asarray(spec.g(tau, tt, xx, uu, 0.0, z), dtype=float)
            if np.max(np.abs(gz - g00)) > 1e-12 * scale:
                raise UnsupportedProblemError(
                    "generator depends on z; Monte-Carlo estimation supports only "
                    "z-free generators — use the PDE representation instead"
                )
        g1 = np.asarray(spec.g(tau, tt, xx, uu, 1.0, 0.0), dtype=float)
        g2 = np.asarray(spec.g(tau, tt, xx, uu, 2.0, 0.0), dtype=float)
        d1 = g1 - g00
        d2 = g2 - g1
        if np.max(np.abs(d2 - d1)) > 1e-10 * scale:
            raise UnsupportedProblemError(
                "generator is nonlinear in y; Monte-Carlo estimation supports only "
                "y-linear generators — use the PDE representation instead"
            )
        if np.max(d1) - np.min(d1) > 1e-10 * scale:
            raise UnsupportedProblemError(
                "generator y-slope varies with (t, x, u); unsupported for "
                "Monte-Carlo estimation"
            )
        slopes.append(float(np.mean(d1)))
    if abs(slopes[0] - slopes[1]) > 1e-10 * scale:
        # slope differing across tau would break the explicit linear-BSDE solution
        raise UnsupportedProblemError("generator y-slope varies with tau; unsupported")
    lam = slopes[0]
    if abs(lam) <= 1e-12 * scale:
        return ("g-free-of-yz", 0.0)
    return ("y-linear", lam)


def coefficient_bounds(spec: ProblemSpec, grid, control_grid) -> tuple:
    """(a_max, |b|_max, |g_y|_max) over the grid x control-grid x sampled times.

    Used by the CFL stability bound. g_y is probed by differencing g in y.
    """
    xs = grid.xs
    u = np.asarray(control_grid, dtype=float)
    ts = grid.ts[:: max(1, grid.nt // 8)]
    a_max = 0.0
    b_max = 0.0
    gy_max = 0.0
    for t in ts:
        sig = np.asarray(spec.sigma(t, xs[:, None], u[None, :]), dtype=float)
        bb = np.asarray(spec.b(t, xs[:, None], u[None, :]), dtype=float)
        a_max = max(a_max, float(np.max(0.5 * sig * sig)))
        b_max = max(b_max, float(np.max(np.abs(bb))))
        for tau in (0.0, 0.5 * spec.horizon):
            g0 = np.asarray(spec.g(tau, t, xs[:, None], u[None, :], 0.0, 0.0), dtype=float)
            g1 = np.asarray(spec.g(tau, t, xs[:, None], u[None, :], 1.0, 0.0), dtype=float)
            gm = np.asarray(spec.g(tau, t, xs[:, None], u[None, :], -1.0, 0.0), dtype=float)
            gy_max = max(
                gy_max,
                float(np.max(np.abs(g1 - g0))),
                float(np.max(np.abs(g0 - gm))),
            )
    return a_max, b_max, gy_max
