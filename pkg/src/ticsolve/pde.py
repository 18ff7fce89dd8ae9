"""Backward finite-difference solvers for the HJB and representation PDEs.

Both equations are stepped with explicit backward Euler (default) on a
monotone stencil: centered second differences for the diffusion term and a
hybrid drift stencil — central where |b| dx <= 2a (still monotone there,
second-order), first-order upwind by the sign of b elsewhere. The z-slot of
the generator is fed p_sel * sigma with p_sel the stencil-selected gradient.

A semi-implicit variant treats the diffusion term implicitly (tridiagonal
solve) and relaxes the CFL bound to the drift/generator part.

Boundary handling: ``linear-extrapolation`` imposes zero curvature at the
edge nodes (accurate for near-linear far-field solutions, the default);
``neumann`` mirrors the edge (zero gradient), which keeps the scheme
monotone at the boundary as well — use it for comparison-principle work.

The same arithmetic expression a*d2 + b*p_sel + g drives both the argmin
update and the frozen-strategy update (see kernels/), so a representation
solve under the argmin strategy reproduces the HJB solve bit for bit. The
cascade and the consistency checks rely on that.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import BlowupError, CflViolationError, UsageError
from .grids import Field2D, Grid
from .problem import ProblemSpec, coefficient_bounds

__all__ = [
    "SchemeConfig",
    "hjb_backward_solve",
    "representation_solve",
    "verification_gap",
    "VerificationReport",
    "cfl_dt_max",
    "stable_nt",
]

_STEPPERS = ("explicit-upwind", "semi-implicit-diffusion")
_BOUNDARIES = ("linear-extrapolation", "neumann")


@dataclass(frozen=True)
class SchemeConfig:
    stepper: str = "explicit-upwind"
    cfl_safety: float = 0.9
    control_points: int = 65
    boundary: str = "linear-extrapolation"

    def __post_init__(self):
        if self.stepper not in _STEPPERS:
            raise UsageError(f"stepper must be one of {_STEPPERS}, got {self.stepper!r}")
        if not (0 < self.cfl_safety <= 1):
            raise UsageError(f"cfl_safety must lie in (0, 1], got {self.cfl_safety}")
        if self.control_points < 1:
            raise UsageError("control_points must be >= 1")
        if self.boundary not in _BOUNDARIES:
            raise UsageError(f"boundary must be one of {_BOUNDARIES}, got {self.boundary!r}")


# ---------------------------------------------------------------------------
# stability

def cfl_dt_max(spec: ProblemSpec, grid: Grid, scheme: SchemeConfig, control_grid) -> float:
    """Largest stable dt for the configured stepper on this grid."""
    a_max, b_max, gy_max = coefficient_bounds(spec, grid, control_grid)
    dx = grid.dx
    if scheme.stepper == "explicit-upwind":
        denom = 2.0 * a_max + b_max * dx + dx * dx * gy_max
    else:  # diffusion handled implicitly
        denom = b_max * dx + dx * dx * gy_max
    if denom <= 0:
        return math.inf
    return scheme.cfl_safety * dx * dx / denom


def stable_nt(spec: ProblemSpec, grid: Grid, scheme: SchemeConfig, control_grid) -> int:
    """Smallest nt satisfying the CFL bound on this grid's spatial spacing."""
    dt_max = cfl_dt_max(spec, grid, scheme, control_grid)
    if math.isinf(dt_max):
        return max(grid.nt, 1)
    return max(1, int(math.ceil(grid.horizon / dt_max - 1e-12)))


def _check_cfl(spec, grid, scheme, control_grid):
    dt_max = cfl_dt_max(spec, grid, scheme, control_grid)
    if grid.dt > dt_max * (1 + 1e-12):
        raise CflViolationError(
            grid.dt, dt_max, int(math.ceil(grid.horizon / dt_max - 1e-12))
        )


# ---------------------------------------------------------------------------
# stencils

def _diffs(v: np.ndarray, dx: float, neumann: bool):
    """Forward/backward/central first differences and second difference.

    v is (m, nx); boundary columns encode the boundary condition exactly:
    linear extrapolation sets d2 = 0 and all gradients to the one-sided
    slope; neumann mirrors the edge node.
    """
    dp = np.empty_like(v)
    dm = np.empty_like(v)
    dc = np.empty_like(v)
    d2 = np.empty_like(v)
    dp[:, :-1] = (v[:, 1:] - v[:, :-1]) / dx
    dm[:, 1:] = dp[:, :-1]
    dc[:, 1:-1] = (v[:, 2:] - v[:, :-2]) / (2 * dx)
    d2[:, 1:-1] = (v[:, 2:] - 2 * v[:, 1:-1] + v[:, :-2]) / (dx * dx)
    if neumann:
        edge_l = (v[:, 1] - v[:, 0]) / dx
        edge_r = (v[:, -1] - v[:, -2]) / dx
        dp[:, -1] = -edge_r
        dm[:, 0] = -edge_l
        dc[:, 0] = 0.0
        dc[:, -1] = 0.0
        d2[:, 0] = 2 * edge_l / dx
        d2[:, -1] = -2 * edge_r / dx
    else:
        edge_l = (v[:, 1] - v[:, 0]) / dx
        edge_r = (v[:, -1] - v[:, -2]) / dx
        dp[:, -1] = edge_r
        dm[:, 0] = edge_l
        dc[:, 0] = edge_l
        dc[:, -1] = edge_r
        d2[:, 0] = 0.0
        d2[:, -1] = 0.0
    return dp, dm, dc, d2


def _select_gradient(b, dp, dm, dc, a, dx):
    """Hybrid stencil: central where |b| dx <= 2a, else upwind by sign(b)."""
    central_ok = np.abs(b) * dx <= 2.0 * a
    return np.where(central_ok, dc, np.where(b >= 0, dp, dm))


def _control_tables(spec, tau, t, row, xs, dx, U, neumann):
    """Hamiltonian ingredient tables over every control candidate.

    Returns (a2d, b2d, g2d, psel, d2) with the 2-D tables shaped (nx, nu).
    """
    dp, dm, dc, d2 = _diffs(row[None, :], dx, neumann)
    dp, dm, dc, d2 = dp[0], dm[0], dc[0], d2[0]
    xcol = xs[:, None]
    urow = U[None, :]
    shape = (xs.size, U.size)

    def full(x):
        return np.ascontiguousarray(np.broadcast_to(np.asarray(x, dtype=float), shape))

    sig = full(spec.sigma(t, xcol, urow))
    b2d = full(spec.b(t, xcol, urow))
    a2d = 0.5 * sig * sig
    psel = _select_gradient(b2d, dp[:, None], dm[:, None], dc[:, None], a2d, dx)
    z2d = psel * sig
    g2d = full(spec.g(tau, t, xcol, urow, row[:, None], z2d))
    return a2d, b2d, g2d, np.ascontiguousarray(psel), d2


def _frozen_tables(spec, taus, t, values, u_row, xs, dx, neumann):
    """Per-slice coefficient tables under a frozen control row.

    values is (m, nx) for m tau-slices advancing together; taus is (m,).
    Returns (a, b, g, psel, d2) all shaped (m, nx).
    """
    m, nx = values.shape
    dp, dm, dc, d2 = _diffs(values, dx, neumann)
    sig = np.broadcast_to(np.asarray(spec.sigma(t, xs, u_row), dtype=float), (nx,))
    b1 = np.broadcast_to(np.asarray(spec.b(t, xs, u_row), dtype=float), (nx,))
    a1 = 0.5 * sig * sig
    psel = _select_gradient(
        np.broadcast_to(b1, (m, nx)), dp, dm, dc, np.broadcast_to(a1, (m, nx)), dx
    )
    z = psel * sig[None, :]
    g = np.ascontiguousarray(
        np.broadcast_to(
            np.asarray(
                spec.g(np.asarray(taus)[:, None], t, xs[None, :], u_row[None, :], values, z),
                dtype=float,
            ),
            (m, nx),
        )
    )
    a = np.ascontiguousarray(np.broadcast_to(a1, (m, nx)))
    b = np.ascontiguousarray(np.broadcast_to(b1, (m, nx)))
    return a, b, g, np.ascontiguousarray(psel), np.ascontiguousarray(d2)


def _implicit_diffusion(values, a_sel, dt, dx, neumann):
    """Solve (I - dt a D2) new = values row-block; a_sel is (m, nx)."""
    m, nx = values.shape
    out = np.empty_like(values)
    for k in range(m):
        c = dt * a_sel[k] / (dx * dx)
        lower = -c.copy()
        upper = -c.copy()
        diag = 1.0 + 2.0 * c
        if neumann:
            upper[0] = -2.0 * c[0]
            lower[-1] = -2.0 * c[-1]
        else:
            diag[0] = 1.0
            upper[0] = 0.0
            diag[-1] = 1.0
            lower[-1] = 0.0
        out[k] = kernels.thomas(lower, diag, upper, values[k])
    return out


def _raise_blowup(row, grid, i_level):
    bad = np.flatnonzero(~np.isfinite(row))
    raise BlowupError(float(grid.ts[i_level]), float(grid.xs[bad[0]]))


# ---------------------------------------------------------------------------
# solvers

def _argmin_step(spec, tau, t, row, grid, scheme, U, dt):
    """One backward step with pointwise argmin; returns (new_row, u_values)."""
    neumann = scheme.boundary == "neumann"
    a2d, b2d, g2d, psel, d2 = _control_tables(
        spec, tau, t, row, grid.xs, grid.dx, U, neumann
    )
    if scheme.stepper == "explicit-upwind":
        new_row, jmin = kernels.hjb_step(row, d2, a2d, b2d, g2d, psel, dt)
        return new_row, U[jmin]
    # semi-implicit: argmin over the full Hamiltonian, diffusion implicit
    _, jmin = kernels.hjb_step(row, d2, a2d, b2d, g2d, psel, 0.0)
    rows = np.arange(row.size)
    b_sel = b2d[rows, jmin]
    g_sel = g2d[rows, jmin]
    p_sel = psel[rows, jmin]
    a_sel = a2d[rows, jmin]
    explicit = row + dt * (b_sel * p_sel + g_sel)
    new_row = _implicit_diffusion(
        explicit[None, :], a_sel[None, :], dt, grid.dx, neumann
    )[0]
    return new_row, U[jmin]


def advance_frozen(spec, taus, t, values, u_row, grid, scheme, dt):
    """Advance m tau-slices one step under a shared frozen control row."""
    neumann = scheme.boundary == "neumann"
    a, b, g, psel, d2 = _frozen_tables(
        spec, taus, t, values, u_row, grid.xs, grid.dx, neumann
    )
    if scheme.stepper == "explicit-upwind":
        return kernels.frozen_step(values, d2, a, b, g, psel, dt)
    explicit = values + dt * (b * psel + g)
    return _implicit_diffusion(explicit, a, dt, grid.dx, neumann)


def hjb_backward_solve(spec: ProblemSpec, tau: float, window, terminal, grid: Grid,
                       scheme: SchemeConfig, control_grid=None):
    """Solve the HJB equation backward on window = (t_a, t_b).

    Returns (value, strategy) as Field2D objects covering the window; the
    returned terminal row is the input profile bit for bit, and the strategy
    at each level is the grid argmin used to step from that level.
    """
    t_a, t_b = window
    if not (0 <= t_a < t_b <= grid.horizon + 1e-12):
        raise UsageError(f"bad window [{t_a}, {t_b}]")
    U = spec.control_grid(scheme.control_points) if control_grid is None \
        else np.asarray(control_grid, dtype=float)
    if U.size == 0:
        raise UsageError("empty control grid")
    _check_cfl(spec, grid, scheme, U)
    i_a, i_b = grid.time_index(t_a), grid.time_index(t_b)
    terminal = np.asarray(terminal, dtype=float)
    if terminal.shape != (grid.nx,):
        raise UsageError(f"terminal profile must have shape ({grid.nx},)")

    values = np.empty((i_b - i_a + 1, grid.nx))
    controls = np.empty_like(values)
    values[-1] = terminal
    dt = grid.dt
    for i in range(i_b, i_a, -1):
        row = values[i - i_a]
        new_row, u_vals = _argmin_step(spec, tau, grid.ts[i], row, grid, scheme, U, dt)
        controls[i - i_a] = u_vals
        if not np.all(np.isfinite(new_row)):
            _raise_blowup(new_row, grid, i - 1)
        values[i - 1 - i_a] = new_row
    # strategy at the window start (argmin of the final row, no update)
    _, u_vals = _argmin_step(spec, tau, grid.ts[i_a], values[0], grid, scheme, U, 0.0)
    controls[0] = u_vals
    return Field2D(grid, i_a, values), Field2D(grid, i_a, controls)


def representation_solve(spec: ProblemSpec, tau: float, strategy: Field2D, window,
                         terminal, grid: Grid, scheme: SchemeConfig):
    """Solve the linear/semilinear PDE under a frozen strategy field.

    The strategy must cover the window and take values inside [u_lo, u_hi].
    Stepping from level i uses the strategy row at level i, mirroring the
    argmin solver; feeding the argmin strategy back in reproduces the HJB
    values exactly.
    """
    t_a, t_b = window
    if not (0 <= t_a < t_b <= grid.horizon + 1e-12):
        raise UsageError(f"bad window [{t_a}, {t_b}]")
    i_a, i_b = grid.time_index(t_a), grid.time_index(t_b)
    if strategy.i_start > i_a or strategy.i_stop < i_b:
        raise UsageError("strategy field does not cover the window")
    tol = 1e-12 * max(1.0, abs(spec.u_lo), abs(spec.u_hi))
    svals = strategy.values
    if np.min(svals) < spec.u_lo - tol or np.max(svals) > spec.u_hi + tol:
        raise UsageError("strategy takes values outside the control interval")
    U = spec.control_grid(scheme.control_points)
    _check_cfl(spec, grid, scheme, U)
    terminal = np.asarray(terminal, dtype=float)
    if terminal.shape != (grid.nx,):
        raise UsageError(f"terminal profile must have shape ({grid.nx},)")

    values = np.empty((i_b - i_a + 1, grid.nx))
    values[-1] = terminal
    dt = grid.dt
    taus = np.array([tau])
    for i in range(i_b, i_a, -1):
        row = values[i - i_a]
        new_row = advance_frozen(
            spec, taus, grid.ts[i], row[None, :], strategy.row(i), grid, scheme, dt
        )[0]
        if not np.all(np.isfinite(new_row)):
            _raise_blowup(new_row, grid, i - 1)
        values[i - 1 - i_a] = new_row
    return Field2D(grid, i_a, values)


# ---------------------------------------------------------------------------
# a-posteriori verification

@dataclass
class VerificationReport:
    """Pointwise optimality gap and PDE residual for a (value, strategy) pair.

    argmin_gap is max(0, H(strategy) - min_u H(u)) — identically zero for
    the solver's own strategy. pde_residual is the central-time-difference
    residual of the HJB equation (one-sided at the window ends), which for a
    solver output is pure truncation error.
    """

    argmin_gap: Field2D
    pde_residual: Field2D

    @property
    def total(self) -> Field2D:
        return Field2D(
            self.argmin_gap.grid,
            self.argmin_gap.i_start,
            self.argmin_gap.values + np.abs(self.pde_residual.values),
        )


def verification_gap(spec: ProblemSpec, tau: float, value: Field2D,
                     strategy: Field2D, scheme: SchemeConfig | None = None,
                     control_grid=None) -> VerificationReport:
    scheme = scheme or SchemeConfig()
    U = spec.control_grid(scheme.control_points) if control_grid is None \
        else np.asarray(control_grid, dtype=float)
    if U.size == 0:
        raise UsageError("empty control grid")
    grid = value.grid
    if strategy.i_start != value.i_start or strategy.n_rows != value.n_rows:
        raise UsageError("value and strategy fields must be aligned")
    neumann = scheme.boundary == "neumann"
    n_rows = value.n_rows
    gap = np.empty_like(value.values)
    h_sel = np.empty_like(value.values)
    taus = np.array([tau])
    for i in range(n_rows):
        t = grid.ts[value.i_start + i]
        row = value.values[i]
        a2d, b2d, g2d, psel, d2 = _control_tables(
            spec, tau, t, row, grid.xs, grid.dx, U, neumann
        )
        ham = a2d * d2[:, None] + b2d * psel + g2d
        hmin = ham.min(axis=1)
        a, b, g, ps, d2f = _frozen_tables(
            spec, taus, t, row[None, :], strategy.values[i], grid.xs, grid.dx, neumann
        )
        hs = (a * d2f + b * ps + g)[0]
        h_sel[i] = hs
        gap[i] = np.maximum(0.0, hs - hmin)
    resid = np.empty_like(value.values)
    dt = grid.dt
    v = value.values
    if n_rows >= 3:
        resid[1:-1] = (v[2:] - v[:-2]) / (2 * dt) + h_sel[1:-1]
    if n_rows >= 2:
        resid[0] = (v[1] - v[0]) / dt + h_sel[0]
        resid[-1] = (v[-1] - v[-2]) / dt + h_sel[-1]
    else:
        resid[0] = h_sel[0]
    return VerificationReport(
        Field2D(grid, value.i_start, gap), Field2D(grid, value.i_start, resid)
    )
