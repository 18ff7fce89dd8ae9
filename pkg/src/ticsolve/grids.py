"""Grids, partitions of [0,T], and tabulated value fields.

The state space is a truncated interval [x_lo, x_hi] with uniform spacing;
time runs on a uniform grid of nt steps over [0, T]. Triangular fields
(tau-indexed families of backward solutions) are stored as ragged lists of
per-tau slices, each covering exactly [tau, T].
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import UsageError

__all__ = [
    "Grid",
    "Partition",
    "Field2D",
    "Field3D",
    "ell_pi",
    "derivatives",
    "gradient_rows",
    "curvature_rows",
    "inner_slice",
]


@dataclass(frozen=True)
class Grid:
    """Uniform space-time grid on [x_lo, x_hi] x [0, horizon].

    Parameters
    ----------
    x_lo, x_hi : float
        State-space truncation bounds, x_lo < x_hi.
    nx : int
        Number of spatial nodes (>= 3).
    horizon : float
        Final time T > 0.
    nt : int
        Number of time steps; the grid has nt + 1 time levels.
    """

    x_lo: float
    x_hi: float
    nx: int
    horizon: float
    nt: int

    def __post_init__(self):
        if not self.x_lo < self.x_hi:
            raise UsageError(f"need x_lo < x_hi, got [{self.x_lo}, {self.x_hi}]")
        if self.nx < 3:
            raise UsageError(f"nx must be >= 3, got {self.nx}")
        if self.horizon <= 0:
            raise UsageError(f"horizon must be positive, got {self.horizon}")
        if self.nt < 1:
            raise UsageError(f"nt must be >= 1, got {self.nt}")

    @property
    def dx(self) -> float:
        return (self.x_hi - self.x_lo) / (self.nx - 1)

    @property
    def dt(self) -> float:
        return self.horizon / self.nt

    @cached_property
    def xs(self) -> np.ndarray:
        return np.linspace(self.x_lo, self.x_hi, self.nx)

    @cached_property
    def ts(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.nt + 1)

    def time_index(self, t: float) -> int:
        """Nearest time-level index for t; raises if t is off-grid by > dt/2."""
        i = int(round(t / self.dt))
        if i < 0 or i > self.nt or abs(self.ts[min(max(i, 0), self.nt)] - t) > 0.5 * self.dt * (1 + 1e-9):
            raise UsageError(f"time {t} does not lie on the grid (dt={self.dt:.6g})")
        return i


@dataclass(frozen=True)
class Partition:
    """A partition 0 = t_0 < t_1 < ... < t_N = T of the horizon."""

    knots: tuple

    def __post_init__(self):
        k = np.asarray(self.knots, dtype=float)
        if k.size < 2:
            raise UsageError("a partition needs at least two knots")
        if k[0] != 0.0:
            raise UsageError(f"first knot must be 0, got {k[0]}")
        if np.any(np.diff(k) <= 0):
            raise UsageError("partition knots must be strictly increasing")
        object.__setattr__(self, "knots", tuple(float(v) for v in k))

    @classmethod
    def uniform(cls, n: int, horizon: float) -> "Partition":
        if n < 1:
            raise UsageError(f"need at least one interval, got {n}")
        return cls(tuple(np.linspace(0.0, horizon, n + 1)))

    @classmethod
    def geometric(cls, n: int, ratio: float, horizon: float) -> "Partition":
        """n intervals with successive lengths in ratio `ratio` (> 0)."""
        if n < 1:
            raise UsageError(f"need at least one interval, got {n}")
        if ratio <= 0:
            raise UsageError(f"geometric ratio must be positive, got {ratio}")
        lengths = ratio ** np.arange(n)
        lengths *= horizon / lengths.sum()
        knots = np.concatenate([[0.0], np.cumsum(lengths)])
        knots[-1] = horizon  # kill accumulation error in the last knot
        return cls(tuple(knots))

    @property
    def horizon(self) -> float:
        return self.knots[-1]

    @property
    def n_intervals(self) -> int:
        return len(self.knots) - 1

    @property
    def mesh(self) -> float:
        return float(np.max(np.diff(self.knots)))

    def snapped(self, grid: Grid) -> "Partition":
        """Snap every knot to the nearest grid time level.

        Raises UsageError when a knot is farther than dt/2 from any level or
        two knots collapse onto the same level.
        """
        if abs(self.horizon - grid.horizon) > 1e-12 * max(1.0, grid.horizon):
            raise UsageError(
                f"partition horizon {self.horizon} != grid horizon {grid.horizon}"
            )
        idx = np.rint(np.asarray(self.knots) / grid.dt).astype(int)
        snapped = grid.ts[np.clip(idx, 0, grid.nt)]
        err = np.abs(snapped - np.asarray(self.knots))
        if np.any(err > 0.5 * grid.dt * (1 + 1e-9)):
            worst = int(np.argmax(err))
            raise UsageError(
                f"knot {self.knots[worst]} is {err[worst]:.3g} from the nearest "
                f"time level; refine nt so knots align (dt={grid.dt:.3g})"
            )
        if np.any(np.diff(idx) <= 0):
            raise UsageError("snapping collapsed adjacent knots; refine nt")
        return Partition(tuple(snapped))

    def knot_indices(self, grid: Grid) -> np.ndarray:
        return np.rint(np.asarray(self.knots) / grid.dt).astype(int)


def ell_pi(partition: Partition, s: float) -> float:
    """Left knot of the partition cell containing s.

    Cells are half-open [t_{k-1}, t_k); by the last-interval convention
    ell_pi(T) = t_{N-1}.
    """
    knots = partition.knots
    if s < knots[0] or s > knots[-1]:
        raise UsageError(f"time {s} outside [0, {knots[-1]}]")
    if s >= knots[-1]:
        return knots[-2]
    k = int(np.searchsorted(np.asarray(knots), s, side="right")) - 1
    return knots[k]


# ---------------------------------------------------------------------------
# finite-difference stencils (second order, one-sided at the boundary)

def gradient_rows(values: np.ndarray, dx: float) -> np.ndarray:
    """Row-wise spatial gradient of a (m, nx) table, second order throughout."""
    v = np.atleast_2d(values)
    p = np.empty_like(v)
    p[:, 1:-1] = (v[:, 2:] - v[:, :-2]) / (2 * dx)
    p[:, 0] = (-3 * v[:, 0] + 4 * v[:, 1] - v[:, 2]) / (2 * dx)
    p[:, -1] = (3 * v[:, -1] - 4 * v[:, -2] + v[:, -3]) / (2 * dx)
    return p if values.ndim == 2 else p[0]


def curvature_rows(values: np.ndarray, dx: float) -> np.ndarray:
    """Row-wise second spatial derivative; one-sided second order at edges."""
    v = np.atleast_2d(values)
    q = np.empty_like(v)
    q[:, 1:-1] = (v[:, 2:] - 2 * v[:, 1:-1] + v[:, :-2]) / (dx * dx)
    if v.shape[1] >= 4:
        q[:, 0] = (2 * v[:, 0] - 5 * v[:, 1] + 4 * v[:, 2] - v[:, 3]) / (dx * dx)
        q[:, -1] = (2 * v[:, -1] - 5 * v[:, -2] + 4 * v[:, -3] - v[:, -4]) / (dx * dx)
    else:
        q[:, 0] = (v[:, 0] - 2 * v[:, 1] + v[:, 2]) / (dx * dx)
        q[:, -1] = q[:, 0]
    return q if values.ndim == 2 else q[0]


@dataclass
class Field2D:
    """A real table over a contiguous block of time levels and all of xs.

    values[i, j] is the field at time grid.ts[i_start + i], space grid.xs[j].
    """

    grid: Grid
    i_start: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != self.grid.nx:
            raise UsageError(
                f"field shape {self.values.shape} inconsistent with nx={self.grid.nx}"
            )
        if self.i_start < 0 or self.i_start + self.values.shape[0] - 1 > self.grid.nt:
            raise UsageError("field rows fall outside the time grid")

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def i_stop(self) -> int:
        """Global index of the last time level covered."""
        return self.i_start + self.n_rows - 1

    @property
    def times(self) -> np.ndarray:
        return self.grid.ts[self.i_start : self.i_stop + 1]

    @property
    def time_range(self) -> tuple:
        return (float(self.grid.ts[self.i_start]), float(self.grid.ts[self.i_stop]))

    def row(self, i_global: int) -> np.ndarray:
        """Row at global time index i_global."""
        i = i_global - self.i_start
        if i < 0 or i >= self.n_rows:
            raise UsageError(f"time level {i_global} outside field range")
        return self.values[i]

    def gradient(self) -> np.ndarray:
        return gradient_rows(self.values, self.grid.dx)

    def interp(self, t: float, x) -> np.ndarray:
        """Bilinear interpolation; x may be an array. Clamps to the table."""
        ts = self.times
        tt = min(max(t, ts[0]), ts[-1])
        s = (tt - ts[0]) / self.grid.dt
        i0 = min(int(s), self.n_rows - 1)
        i1 = min(i0 + 1, self.n_rows - 1)
        w = s - i0
        xc = np.clip(x, self.grid.x_lo, self.grid.x_hi)
        lo = np.interp(xc, self.grid.xs, self.values[i0])
        hi = np.interp(xc, self.grid.xs, self.values[i1])
        return (1 - w) * lo + w * hi

    def to_csv(self, path, meta: dict | None = None) -> None:
        """Write the table as CSV (header: t, then x values) plus a JSON sidecar."""
        path = Path(path)
        with open(path, "w") as f:
            f.write("t," + ",".join(repr(float(x)) for x in self.grid.xs) + "\n")
            for t, vals in zip(self.times, self.values):
                f.write(repr(float(t)) + "," + ",".join(repr(float(v)) for v in vals) + "\n")
        sidecar = {
            "grid": {
                "x_lo": self.grid.x_lo,
                "x_hi": self.grid.x_hi,
                "nx": self.grid.nx,
                "horizon": self.grid.horizon,
                "nt": self.grid.nt,
            },
            "time_range": list(self.time_range),
        }
        if meta:
            sidecar.update(meta)
        with open(path.with_suffix(path.suffix + ".json"), "w") as f:
            json.dump(sidecar, f, indent=2, sort_keys=True)
            f.write("\n")


def derivatives(field: Field2D, t_index: int, x_index: int) -> tuple:
    """(value, gradient, curvature) at one node of a Field2D.

    t_index counts rows of the field (0 = first stored level). Central
    second-order stencils in the interior, one-sided second-order at the
    spatial boundary; exact for quadratics on a uniform grid.
    """
    v = field.values
    if not (0 <= t_index < v.shape[0]) or not (0 <= x_index < v.shape[1]):
        raise UsageError("index outside the field")
    row = v[t_index]
    p = gradient_rows(row, field.grid.dx)
    q = curvature_rows(row, field.grid.dx)
    return float(row[x_index]), float(p[x_index]), float(q[x_index])


@dataclass
class Field3D:
    """Ragged family of tau-slices; slice j covers [ts[tau_indices[j]], T]."""

    grid: Grid
    tau_indices: tuple
    slices: list

    def __post_init__(self):
        if len(self.tau_indices) != len(self.slices):
            raise UsageError("one slice per tau knot required")
        if list(self.tau_indices) != sorted(set(self.tau_indices)):
            raise UsageError("tau indices must be strictly increasing")
        for idx, sl in zip(self.tau_indices, self.slices):
            if sl.i_start != idx:
                raise UsageError(
                    f"slice for tau index {idx} starts at level {sl.i_start}; "
                    "align tau knots with the time grid"
                )
            if sl.i_stop != self.grid.nt:
                raise UsageError("every tau slice must extend to the final time")

    @property
    def tau_knots(self) -> np.ndarray:
        return self.grid.ts[list(self.tau_indices)]

    def slice_for(self, tau: float) -> Field2D:
        """Slice whose tau-cell contains tau (largest hosted tau <= given)."""
        knots = self.tau_knots
        if tau < knots[0] - 1e-12 or tau > self.grid.horizon + 1e-12:
            raise UsageError(f"tau={tau} outside the hosted range")
        j = int(np.searchsorted(knots, tau + 1e-12)) - 1
        return self.slices[max(j, 0)]

    def diagonal(self) -> Field2D:
        """The restriction t -> field(t, t, .), assembled level by level."""
        i0 = self.tau_indices[0]
        out = np.empty((self.grid.nt - i0 + 1, self.grid.nx))
        taus = np.asarray(self.tau_indices)
        for i in range(i0, self.grid.nt + 1):
            j = int(np.searchsorted(taus, i, side="right")) - 1
            out[i - i0] = self.slices[j].row(i)
        return Field2D(self.grid, i0, out)


def diagonal(field: Field3D) -> Field2D:
    return field.diagonal()


def inner_slice(grid: Grid, fraction: float = 0.5) -> slice:
    """Index slice selecting the middle `fraction` of the spatial nodes."""
    margin = (1.0 - fraction) / 2.0
    lo = int(np.floor(grid.nx * margin))
    hi = grid.nx - lo
    return slice(lo, hi)
