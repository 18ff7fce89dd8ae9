"""The N-player partition cascade.

A partition 0 = t_0 < ... < t_N = T of the horizon splits the horizon into
windows, one per player. Player k controls on [t_{k-1}, t_k) and inherits the
later players' play as a fixed continuation. Working backward from player N:

* player k solves an HJB equation on its own window with the initial-time
  argument frozen at tau = t_{k-1}, terminal data Theta^k(t_k, .) — the value
  player k assigns to the continuation (plain terminal cost for player N);
* the stitched strategy on [t_{k-1}, T] is then re-costed from player
  (k-1)'s standpoint (tau = t_{k-2}) by a representation solve over the
  remaining horizon, producing the next terminal data Theta^{k-1}.

The result is a family of value slices (one per player, each covering
[t_{k-1}, T]), a single stitched feedback strategy on [0, T], the piecewise
value function V (storing left limits at the interior knots, with the right
values kept separately), and the jump sizes sup_x |V(t_k-) - V(t_k+)| that
quantify the time-inconsistency. For a problem whose data do not depend on
tau every window reproduces the classical HJB solve bit for bit, so V is
partition-independent and all jumps vanish exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UsageError
from .grids import Field2D, Field3D, Grid, Partition
from .pde import SchemeConfig, hjb_backward_solve, representation_solve
from .problem import ProblemSpec

__all__ = [
    "CascadeSolution",
    "cascade_solve",
    "local_optimality_check",
    "OptimalityReport",
]


@dataclass
class CascadeSolution:
    """Everything the partition game produces.

    Attributes
    ----------
    partition : Partition
        The (grid-snapped) partition actually used.
    value : Field2D
        The piecewise equilibrium value V on [0, T]; at interior knots the
        stored row is the left limit (the exiting player's value).
    strategy : Field2D
        The stitched feedback strategy; at interior knots the row belongs to
        the entering player (windows are half-open on the right).
    theta : Field3D
        Player value slices; slice k lives on [t_{k-1}, T] with tau = t_{k-1}
        and equals the window HJB values followed by the representation tail.
    jumps : numpy.ndarray
        sup_x |V(t_k-) - V(t_k+)| at the interior knots t_1..t_{N-1}.
    right_values : numpy.ndarray
        The entering player's value rows at the interior knots, shape
        (N-1, nx); the left limits are the rows stored in ``value``.
    control_grid : numpy.ndarray
        The control lattice every argmin ran over.
    scheme : SchemeConfig
        The discretization used for every window.
    """

    partition: Partition
    value: Field2D
    strategy: Field2D
    theta: Field3D
    jumps: np.ndarray
    right_values: np.ndarray
    control_grid: np.ndarray
    scheme: SchemeConfig

    @property
    def max_jump(self) -> float:
        """Largest inconsistency jump across interior knots (0 if N = 1)."""
        return float(self.jumps.max(initial=0.0))

    def window_values(self, k: int) -> np.ndarray:
        """Player k's HJB value rows on [t_{k-1}, t_k] (1-based k)."""
        knots = self.partition.knots
        if not 1 <= k <= len(knots) - 1:
            raise UsageError(f"player index {k} outside 1..{len(knots) - 1}")
        grid = self.value.grid
        i_a = grid.time_index(knots[k - 1])
        i_b = grid.time_index(knots[k])
        return self.theta.slice_for(knots[k - 1]).values[: i_b - i_a + 1]


def cascade_solve(spec: ProblemSpec, partition: Partition, grid: Grid,
                  scheme: SchemeConfig | None = None) -> CascadeSolution:
    """Solve the N-player partition game backward, player by player.

    Parameters
    ----------
    spec : ProblemSpec
        Problem data; the generator and terminal cost may depend on tau.
    partition : Partition
        Player windows; knots are snapped to the time grid (raises if a knot
        is ambiguous or two knots collapse onto one level).
    grid : Grid
        Shared space-time grid for every window.
    scheme : SchemeConfig, optional
        Discretization; all windows use the same scheme and control lattice.

    Returns
    -------
    CascadeSolution
    """
    scheme = scheme or SchemeConfig()
    partition = partition.snapped(grid)
    if abs(partition.horizon - grid.horizon) > 1e-12:
        raise UsageError("partition horizon differs from grid horizon")
    knots = partition.knots
    n_players = partition.n_intervals
    idx = [grid.time_index(s) for s in knots]
    U = spec.control_grid(scheme.control_points)

    u_all = np.empty((grid.nt + 1, grid.nx))
    windows = [None] * (n_players + 1)  # 1-based player -> (value, strategy)
    tails = [None] * n_players  # k -> Theta^k on [t_k, T], None for k = N

    for k in range(n_players, 0, -1):
        tau_k = knots[k - 1]
        if k == n_players:
            terminal = np.asarray(spec.h(tau_k, grid.xs), dtype=float)
        else:
            terminal = tails[k].values[0]
        v_k, s_k = hjb_backward_solve(
            spec, tau_k, (knots[k - 1], knots[k]), terminal, grid, scheme,
            control_grid=U,
        )
        windows[k] = (v_k, s_k)
        stop = idx[k] + 1 if k == n_players else idx[k]
        u_all[idx[k - 1]:stop] = s_k.values[: stop - idx[k - 1]]

        if k >= 2:
            tau_prev = knots[k - 2]
            tail = representation_solve(
                spec, tau_prev,
                Field2D(grid, idx[k - 1], u_all[idx[k - 1]:]),
                (knots[k - 1], grid.horizon),
                np.asarray(spec.h(tau_prev, grid.xs), dtype=float),
                grid, scheme,
            )
            tails[k - 1] = tail

    slices = []
    for k in range(1, n_players + 1):
        v_k = windows[k][0]
        if k == n_players:
            vals = v_k.values
        else:
            vals = np.vstack([v_k.values[:-1], tails[k].values])
        slices.append(Field2D(grid, idx[k - 1], vals))
    theta = Field3D(grid, tuple(idx[:-1]), slices)

    v_all = np.empty((grid.nt + 1, grid.nx))
    v_all[0] = windows[1][0].values[0]
    for k in range(1, n_players + 1):
        v_all[idx[k - 1] + 1: idx[k] + 1] = windows[k][0].values[1:]

    jumps = np.empty(n_players - 1)
    right_values = np.empty((n_players - 1, grid.nx))
    for k in range(1, n_players):
        left = windows[k][0].values[-1]
        right = windows[k + 1][0].values[0]
        right_values[k - 1] = right
        jumps[k - 1] = np.abs(left - right).max()

    return CascadeSolution(
        partition=partition,
        value=Field2D(grid, 0, v_all),
        strategy=Field2D(grid, 0, u_all),
        theta=theta,
        jumps=jumps,
        right_values=right_values,
        control_grid=U,
        scheme=scheme,
    )


@dataclass
class OptimalityReport:
    """Worst J - V margin per player over random strategy perturbations.

    A negative entry means some perturbation undercut the stored window value
    at some node. Under the monotone (neumann-boundary) scheme with lattice
    perturbations the margins are nonnegative up to roundoff.
    """

    player_violations: np.ndarray
    n_perturbations: int

    @property
    def worst(self) -> float:
        return float(self.player_violations.min())

    def passed(self, tol: float = 1e-6) -> bool:
        return bool(self.worst >= -tol)


def local_optimality_check(spec: ProblemSpec, solution: CascadeSolution,
                           n_perturbations: int = 20, seed: int = 0,
                           tol: float = 1e-6) -> OptimalityReport:
    """Try to beat each player's window value with perturbed strategies.

    For every player k, the stitched strategy is perturbed on random
    space-time rectangles inside the player's own window (values drawn from
    the solver's control lattice, so the argmin inequality applies exactly),
    re-costed on [t_{k-1}, t_k] with tau = t_{k-1} against the player's own
    continuation data, and compared pointwise with the stored window value.
    """
    grid = solution.value.grid
    scheme = solution.scheme
    U = solution.control_grid
    knots = solution.partition.knots
    n_players = solution.partition.n_intervals
    rng = np.random.default_rng(seed)
    violations = np.full(n_players, np.inf)

    for k in range(1, n_players + 1):
        i_a = grid.time_index(knots[k - 1])
        i_b = grid.time_index(knots[k])
        m = i_b - i_a + 1
        v_window = solution.window_values(k)
        terminal = v_window[-1]
        base = solution.strategy.values[i_a: i_b + 1]
        # rows open to player k: stepping uses rows (i_a, i_b]; at an interior
        # knot the row at t_k belongs to the next player and stays fixed
        hi = m if k == n_players else m - 1
        if hi <= 1:  # single-step window, nothing the player can vary
            violations[k - 1] = 0.0
            continue
        for _ in range(n_perturbations):
            pert = base.copy()
            for _ in range(rng.integers(1, 4)):
                r0 = int(rng.integers(1, hi))
                r1 = int(rng.integers(r0 + 1, hi + 1))
                c0 = int(rng.integers(0, grid.nx - 1))
                c1 = int(rng.integers(c0 + 1, grid.nx + 1))
                pert[r0:r1, c0:c1] = rng.choice(U)
            cost = representation_solve(
                spec, knots[k - 1], Field2D(grid, i_a, pert),
                (knots[k - 1], knots[k]), terminal, grid, scheme,
            )
            margin = float((cost.values - v_window).min())
            violations[k - 1] = min(violations[k - 1], margin)

    return OptimalityReport(violations, n_perturbations)
