"""Exception hierarchy, mapped onto CLI exit codes.

Exit codes: 0 success, 2 usage/validation, 3 numerical failure,
4 unsupported problem structure.
"""
from __future__ import annotations


class TicSolveError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class UsageError(TicSolveError):
    """Bad arguments, malformed inputs, violated preconditions (exit 2)."""

    exit_code = 2


class NumericalError(TicSolveError):
    """A solve failed numerically (exit 3)."""

    exit_code = 3


class CflViolationError(NumericalError):
    """Explicit step size exceeds the stability bound."""

    def __init__(self, dt: float, dt_max: float, nt_required: int):
        self.dt = dt
        self.dt_max = dt_max
        self.nt_required = nt_required
        super().__init__(
            f"CFL violation: dt={dt:.6g} exceeds stable bound {dt_max:.6g}; "
            f"use nt >= {nt_required}"
        )


class BlowupError(NumericalError):
    """Non-finite value produced during time stepping."""

    def __init__(self, t: float, x: float):
        self.t = t
        self.x = x
        super().__init__(f"non-finite update at t={t:.6g}, x={x:.6g}")


class NonContractionError(NumericalError):
    """Picard iteration failed to contract within max_iter."""

    def __init__(self, distances: list[float], window: tuple[float, float]):
        self.distances = list(distances)
        self.window = window
        seq = ", ".join(f"{d:.3e}" for d in self.distances)
        super().__init__(
            f"fixed-point iteration on window [{window[0]:.6g}, {window[1]:.6g}] "
            f"did not contract; iterate distances: [{seq}]"
        )


class DomainTooSmallError(NumericalError):
    """Quadrature tail mass outside the truncated domain is too large."""

    def __init__(self, tail_mass: float, limit: float = 1e-8):
        self.tail_mass = tail_mass
        self.limit = limit
        super().__init__(
            f"heat-kernel tail mass {tail_mass:.3e} outside the domain exceeds "
            f"{limit:.1e}; enlarge [x_lo, x_hi]"
        )


class UnsupportedProblemError(TicSolveError):
    """Problem structure outside what the requested method supports (exit 4)."""

    exit_code = 4
