"""Built-in benchmark problems.

Three named presets:

* ``exp-discount-lq`` — linear-quadratic regulator with exponential
  discounting expressed through the generator (g = -lam*y + q*x^2 + r*u^2).
  The value function has a closed Riccati form, so it anchors oracle tests.
  tau never appears: the problem is time-consistent.
* ``two-rate-discount`` — quadratic costs discounted at two different rates,
  rate lam1 on the terminal cost and lam2 on the running cost, both measured
  from the initial time tau. The rate mismatch makes the problem genuinely
  time-inconsistent: solving it on finer partitions changes the value.
* ``tau-free`` — the lam = 0 LQ case; V(t,x) = x^2 + sigma^2 (T - t) exactly
  (u* = -x), handy as a machine-checkable analytic anchor.
"""
from __future__ import annotations

import numpy as np

from .errors import UsageError
from .problem import ProblemSpec

__all__ = ["get_preset", "preset_names", "exp_discount_lq", "two_rate_discount", "tau_free_lq"]


def exp_discount_lq(lam: float = 0.1, q: float = 1.0, r: float = 1.0,
                    g_term: float = 1.0, sigma: float = 0.3) -> ProblemSpec:
    def b(t, x, u):
        return u + 0.0 * x

    def sig(t, x, u):
        return sigma + 0.0 * x + 0.0 * u

    def g(tau, t, x, u, y, z):
        return -lam * y + q * x * x + r * u * u

    def h(tau, x):
        return g_term * x * x

    return ProblemSpec(
        name="exp-discount-lq",
        horizon=1.0,
        b=b,
        sigma=sig,
        g=g,
        h=h,
        u_lo=-3.0,
        u_hi=3.0,
        x_lo=-4.0,
        x_hi=4.0,
        lipschitz_L=10.0,
    )


def two_rate_discount(lam1: float = 0.5, lam2: float = 0.05,
                      sigma: float = 0.4) -> ProblemSpec:
    T = 1.0

    def b(t, x, u):
        return u + 0.0 * x

    def sig(t, x, u):
        return sigma + 0.0 * x + 0.0 * u

    def g(tau, t, x, u, y, z):
        return np.exp(-lam2 * (t - tau)) * (0.5 * u * u + 0.5 * x * x) + 0.0 * y

    def h(tau, x):
        return np.exp(-lam1 * (T - tau)) * x * x

    return ProblemSpec(
        name="two-rate-discount",
        horizon=T,
        b=b,
        sigma=sig,
        g=g,
        h=h,
        u_lo=-5.0,
        u_hi=5.0,
        x_lo=-6.0,
        x_hi=6.0,
        lipschitz_L=12.0,
    )


def tau_free_lq(sigma: float = 0.3) -> ProblemSpec:
    def b(t, x, u):
        return u + 0.0 * x

    def sig(t, x, u):
        return sigma + 0.0 * x + 0.0 * u

    def g(tau, t, x, u, y, z):
        return x * x + u * u + 0.0 * y

    def h(tau, x):
        return x * x

    return ProblemSpec(
        name="tau-free",
        horizon=1.0,
        b=b,
        sigma=sig,
        g=g,
        h=h,
        u_lo=-4.0,
        u_hi=4.0,
        x_lo=-4.0,
        x_hi=4.0,
        lipschitz_L=10.0,
    )


_BUILDERS = {
    "exp-discount-lq": exp_discount_lq,
    "two-rate-discount": two_rate_discount,
    "tau-free": tau_free_lq,
}


def preset_names() -> list:
    return sorted(_BUILDERS)


def get_preset(name: str, **overrides) -> ProblemSpec:
    """Build a preset by name; keyword overrides reach the builder."""
    if name not in _BUILDERS:
        raise UsageError(
            f"unknown preset {name!r}; available: {', '.join(preset_names())}"
        )
    return _BUILDERS[name](**overrides)
