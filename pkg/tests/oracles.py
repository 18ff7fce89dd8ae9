"""Independent reference solutions used by the test suite.

Everything here is built from scipy/numpy only and never calls into the
package's solvers, so agreement between the two is meaningful evidence.

Contents
--------
* Riccati oracle for the discounted LQ problem
      minimize E[ int (q X^2 + r u^2 - lam Y) "recursively" + G X_T^2 ]
  i.e. generator g = -lam*y + q x^2 + r u^2, terminal h = G x^2, b = u,
  constant sigma. The value is V(t,x) = P(t) x^2 + m(t) with
      P' = lam P + P^2 / r - q,       P(T) = G,
      m' = lam m - sigma^2 P,         m(T) = 0,
  and the optimal feedback is u*(t,x) = -P(t) x / r.
* Closed form for lam = 0, q = r = G = 1:
      P == 1,  m(t) = sigma^2 (T - t),  V = x^2 + sigma^2 (T - t),  u* = -x.
* A smooth manufactured solution with source for order-of-accuracy tests.
"""
from __future__ import annotations

import numpy as np
from scipy.integrate import solve_ivp


class RiccatiOracle:
    """Dense-output solution of the scalar LQ Riccati system."""

    def __init__(self, lam=0.1, q=1.0, r=1.0, G=1.0, sigma=0.3, horizon=1.0,
                 method="DOP853", rtol=1e-12, atol=1e-14):
        self.lam, self.q, self.r, self.G = lam, q, r, G
        self.sigma, self.horizon = sigma, horizon

        def rhs(s, y):
            # s = T - t (integrate the terminal-value problem forward)
            P, m = y
            dP = self.q - self.lam * P - P * P / self.r
            dm = self.sigma ** 2 * P - self.lam * m
            return [dP, dm]

        self._sol = solve_ivp(
            rhs, (0.0, horizon), [G, 0.0], method=method,
            rtol=rtol, atol=atol, dense_output=True,
        )
        if not self._sol.success:
            raise RuntimeError(f"Riccati integration failed: {self._sol.message}")

    def P(self, t):
        return self._sol.sol(self.horizon - np.asarray(t))[0]

    def m(self, t):
        return self._sol.sol(self.horizon - np.asarray(t))[1]

    def value(self, t, x):
        x = np.asarray(x)
        return self.P(t) * x * x + self.m(t)

    def ustar(self, t, x):
        return -self.P(t) * np.asarray(x) / self.r


def lq_lam0_value(t, x, sigma=0.3, horizon=1.0):
    """Closed-form V for lam=0, q=r=G=1: x^2 + sigma^2 (T - t)."""
    x = np.asarray(x)
    return x * x + sigma ** 2 * (horizon - np.asarray(t))


# ---------------------------------------------------------------------------
# manufactured solution for the order test:
#   w(t, x) = exp(kappa (t - T)) * exp(-x^2 / 2)
# solving  w_t + a w_xx + u0 w_x + (c1 w + c2 sigma w_x + S) = 0
# on a domain wide enough that w and its derivatives vanish at the boundary.

MMS = dict(kappa=1.0, sigma=0.6, u0=0.5, c1=0.3, c2=0.2, horizon=0.5)


def mms_solution(t, x, horizon=MMS["horizon"]):
    t = np.asarray(t)
    x = np.asarray(x)
    return np.exp(MMS["kappa"] * (t - horizon)) * np.exp(-0.5 * x * x)


def mms_source(t, x, horizon=MMS["horizon"]):
    """S(t,x) making w an exact solution of the PDE above."""
    kappa, sigma, u0 = MMS["kappa"], MMS["sigma"], MMS["u0"]
    c1, c2 = MMS["c1"], MMS["c2"]
    a = 0.5 * sigma * sigma
    w = mms_solution(t, x, horizon)
    x = np.asarray(x)
    # w_t = kappa w, w_x = -x w, w_xx = (x^2 - 1) w
    return -w * (kappa + a * (x * x - 1.0) - u0 * x + c1 - c2 * sigma * x)
