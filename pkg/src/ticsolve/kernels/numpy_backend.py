"""Pure-numpy reference implementations of the hot per-step kernels.

The numba backend mirrors these routines expression-for-expression; both
evaluate the Hamiltonian as ``a*d2 + b*p_sel + g`` in exactly that
association so that results are bit-identical across backends and between
the argmin update and the frozen-strategy update.
"""
from __future__ import annotations

import numpy as np
from scipy.linalg import solve_banded

NAME = "numpy"


def hjb_step(theta, d2, a2d, b2d, g2d, psel, dt):
    """One explicit backward-Euler step with pointwise control argmin.

    Parameters
    ----------
    theta : (nx,) current values.
    d2 : (nx,) second-difference term.
    a2d, b2d, g2d, psel : (nx, nu) coefficient tables and the selected
        (hybrid central/upwind) gradient per control candidate.
    dt : time step.

    Returns
    -------
    new_theta : (nx,) values one step back in time.
    jmin : (nx,) argmin control index (first occurrence).
    """
    ham = a2d * d2[:, None] + b2d * psel + g2d
    jmin = np.argmin(ham, axis=1)
    rows = np.arange(theta.shape[0])
    new_theta = theta + dt * ham[rows, jmin]
    return new_theta, jmin


def frozen_step(theta, d2, a, b, g, psel, dt):
    """One explicit step under a frozen control row.

    All arrays are (m, nx): m independent slices advance together.
    """
    return theta + dt * (a * d2 + b * psel + g)


def thomas(lower, diag, upper, rhs):
    """Solve the tridiagonal system; rhs may be (n,) or (m, n) batched."""
    n = diag.shape[0]
    ab = np.zeros((3, n))
    ab[0, 1:] = upper[:-1]
    ab[1, :] = diag
    ab[2, :-1] = lower[1:]
    return solve_banded((1, 1), ab, np.atleast_2d(rhs).T).T.reshape(np.shape(rhs))
