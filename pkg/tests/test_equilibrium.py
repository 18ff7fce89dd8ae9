from __future__ import annotations

import math

import numpy as np
import pytest

from ticsolve import (
    DomainTooSmallError,
    Grid,
    NonContractionError,
    ProblemSpec,
    SchemeConfig,
    UnsupportedProblemError,
    UsageError,
    diagonal_march_solve,
    get_preset,
    heat_kernel_matrix,
    kernel_picard_solve,
    picard_window_solve,
)
from ticsolve.grids import inner_slice
from ticsolve.pde import hjb_backward_solve

SIGMA2R = 0.4  # two-rate preset diffusion
A2R = 0.5 * SIGMA2R**2


def make_spec(**kw):
    base = dict(
        name="test",
        horizon=1.0,
        b=lambda t, x, u: u + 0.0 * np.asarray(x),
        sigma=lambda t, x, u: 0.3 + 0.0 * np.asarray(x) + 0.0 * np.asarray(u),
        g=lambda tau, t, x, u, y, z: 0.0 * (np.asarray(x) + np.asarray(u) + y),
        h=lambda tau, x: np.asarray(x, dtype=float) + 0.0,
        u_lo=-1.0,
        u_hi=1.0,
        x_lo=-6.0,
        x_hi=6.0,
    )
    base.update(kw)
    return ProblemSpec(**base)


@pytest.fixture(scope="module")
def two_rate():
    return get_preset("two-rate-discount")


@pytest.fixture(scope="module")
def grid_2r():
    return Grid(-6.0, 6.0, 121, 1.0, 96)


@pytest.fixture(scope="module")
def march_2r(two_rate, grid_2r):
    return diagonal_march_solve(two_rate, grid_2r, SchemeConfig(control_points=33))


@pytest.fixture(scope="module")
def picard_2r(two_rate, grid_2r):
    return picard_window_solve(two_rate, grid_2r, SchemeConfig(control_points=33))


@pytest.fixture(scope="module")
def grid_fine():
    return Grid(-6.0, 6.0, 193, 1.0, 140)


@pytest.fixture(scope="module")
def kernel_2r(two_rate, grid_fine):
    return kernel_picard_solve(
        two_rate, grid_fine, SchemeConfig(control_points=33), nt_coarse=10
    )


class TestDiagonalMarch:
    def test_tau_free_collapses_to_classical_bitwise(self):
        # tau-independent data: every slice carries the same rows, so the
        # march must reproduce the plain HJB sweep bit for bit
        spec = get_preset("tau-free")
        grid = Grid(-4.0, 4.0, 81, 1.0, 160)
        scheme = SchemeConfig(control_points=33)
        sol = diagonal_march_solve(spec, grid, scheme)
        ref_v, ref_u = hjb_backward_solve(
            spec, 0.0, (0.0, 1.0), spec.h(0.0, grid.xs), grid, scheme
        )
        assert np.array_equal(sol.value.values, ref_v.values)
        assert np.array_equal(sol.strategy.values, ref_u.values)
        assert np.array_equal(sol.theta.diagonal().values, ref_v.values)

    def test_tau_free_stride_is_still_bitwise(self):
        spec = get_preset("tau-free")
        grid = Grid(-4.0, 4.0, 81, 1.0, 160)
        scheme = SchemeConfig(control_points=33)
        sol = diagonal_march_solve(spec, grid, scheme, tau_stride=7)
        ref_v, ref_u = hjb_backward_solve(
            spec, 0.0, (0.0, 1.0), spec.h(0.0, grid.xs), grid, scheme
        )
        assert np.array_equal(sol.value.values, ref_v.values)
        assert np.array_equal(sol.strategy.values, ref_u.values)

    def test_linear_profile_is_invariant(self):
        # b = 0, g = 0, h = x: diffusion annihilates linear data, so the
        # whole family is Theta = x for every tau and t
        spec = make_spec(
            b=lambda t, x, u: 0.0 * (np.asarray(x) + np.asarray(u)),
            x_lo=-4.0, x_hi=4.0,
        )
        grid = Grid(-4.0, 4.0, 81, 1.0, 160)
        sol = diagonal_march_solve(spec, grid, SchemeConfig(control_points=9))
        assert np.abs(sol.value.values - grid.xs[None, :]).max() <= 1e-12
        # every candidate control ties, so the smallest one wins
        assert np.all(sol.strategy.values == spec.u_lo)

    def test_stride_changes_tau_dependent_solution(self, two_rate, grid_2r, march_2r):
        coarse = diagonal_march_solve(
            two_rate, grid_2r, SchemeConfig(control_points=33), tau_stride=4
        )
        diff = np.abs(coarse.value.values - march_2r.value.values).max()
        assert 1e-3 < diff < 5.0  # measured 0.546: visible but bounded

    def test_tau_keep_subsets_theta_only(self, two_rate, grid_2r, march_2r):
        kept = diagonal_march_solve(
            two_rate, grid_2r, SchemeConfig(control_points=33), tau_keep=[0.0, 0.5]
        )
        assert kept.theta.tau_indices == (0, 48)
        assert np.array_equal(kept.value.values, march_2r.value.values)
        assert np.array_equal(kept.strategy.values, march_2r.strategy.values)
        full_slice = march_2r.theta.slice_for(0.5)
        assert np.array_equal(kept.theta.slice_for(0.5).values, full_slice.values)

    def test_slice_terminal_rows_carry_their_own_tau(self, two_rate, grid_2r, march_2r):
        for tau in (0.0, 0.25, 1.0):
            sl = march_2r.theta.slice_for(tau)
            assert np.array_equal(sl.values[-1], two_rate.h(tau, grid_2r.xs))

    def test_checker_residual_at_truncation_scale(self, march_2r):
        r = march_2r.diagnostics["checker_residual"]
        assert 0.0 < r < 0.5  # measured 0.15 on this grid

    def test_differs_from_precommitted_value(self, two_rate, grid_2r, march_2r):
        # freezing tau = 0 solves the pre-committed problem, not the
        # equilibrium one; the diagonal must deviate at t = 0 and end at h(T)
        frozen_v, _ = hjb_backward_solve(
            two_rate, 0.0, (0.0, 1.0), two_rate.h(0.0, grid_2r.xs), grid_2r,
            SchemeConfig(control_points=33),
        )
        gap_t0 = np.abs(march_2r.value.values[0] - frozen_v.values[0]).max()
        assert gap_t0 > 1e-2  # measured 0.15
        assert not np.array_equal(march_2r.value.values[-1], frozen_v.values[-1])

    def test_diagnostics_report_hosting(self, two_rate, grid_2r):
        sol = diagonal_march_solve(
            two_rate, grid_2r, SchemeConfig(control_points=33), tau_stride=4,
            tau_keep=[0.0],
        )
        assert sol.diagnostics["tau_stride"] == 4
        assert sol.diagnostics["hosted_slices"] == 25  # 0, 4, ..., 96

    def test_stride_and_keep_validation(self, two_rate, grid_2r):
        with pytest.raises(UsageError, match="tau_stride"):
            diagonal_march_solve(
                two_rate, grid_2r, SchemeConfig(control_points=33), tau_stride=0
            )
        with pytest.raises(UsageError, match="hosted"):
            diagonal_march_solve(
                two_rate, grid_2r, SchemeConfig(control_points=33), tau_stride=4,
                tau_keep=[grid_2r.ts[2]],
            )


class TestPicardWindow:
    def test_tau_free_fixed_point_is_classical(self):
        # the frozen-tau first candidate already solves a tau-free problem,
        # so every window converges with zero recorded distance
        spec = get_preset("tau-free")
        grid = Grid(-4.0, 4.0, 81, 1.0, 160)
        scheme = SchemeConfig(control_points=33)
        sol = picard_window_solve(spec, grid, scheme)
        ref_v, ref_u = hjb_backward_solve(
            spec, 0.0, (0.0, 1.0), spec.h(0.0, grid.xs), grid, scheme
        )
        assert np.array_equal(sol.value.values, ref_v.values)
        assert np.array_equal(sol.strategy.values, ref_u.values)
        for wl in sol.diagnostics["windows"]:
            assert all(d == 0.0 for d in wl["distances"])
            assert wl["ratios"] == []

    def test_matches_march_bitwise_on_two_rate(self, march_2r, picard_2r):
        # the converged fixed point reproduces the march recursion exactly
        # once the lattice argmin settles
        assert np.array_equal(picard_2r.value.values, march_2r.value.values)
        assert np.array_equal(picard_2r.strategy.values, march_2r.strategy.values)
        assert np.array_equal(
            picard_2r.theta.slice_for(0.0).values,
            march_2r.theta.slice_for(0.0).values,
        )

    def test_window_log_structure(self, picard_2r):
        d = picard_2r.diagnostics
        assert d["delta"] == pytest.approx(0.25)  # quarter horizon default
        assert d["halvings"] == 0
        wins = d["windows"]
        assert wins[0]["window"][1] == 1.0 and wins[-1]["window"][0] == 0.0
        for wl, n_sweeps in zip(wins, d["sweeps"]):
            lo, hi = wl["window"]
            assert lo < hi
            assert len(wl["distances"]) == n_sweeps >= 3
            assert all(np.isfinite(v) and v >= 0 for v in wl["distances"])

    def test_explicit_delta_sets_window_count(self, two_rate, grid_2r):
        sol = picard_window_solve(
            two_rate, grid_2r, SchemeConfig(control_points=33), delta=0.5
        )
        assert sol.diagnostics["delta"] == pytest.approx(0.5)
        assert sol.diagnostics["halvings"] == 0
        assert len(sol.diagnostics["windows"]) == 2

    @pytest.mark.parametrize("delta", [0.0, -0.5, 0.26])
    def test_bad_delta_rejected(self, two_rate, grid_2r, delta):
        with pytest.raises(UsageError, match="multiple of dt"):
            picard_window_solve(
                two_rate, grid_2r, SchemeConfig(control_points=33), delta=delta
            )

    def test_slow_first_window_triggers_halving(self):
        # long horizon + cheap wide control: the quarter-horizon window
        # contracts slower than 0.5 and the solver halves it once
        T = 8.0
        spec = make_spec(
            horizon=T,
            sigma=lambda t, x, u: 0.4 + 0.0 * np.asarray(x) + 0.0 * np.asarray(u),
            g=lambda tau, t, x, u, y, z: np.exp(-1.5 * (t - tau))
            * (0.03 * u * u + 0.5 * x * x) + 0.0 * y,
            h=lambda tau, x: np.asarray(x, dtype=float) ** 2,
            u_lo=-20.0, u_hi=20.0,
        )
        grid = Grid(-6.0, 6.0, 31, T, 560)
        sol = picard_window_solve(spec, grid, SchemeConfig(control_points=33))
        assert sol.diagnostics["halvings"] == 1
        assert sol.diagnostics["delta"] == pytest.approx(T / 8)
        assert sol.diagnostics["windows"][0]["ratios"][0] <= 0.5

    def test_non_contraction_carries_distances(self, two_rate, grid_2r):
        # convergence needs at least three sweeps, so a two-sweep budget
        # must fail on the first window
        with pytest.raises(NonContractionError) as err:
            picard_window_solve(
                two_rate, grid_2r, SchemeConfig(control_points=33), max_iter=2
            )
        assert len(err.value.distances) == 2
        assert err.value.window == (0.75, 1.0)
        assert err.value.exit_code == 3

    def test_tau_keep_subsets_theta_only(self, two_rate, grid_2r, picard_2r):
        kept = picard_window_solve(
            two_rate, grid_2r, SchemeConfig(control_points=33), tau_keep=[0.0]
        )
        assert kept.theta.tau_indices == (0,)
        assert np.array_equal(kept.value.values, picard_2r.value.values)
        assert np.array_equal(
            kept.theta.slice_for(0.0).values,
            picard_2r.theta.slice_for(0.0).values,
        )


class TestKernelPicard:
    def test_martingale_preserves_linear_data(self):
        # b = 0, g = 0, h = x: Theta(t, x) = x exactly at every level
        spec = make_spec(
            b=lambda t, x, u: 0.0 * (np.asarray(x) + np.asarray(u)),
            sigma=lambda t, x, u: 0.4 + 0.0 * np.asarray(x) + 0.0 * np.asarray(u),
        )
        grid = Grid(-6.0, 6.0, 193, 1.0, 140)
        sol = kernel_picard_solve(spec, grid, SchemeConfig(control_points=9))
        assert np.abs(sol.value.values - sol.value.grid.xs[None, :]).max() <= 5e-9

    def test_quadratic_data_gains_two_a_t(self):
        # pure diffusion on h = x^2: Theta = x^2 + 2a(T - t)
        spec = make_spec(
            b=lambda t, x, u: 0.0 * (np.asarray(x) + np.asarray(u)),
            sigma=lambda t, x, u: 0.4 + 0.0 * np.asarray(x) + 0.0 * np.asarray(u),
            h=lambda tau, x: np.asarray(x, dtype=float) ** 2,
        )
        grid = Grid(-6.0, 6.0, 193, 1.0, 140)
        sol = kernel_picard_solve(spec, grid, SchemeConfig(control_points=9))
        cg = sol.value.grid
        sl = inner_slice(cg)
        a = 0.5 * 0.4**2
        expected = cg.xs[None, :] ** 2 + 2 * a * (1.0 - cg.ts[:, None])
        assert np.abs(sol.value.values - expected)[:, sl].max() <= 1e-12

    def test_gradient_coupled_source_closed_form(self):
        # g = c z with zero drift shifts the heat solution: the exact family
        # is Theta = (x + c sigma (T - t))^2 + 2a(T - t), tau-independent
        c, sigma = 0.3, 0.4
        spec = make_spec(
            b=lambda t, x, u: 0.0 * (np.asarray(x) + np.asarray(u)),
            sigma=lambda t, x, u: sigma + 0.0 * np.asarray(x) + 0.0 * np.asarray(u),
            g=lambda tau, t, x, u, y, z: c * z + 0.0 * (np.asarray(x) + np.asarray(u)),
            h=lambda tau, x: np.asarray(x, dtype=float) ** 2,
        )
        grid = Grid(-6.0, 6.0, 193, 1.0, 140)
        sol = kernel_picard_solve(spec, grid, SchemeConfig(control_points=9))
        cg = sol.value.grid
        sl = inner_slice(cg)
        a = 0.5 * sigma**2
        left = 1.0 - cg.ts[:, None]
        expected = (cg.xs[None, :] + c * sigma * left) ** 2 + 2 * a * left
        assert np.abs(sol.value.values - expected)[:, sl].max() <= 1e-10

    def test_agrees_with_march_on_two_rate(self, two_rate, grid_fine, kernel_2r):
        march = diagonal_march_solve(
            two_rate, grid_fine, SchemeConfig(control_points=33), tau_keep=[0.0]
        )
        stride = grid_fine.nt // kernel_2r.diagnostics["nt_coarse"]
        sl = inner_slice(grid_fine)
        gap = np.abs(
            kernel_2r.value.values[:, sl] - march.value.values[::stride][:, sl]
        ).max()
        assert 0.0 < gap < 0.08  # measured 0.045: two very different schemes

    def test_solution_lives_on_coarse_grid(self, two_rate, grid_fine, kernel_2r):
        assert kernel_2r.method == "kernel"
        cg = kernel_2r.value.grid
        assert cg.nt == kernel_2r.diagnostics["nt_coarse"] == 10
        assert kernel_2r.strategy.values.shape == (11, grid_fine.nx)
        assert np.all(kernel_2r.strategy.values >= two_rate.u_lo)
        assert np.all(kernel_2r.strategy.values <= two_rate.u_hi)
        # terminal diagonal row and every slice's own terminal row are exact
        assert np.array_equal(
            kernel_2r.value.values[-1], two_rate.h(1.0, cg.xs)
        )
        for tau in (0.0, cg.ts[4]):
            sl = kernel_2r.theta.slice_for(tau)
            assert np.array_equal(sl.values[-1], two_rate.h(tau, cg.xs))

    def test_distances_contract_to_zero(self, kernel_2r):
        d = kernel_2r.diagnostics["distances"]
        assert d[-1] == 0.0  # settles exactly once the argmin stops moving
        assert d[0] > d[-1]
        assert kernel_2r.diagnostics["sweeps"] == len(d)
        assert kernel_2r.diagnostics["tail_mass"] < 1e-8

    def test_domain_too_small_refused(self, two_rate):
        grid = Grid(-4.0, 4.0, 129, 1.0, 140)
        with pytest.raises(DomainTooSmallError) as err:
            kernel_picard_solve(two_rate, grid, SchemeConfig(control_points=33))
        assert err.value.tail_mass > 1e-8
        assert err.value.exit_code == 3

    def test_control_dependent_sigma_refused(self):
        spec = make_spec(
            sigma=lambda t, x, u: 0.3 + 0.01 * np.asarray(u) + 0.0 * np.asarray(x)
        )
        grid = Grid(-6.0, 6.0, 193, 1.0, 140)
        with pytest.raises(UnsupportedProblemError, match="control-independent"):
            kernel_picard_solve(spec, grid, SchemeConfig(control_points=9))

    def test_state_dependent_sigma_refused(self):
        spec = make_spec(
            sigma=lambda t, x, u: 0.3 + 0.05 * np.asarray(x) + 0.0 * np.asarray(u)
        )
        grid = Grid(-6.0, 6.0, 193, 1.0, 140)
        with pytest.raises(UnsupportedProblemError, match="constant in time and space"):
            kernel_picard_solve(spec, grid, SchemeConfig(control_points=9))

    def test_degenerate_sigma_refused(self):
        spec = make_spec(
            sigma=lambda t, x, u: 0.0 * (np.asarray(x) + np.asarray(u))
        )
        grid = Grid(-6.0, 6.0, 193, 1.0, 140)
        with pytest.raises(UnsupportedProblemError, match="nondegenerate"):
            kernel_picard_solve(spec, grid, SchemeConfig(control_points=9))

    def test_resolution_floor_enforced(self, two_rate):
        # dx = 0.125 puts the kernel floor at dt_c ~ 0.39; ten levels is too
        # fine, and dx = 0.5 admits no level at all
        with pytest.raises(UsageError, match="resolution floor"):
            kernel_picard_solve(
                two_rate, Grid(-6.0, 6.0, 97, 1.0, 140),
                SchemeConfig(control_points=33), nt_coarse=10,
            )
        with pytest.raises(UsageError, match="too coarse"):
            kernel_picard_solve(
                two_rate, Grid(-6.0, 6.0, 25, 1.0, 140),
                SchemeConfig(control_points=33),
            )

    def test_sweep_budget_enforced(self, two_rate, grid_fine):
        with pytest.raises(NonContractionError) as err:
            kernel_picard_solve(
                two_rate, grid_fine, SchemeConfig(control_points=33),
                nt_coarse=10, max_iter=1,
            )
        assert len(err.value.distances) == 1
        assert err.value.window == (0.0, 1.0)


class TestHeatKernelMatrix:
    def setup_method(self):
        self.xs = np.linspace(-6.0, 6.0, 193)
        self.dx = self.xs[1] - self.xs[0]
        self.a = 0.08

    @pytest.mark.parametrize("delta", [0.1, 0.5, 1.0])
    def test_rows_have_unit_mass(self, delta):
        K = heat_kernel_matrix(self.a, delta, self.xs, self.xs, self.dx)
        assert np.abs(K.sum(axis=1) - 1.0).max() <= 1e-14

    @pytest.mark.parametrize("delta", [0.1, 0.5, 1.0])
    def test_first_two_moments_inner(self, delta):
        # away from the (unpadded) edges the trapezoid Gaussian reproduces
        # E[x] and E[x^2] = x^2 + 2 a delta to near machine precision
        K = heat_kernel_matrix(self.a, delta, self.xs, self.xs, self.dx)
        sl = slice(48, 145)
        assert np.abs((K @ self.xs - self.xs)[sl]).max() <= 1e-12
        m2 = K @ self.xs**2 - (self.xs**2 + 2 * self.a * delta)
        assert np.abs(m2[sl]).max() <= 1e-11

    def test_rows_bounded_by_gaussian_envelope(self):
        # every entry sits under a Gaussian envelope with 1/sqrt(delta) decay
        rng = np.random.default_rng(11)
        for delta in (0.07, 0.31, 1.0):
            K = heat_kernel_matrix(self.a, delta, self.xs, self.xs, self.dx)
            ii = rng.integers(0, self.xs.size, size=40)
            jj = rng.integers(0, self.xs.size, size=40)
            d2 = (self.xs[ii] - self.xs[jj]) ** 2
            envelope = (
                2.0 * self.dx / math.sqrt(4 * math.pi * self.a)
                * np.exp(-d2 / (4 * self.a * delta)) / math.sqrt(delta)
            )
            assert np.all(K[ii, jj] <= envelope)

    def test_rejects_bad_parameters(self):
        with pytest.raises(UsageError):
            heat_kernel_matrix(0.0, 0.1, self.xs, self.xs, self.dx)
        with pytest.raises(UsageError):
            heat_kernel_matrix(self.a, -0.1, self.xs, self.xs, self.dx)
