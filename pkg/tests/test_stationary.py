import math

import numpy as np
import pytest

from chdyn.errors import InitError
from chdyn.fields import BulkSurfacePair, generalized_mean
from chdyn.grid import build_grid
from chdyn.stationary import mu_infty_formula, solve_stationary, steady_residual
from chdyn.stepper import StepConfig, run_trajectory

from conftest import log_params
from test_stepper import noise_field

BETA_03 = 0.5 * math.log(1.3 / 0.7)


def test_convex_case_constant_state():
    g = build_grid(1.0, 8, 5)
    spec = log_params(theta=1.0, theta_c=0.0).potential
    st = solve_stationary(g, spec, 0.3)
    assert np.max(np.abs(st.phi.bulk - 0.3)) < 1e-12
    assert abs(st.mu_inf - BETA_03) < 1e-10
    assert st.residual_norm < 1e-12


def test_convex_case_from_nonconstant_guess(rng):
    g = build_grid(1.0, 8, 5)
    spec = log_params(theta=1.0, theta_c=0.0).potential
    st = solve_stationary(g, spec, 0.3, init=(0.2 * rng.standard_normal(g.shape), None))
    assert np.max(np.abs(st.phi.bulk - 0.3)) < 1e-10
    assert abs(st.mu_inf - BETA_03) < 1e-10
    assert abs(generalized_mean(g, st.phi) - 0.3) < 1e-10


def test_symmetric_zero_mean():
    g = build_grid(2.0, 16, 5)
    spec = log_params().potential
    st = solve_stationary(g, spec, 0.0)
    assert np.max(np.abs(st.phi.bulk)) == 0.0
    assert st.mu_inf == 0.0


def test_steady_residual_examples():
    g = build_grid(1.0, 8, 5)
    spec = log_params(theta=1.0, theta_c=0.0).potential
    c = BulkSurfacePair.constant(g, 0.3)
    assert steady_residual(g, spec, c, BETA_03) < 1e-14
    expected = BETA_03 * math.sqrt(g.area + g.perimeter)
    assert steady_residual(g, spec, c, 0.0) == pytest.approx(expected, rel=1e-12)


def test_mu_formula_examples():
    g = build_grid(1.0, 8, 5)
    p = log_params(theta=1.0, theta_c=2.0)
    assert mu_infty_formula(g, p.potential, BulkSurfacePair.constant(g, 0.0)) == 0.0
    # beta(c) + pi(c) with pi(r) = -theta_c r
    assert mu_infty_formula(g, p.potential, BulkSurfacePair.constant(g, 0.3)) == pytest.approx(BETA_03 - 0.6, rel=1e-13)


def test_bad_mean():
    g = build_grid(1.0, 8, 5)
    with pytest.raises(InitError):
        solve_stationary(g, log_params().potential, 1.0)


@pytest.fixture(scope="module")
def long_run():
    g = build_grid(8.5, 32, 9)
    p = log_params(1.0, 1.0)
    phi0 = noise_field(g, np.random.Generator(np.random.PCG64(3)))
    rec = run_trajectory(g, p, StepConfig(tau=2e-2), phi0, 100.0, output_every=10**6, steady_tol=0.0)
    return g, p, rec.final_state


def test_polish_long_run_state(long_run):
    g, p, s = long_run
    mu_T = generalized_mean(g, s.mu)
    before = steady_residual(g, p.potential, s.phi, mu_T)
    st = solve_stationary(g, p.potential, generalized_mean(g, s.phi), init=s.phi)
    assert st.residual_norm < before
    assert st.residual_norm < 1e-10
    assert abs(st.mu_inf - mu_T) < 1e-6
    assert abs(st.mu_inf - st.mu_formula) < 1e-8
    assert st.delta > 0
    assert np.ptp(st.phi.bulk) > 1.0  # a genuinely phase-separated state
    assert abs(generalized_mean(g, st.phi) - generalized_mean(g, s.phi)) < 1e-10


def test_polish_between_pinned_positions(long_run):
    # a converged profile moved a quarter cell sits between grid-pinned equilibria
    g, p, s = long_run
    st = solve_stationary(g, p.potential, generalized_mean(g, s.phi), init=s.phi)
    k = np.fft.fftfreq(g.Nx, d=1.0 / g.Nx)[:, None]
    shifted = np.fft.ifft(np.fft.fft(st.phi.bulk, axis=0) * np.exp(-0.5j * np.pi * k / g.Nx), axis=0).real
    mean = generalized_mean(g, st.phi)
    moved = solve_stationary(g, p.potential, mean, init=(shifted, None))
    assert moved.residual_norm < 1e-10
    assert abs(moved.mu_inf - moved.mu_formula) < 1e-8
    assert abs(generalized_mean(g, moved.phi) - mean) < 1e-10
    assert np.ptp(moved.phi.bulk) > 1.0
