import numpy as np
import pytest

from chdyn.errors import ConfigError, RegimeError, ShapeError
from chdyn.grid import (a_bulk, bilinear_a, build_grid, integrate_bulk, integrate_surface,
                        lap_bulk, lap_surface, normal_derivative, self_test)
from chdyn.model import ModelParams, chi

from conftest import random_pair


@pytest.mark.parametrize("Lx,Nx,Ny,area,perim", [(1, 4, 3, 1, 2), (2, 8, 5, 2, 4)])
def test_measures(Lx, Nx, Ny, area, perim):
    g = build_grid(Lx, Nx, Ny)
    assert integrate_bulk(g, np.ones(g.shape)) == pytest.approx(area, abs=1e-15)
    assert integrate_surface(g, np.ones(g.surf_shape)) == pytest.approx(perim, abs=1e-15)


@pytest.mark.parametrize("args", [(1, 3, 3), (1, 5, 3), (1, 8, 2), (0, 8, 5), (-1, 8, 5)])
def test_build_grid_rejects(args):
    with pytest.raises(ConfigError):
        build_grid(*args)


def test_integration_examples():
    g = build_grid(1.0, 16, 3)
    X, Y = g.coords()
    assert abs(integrate_bulk(g, np.cos(2 * np.pi * X / g.Lx))) < 1e-15
    assert integrate_bulk(g, Y) == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(ShapeError):
        integrate_bulk(g, np.ones((3, 3)))
    with pytest.raises(ShapeError):
        integrate_surface(g, np.ones(g.shape))


def test_operators_annihilate_constants():
    g = build_grid(2.0, 8, 5)
    c = 3.7 * np.ones(g.shape)
    assert np.max(np.abs(lap_bulk(g, c))) < 1e-12
    assert np.max(np.abs(normal_derivative(g, c))) < 1e-12
    assert np.max(np.abs(lap_surface(g, 3.7 * np.ones(g.surf_shape)))) < 1e-12


def test_lap_bulk_fourier_symbol():
    g = build_grid(3.0, 16, 7)
    X, _ = g.coords()
    for k in (1, 3):
        u = np.cos(2 * np.pi * k * X / g.Lx)
        sym = -(2 / g.hx**2) * (1 - np.cos(2 * np.pi * k * g.hx / g.Lx))
        assert np.max(np.abs(lap_bulk(g, u) - sym * u)) < 1e-10


def test_lap_surface_symbol_nx64():
    g = build_grid(1.0, 64, 3)
    x = g.surface_x()
    w = np.stack([np.cos(2 * np.pi * x)] * 2)
    sym = -(2 / g.hx**2) * (1 - np.cos(2 * np.pi * g.hx))
    assert np.max(np.abs(lap_surface(g, w) - sym * w)) < 1e-9
    # the continuum value -(2 pi)^2 is matched to 0.1%
    assert abs(sym + 4 * np.pi**2) / (4 * np.pi**2) < 1e-3


def test_normal_derivative_of_y():
    g = build_grid(1.0, 8, 6)
    _, Y = g.coords()
    dn = normal_derivative(g, Y)
    assert np.allclose(dn[1], 1.0, atol=1e-13)
    assert np.allclose(dn[0], -1.0, atol=1e-13)
    # second order: exact for quadratics
    dn2 = normal_derivative(g, Y**2)
    assert np.allclose(dn2[1], 2.0, atol=1e-12) and np.allclose(dn2[0], 0.0, atol=1e-12)


def test_summation_by_parts(rng):
    g = build_grid(1.5, 10, 7)
    for _ in range(5):
        u, v = rng.standard_normal(g.shape), rng.standard_normal(g.shape)
        lhs = np.sum(g.weights * -lap_bulk(g, u) * v)
        rhs = a_bulk(g, u, v) - np.sum(g.hx * normal_derivative(g, u) * g.trace(v))
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(rhs))


def test_lap_bulk_refinement_order():
    errs = []
    for n in (16, 32, 64):
        g = build_grid(1.0, n, n + 1)
        X, Y = g.coords()
        u = np.sin(2 * np.pi * X) * np.sin(np.pi * Y)
        exact = -(4 * np.pi**2 + np.pi**2) * u
        err = (lap_bulk(g, u) - exact)[:, 1:-1]
        errs.append(np.max(np.abs(err)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.9)


def test_chi():
    assert chi(2.0) == 0.5 and chi(0.0) == 0.0


@pytest.mark.parametrize("L,sigma", [(1.0, 1.0), (0.5, 2.0), (0.0, 1.0), (0.0, 0.0)])
def test_bilinear_form_properties(rng, L, sigma):
    g = build_grid(1.0, 8, 5)
    p = ModelParams(L=L, sigma=sigma)
    linked = L == 0
    ones = (np.ones(g.shape), np.ones(g.surf_shape))
    assert abs(bilinear_a(g, p, ones, ones)) < 1e-13
    for _ in range(100):
        y, z = random_pair(g, rng, linked), random_pair(g, rng, linked)
        assert bilinear_a(g, p, y, z) == pytest.approx(bilinear_a(g, p, z, y), rel=1e-12, abs=1e-12)
        assert bilinear_a(g, p, y, y) >= -1e-12


def test_bilinear_jump_example():
    g = build_grid(1.0, 8, 5)
    p = ModelParams(L=1.0, sigma=1.0)  # surface term vanishes for constant u_G
    y = (np.ones(g.shape), np.zeros(g.surf_shape))
    assert bilinear_a(g, p, y, y) == pytest.approx(2.0 * g.Lx, rel=1e-14)


def test_bilinear_regime_error():
    g = build_grid(1.0, 8, 5)
    y = (np.ones(g.shape), np.zeros(g.surf_shape))
    with pytest.raises(RegimeError):
        bilinear_a(g, ModelParams(L=0.0, sigma=1.0), y, y)


def test_kernel_is_constants(rng):
    g = build_grid(1.0, 8, 5)
    from chdyn.grid import pair_stiffness

    A = pair_stiffness(g, 1.0, 1.0).toarray()
    w, v = np.linalg.eigh(A)
    assert abs(w[0]) < 1e-12 and w[1] > 1e-6
    null = v[:, 0] / v[0, 0]
    assert np.allclose(null, 1.0, atol=1e-10)


def test_self_test_passes():
    for name, ok, value in self_test(build_grid(16.0, 64, 33)):
        assert ok, (name, value)
