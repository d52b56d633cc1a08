import numpy as np
import pytest

from chdyn.errors import DomainError, MeanError, RegimeError, ShapeError
from chdyn.fields import (BulkSurfacePair, EllipticOperator, Linkage, dual_h1_norm, generalized_mean,
                          hminus_norm, hminus_solve, l2_inner, mean_info, project_zero_mean, total_energy)
from chdyn.grid import bilinear_a, build_grid
from chdyn.model import ModelParams
from chdyn.potentials import Logarithmic, PotentialSpec, eval_energy_density

from conftest import REGIMES, random_pair


def zero_mean_pair(g, rng, linked):
    y = random_pair(g, rng, linked)
    return project_zero_mean(g, BulkSurfacePair(*y, Linkage.TRACE_LINKED if linked else Linkage.INDEPENDENT))


def test_generalized_mean_examples():
    g = build_grid(1.0, 8, 5)
    assert generalized_mean(g, BulkSurfacePair.constant(g, 0.7)) == pytest.approx(0.7, abs=1e-15)
    assert generalized_mean(g, (np.ones(g.shape), np.zeros(g.surf_shape))) == pytest.approx(1 / 3, abs=1e-15)
    assert generalized_mean(g, (np.zeros(g.shape), np.ones(g.surf_shape))) == pytest.approx(2 / 3, abs=1e-15)
    b, s, m = mean_info(g, (np.ones(g.shape), np.zeros(g.surf_shape)))
    assert (b, s) == (1.0, 0.0) and m == pytest.approx(1 / 3)
    with pytest.raises(ShapeError):
        generalized_mean(g, (np.ones((3, 3)), np.zeros(g.surf_shape)))


def test_projection(rng):
    g = build_grid(1.0, 8, 5)
    p = project_zero_mean(g, (np.ones(g.shape), np.zeros(g.surf_shape)))
    assert np.allclose(p.bulk, 2 / 3, atol=1e-15) and np.allclose(p.surf, -1 / 3, atol=1e-15)
    c = project_zero_mean(g, BulkSurfacePair.constant(g, 0.4))
    assert np.max(np.abs(c.bulk)) < 1e-15
    y = BulkSurfacePair(*random_pair(g, rng, False))
    once = project_zero_mean(g, y)
    twice = project_zero_mean(g, once)
    assert abs(generalized_mean(g, once)) < 1e-13
    assert np.max(np.abs(once.bulk - twice.bulk)) < 1e-14 and np.max(np.abs(once.surf - twice.surf)) < 1e-14


def test_trace_linked_invariant():
    g = build_grid(1.0, 8, 5)
    with pytest.raises(RegimeError):
        BulkSurfacePair(np.zeros(g.shape), np.ones(g.surf_shape), Linkage.TRACE_LINKED)


def test_total_energy_examples(rng):
    g = build_grid(1.0, 8, 5)
    spec = PotentialSpec(Logarithmic(0.3, 1.0))
    assert total_energy(g, spec, BulkSurfacePair.constant(g, 0.0)) == 0.0
    c = 0.37
    expected = (g.area + g.perimeter) * eval_energy_density(spec, c)
    assert total_energy(g, spec, BulkSurfacePair.constant(g, c)) == pytest.approx(expected, rel=1e-13)
    r = np.linspace(-1, 1, 20001)
    c1 = max(0.0, -float(np.min(eval_energy_density(spec, r))))
    X, Y = g.coords()
    phi = 0.8 * np.sin(2 * np.pi * X) * np.cos(np.pi * Y)
    assert total_energy(g, spec, BulkSurfacePair.from_bulk(g, phi)) >= -c1 * (g.area + g.perimeter)
    with pytest.raises(DomainError):
        total_energy(g, spec, BulkSurfacePair.constant(g, 1.01))
    with pytest.raises(RegimeError):
        total_energy(g, spec, (np.zeros(g.shape), np.ones(g.surf_shape)))


def test_energy_quadratic_part_matches_bilinear(rng):
    g = build_grid(1.0, 8, 5)
    spec = PotentialSpec(Logarithmic(1.0, 0.0))
    phi = 0.3 * np.tanh(rng.standard_normal(g.shape))
    pair = BulkSurfacePair.from_bulk(g, phi)
    quad = total_energy(g, spec, pair) - float(
        np.sum(g.weights * eval_energy_density(spec, phi)) + g.hx * np.sum(eval_energy_density(spec, pair.surf)))
    assert 2 * quad == pytest.approx(bilinear_a(g, ModelParams(L=0.0, sigma=1.0), pair, pair), rel=1e-12)


def dense_oracle(g, L, sigma, rhs):
    """Lstsq solve of the weak form on the regime's discrete space, then mean removal."""
    op = EllipticOperator(g, L, sigma)
    A = op.A.toarray()
    b = op.rhs(rhs)
    x = np.linalg.lstsq(A, b, rcond=None)[0]
    x -= (op.mass @ x) / op.mass.sum()
    return op.to_pair(x)


@pytest.mark.parametrize("L,sigma", REGIMES)
@pytest.mark.parametrize("method", ["cg", "direct"])
def test_hminus_solve_matches_dense(rng, L, sigma, method):
    g = build_grid(1.0, 8, 5)
    p = ModelParams(L=L, sigma=sigma)
    for _ in range(3):
        rhs = zero_mean_pair(g, rng, linked=L == 0)
        u = hminus_solve(g, p, rhs, method)
        ref = dense_oracle(g, L, sigma, rhs)
        assert np.max(np.abs(u.bulk - ref.bulk)) < 1e-10
        assert np.max(np.abs(u.surf - ref.surf)) < 1e-10
        assert abs(generalized_mean(g, u)) < 1e-12
        if L == 0:
            assert u.linkage is Linkage.TRACE_LINKED
        # duality: (u, rhs) = a(u, u)
        assert l2_inner(g, u, rhs) == pytest.approx(bilinear_a(g, p, u, u), rel=1e-10, abs=1e-12)


def test_hminus_solve_zero_and_mean_error(rng):
    g = build_grid(1.0, 8, 5)
    p = ModelParams()
    z = hminus_solve(g, p, BulkSurfacePair(np.zeros(g.shape), np.zeros(g.surf_shape)))
    assert np.all(z.bulk == 0) and np.all(z.surf == 0)
    with pytest.raises(MeanError):
        hminus_solve(g, p, BulkSurfacePair.constant(g, 1.0))


@pytest.mark.parametrize("L,sigma", REGIMES)
def test_hminus_linearity(rng, L, sigma):
    g = build_grid(1.0, 8, 5)
    p = ModelParams(L=L, sigma=sigma)
    y, z = zero_mean_pair(g, rng, L == 0), zero_mean_pair(g, rng, L == 0)
    a, b = 0.7, -2.3
    comb = BulkSurfacePair(a * y.bulk + b * z.bulk, a * y.surf + b * z.surf, y.linkage)
    lhs = hminus_solve(g, p, comb)
    sy, sz = hminus_solve(g, p, y), hminus_solve(g, p, z)
    assert np.max(np.abs(lhs.bulk - (a * sy.bulk + b * sz.bulk))) < 1e-9


@pytest.mark.parametrize("L,sigma", REGIMES)
def test_hminus_norm(rng, L, sigma):
    g = build_grid(1.0, 8, 5)
    p = ModelParams(L=L, sigma=sigma)
    assert hminus_norm(g, p, BulkSurfacePair(np.zeros(g.shape), np.zeros(g.surf_shape))) == 0.0
    assert hminus_norm(g, p, BulkSurfacePair.constant(g, -0.4)) == pytest.approx(0.4, abs=1e-14)
    y = zero_mean_pair(g, rng, L == 0)
    n = hminus_norm(g, p, y)
    assert n**2 == pytest.approx(l2_inner(g, y, hminus_solve(g, p, y)), rel=1e-10)


def test_norm_equivalence_constant_recorded(rng):
    """Ratio of the two dual norms stays within a band recorded for this grid."""
    g = build_grid(1.0, 8, 5)
    p = ModelParams(L=1.0, sigma=1.0)
    ratios = []
    for _ in range(50):
        y = BulkSurfacePair(*random_pair(g, rng, False))
        ratios.append(dual_h1_norm(g, y) / hminus_norm(g, p, y))
    ratios = np.array(ratios)
    assert np.all(ratios > 0.2) and np.all(ratios < 5.0)
