import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad
from scipy.optimize import brentq

from chdyn import potentials as pot
from chdyn.errors import DomainError
from chdyn.potentials import Custom, Logarithmic, PotentialSpec, YosidaConfig

LOG1 = PotentialSpec(Logarithmic(1.0, 0.0))


def linear_spec():
    return PotentialSpec(Custom(beta=lambda r: r, dbeta=lambda r: np.ones_like(r),
                                beta_hat=lambda r: 0.5 * r * r))


def cubic_spec():
    return PotentialSpec(Custom(beta=lambda r: r**3, dbeta=lambda r: 3 * r**2,
                                beta_hat=lambda r: r**4 / 4))


def test_eval_beta_examples():
    b, db = pot.eval_beta(PotentialSpec(Logarithmic(1.0, 2.0)), 0.0)
    assert b == 0.0 and db == 1.0
    b, db = pot.eval_beta(LOG1, 0.5)
    assert b == pytest.approx(0.5 * math.log(3.0), abs=1e-12)
    assert db == pytest.approx(4.0 / 3.0, abs=1e-12)
    with pytest.raises(DomainError):
        pot.eval_beta(LOG1, 1.0)


def test_energy_density_examples():
    assert pot.eval_energy_density(PotentialSpec(Logarithmic(0.3, 1.0)), 0.0) == 0.0
    assert pot.eval_energy_density(LOG1, 1.0) == pytest.approx(math.log(2.0), abs=1e-14)
    th, thc, r = 1.0, 2.0, 0.9
    closed = 0.5 * th * ((1 + r) * math.log(1 + r) + (1 - r) * math.log(1 - r)) - 0.5 * thc * r * r
    val = pot.eval_energy_density(PotentialSpec(Logarithmic(th, thc)), r)
    assert abs(val - closed) < 1e-12
    with pytest.raises(DomainError):
        pot.eval_energy_density(LOG1, 1.0 + 1e-9)


def test_resolvent_examples():
    assert pot.resolvent(linear_spec(), pot.BULK, 1.5, 0.5) == pytest.approx(1.0, abs=1e-14)
    assert pot.resolvent(cubic_spec(), pot.BULK, 2.0, 1.0) == pytest.approx(1.0, abs=1e-13)
    # bisection oracle for the logarithmic resolvent
    j = pot.resolvent(LOG1, pot.BULK, 0.99, 0.1)
    ref = brentq(lambda x: x + 0.05 * math.log((1 + x) / (1 - x)) - 0.99, -1 + 1e-15, 1 - 1e-15,
                 xtol=1e-15)
    assert abs(j - ref) < 1e-13
    assert abs(j + 0.05 * math.log((1 + j) / (1 - j)) - 0.99) < 1e-12


def test_boundary_resolvent_uses_rho():
    spec = PotentialSpec(Logarithmic(1.0), rho=2.0)
    j = pot.resolvent(spec, pot.BOUNDARY, 0.7, 0.1)
    assert abs(j + 0.2 * math.atanh(j) - 0.7) < 1e-13
    assert pot.yosida_beta(spec, pot.BOUNDARY, 0.7, 0.1) == pytest.approx((0.7 - j) / 0.2, rel=1e-12)


def test_yosida_examples():
    assert pot.yosida_beta(linear_spec(), pot.BULK, 1.5, 0.5) == pytest.approx(1.0, abs=1e-14)
    assert pot.yosida_beta(LOG1, pot.BULK, 0.0, 0.3) == 0.0
    vals = [pot.yosida_beta(LOG1, pot.BULK, 0.5, e) for e in (1e-1, 1e-2, 1e-3)]
    target = 0.5 * math.log(3.0)
    errs = [target - v for v in vals]
    assert all(e > 0 for e in errs) and errs[0] > errs[1] > errs[2]


def test_envelope_examples():
    assert pot.moreau_envelope(linear_spec(), pot.BULK, 2.0, 1.0) == pytest.approx(1.0, abs=1e-14)
    assert pot.moreau_envelope(LOG1, pot.BULK, 0.0, 0.1) == 0.0
    ref, _ = quad(lambda s: pot.yosida_beta(LOG1, pot.BULK, s, 0.1), 0.0, 0.8, epsabs=1e-13)
    assert abs(pot.moreau_envelope(LOG1, pot.BULK, 0.8, 0.1) - ref) < 1e-8


def test_envelope_matches_integral_on_samples():
    rs = np.linspace(-1.4, 1.4, 50)
    for r in rs:
        ref, _ = quad(lambda s: pot.yosida_beta(LOG1, pot.BULK, s, 0.05), 0.0, r, epsabs=1e-13)
        assert abs(pot.moreau_envelope(LOG1, pot.BULK, r, 0.05) - ref) < 1e-8


def test_envelope_below_potential():
    r = np.linspace(-0.999, 0.999, 201)
    for eps in (0.5, 0.1, 0.01):
        assert np.all(pot.moreau_envelope(LOG1, pot.BULK, r, eps) <= pot.eval_beta_hat(LOG1, r) + 1e-15)


def test_yosida_derivative_matches_fd():
    r = np.linspace(-1.5, 1.5, 31)
    h = 1e-6
    _, d = pot.yosida_terms(LOG1, pot.BULK, r, 0.1)
    fd = (pot.yosida_beta(LOG1, pot.BULK, r + h, 0.1) - pot.yosida_beta(LOG1, pot.BULK, r - h, 0.1)) / (2 * h)
    assert np.max(np.abs(d - fd) / np.abs(fd)) < 1e-6


@settings(max_examples=200, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(1e-4, 0.99))
def test_resolvent_contraction_and_lipschitz(r1, r2, eps):
    j1, j2 = pot.resolvent(LOG1, pot.BULK, r1, eps), pot.resolvent(LOG1, pot.BULK, r2, eps)
    assert abs(j1 - j2) <= abs(r1 - r2) * (1 + 1e-12) + 1e-15
    b1, b2 = pot.yosida_beta(LOG1, pot.BULK, r1, eps), pot.yosida_beta(LOG1, pot.BULK, r2, eps)
    assert abs(b1 - b2) <= abs(r1 - r2) / eps * (1 + 1e-9) + 1e-12
    assert -1.0 < j1 < 1.0 or abs(j1) == 1.0


def test_custom_resolvent_vectorized():
    r = np.linspace(-5, 5, 101)
    j = pot.resolvent(cubic_spec(), pot.BULK, r, 0.3)
    assert np.max(np.abs(j + 0.3 * j**3 - r)) < 1e-12


def test_yosida_config_bounds():
    with pytest.raises(ValueError):
        YosidaConfig(eps=1.0)
    assert YosidaConfig(eps=0.5).newton_tol == 1e-13


def test_check_assumptions_log_defaults():
    rep = pot.check_assumptions(PotentialSpec(Logarithmic(1.0, 2.0)), 1000, 0.0)
    assert rep.passed
    assert rep.boundary_domination and rep.domination_excess <= 0.0
    assert rep.varpi == pytest.approx(1.0, abs=1e-12)
    assert abs(rep.kappa - 1.0) < 0.05
    assert rep.c3 > 0
    text = rep.to_text()
    assert "growth_kappa = " in text and "passed = true" in text


def test_check_assumptions_flags_non_monotone():
    bad = Custom(beta=lambda r: np.sin(6 * r), dbeta=lambda r: 6 * np.cos(6 * r),
                 beta_hat=lambda r: (1 - np.cos(6 * r)) / 6)
    rep = pot.check_assumptions(PotentialSpec(bad), 200, 0.0)
    assert not rep.monotone
    assert not rep.passed


def test_no_double_well_warning():
    rep = pot.check_assumptions(PotentialSpec(Logarithmic(1.0, 0.5)), 200, 0.0)
    assert any("no double-well" in w for w in rep.warnings)
    rep = pot.check_assumptions(PotentialSpec(Logarithmic(0.3, 1.0)), 200, 0.0)
    assert not any("no double-well" in w for w in rep.warnings)
