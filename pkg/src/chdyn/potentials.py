"""Singular potentials, their Moreau-Yosida regularizations and assumption checks.

Each potential is split as ``F = beta_hat + pi_hat`` where ``beta_hat`` is the
convex (possibly singular) part with derivative ``beta`` and ``pi_hat`` is a
smooth perturbation with globally Lipschitz derivative ``pi``.  The bulk and
boundary sides each carry such a pair; ``rho`` and ``c0`` are the domination
constants relating the two singular parts.

All evaluation functions accept scalars or numpy arrays and are vectorized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .errors import ConvergenceError, DomainError

ArrayLike = Union[float, np.ndarray]

# largest double below one; bracket edge for singular resolvents
_ONE_MINUS = float(np.nextafter(1.0, 0.0))

BULK = "bulk"
BOUNDARY = "boundary"


@dataclass(frozen=True)
class Logarithmic:
    """Flory-Huggins type potential.

    ``beta(r) = (theta/2) ln((1+r)/(1-r))`` and ``pi(r) = -theta_c r``, so that
    ``beta_hat + pi_hat`` is the usual logarithmic free energy with temperature
    ``theta`` and critical temperature ``theta_c``.
    """

    theta: float = 1.0
    theta_c: float = 0.0
    singular: bool = field(default=True, init=False)

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError("theta must be positive")
        if self.theta_c < 0:
            raise ValueError("theta_c must be nonnegative")

    def beta(self, r):
        return self.theta * np.arctanh(r)

    def dbeta(self, r):
        return self.theta / (1.0 - r * r)

    def beta_hat(self, r):
        r = np.asarray(r, dtype=float)
        return 0.5 * self.theta * (_xlogx(1.0 + r) + _xlogx(1.0 - r))

    def pi(self, r):
        return -self.theta_c * np.asarray(r, dtype=float)

    def dpi(self, r):
        return np.full_like(np.asarray(r, dtype=float), -self.theta_c)

    def pi_hat(self, r):
        r = np.asarray(r, dtype=float)
        return -0.5 * self.theta_c * r * r

    @property
    def lipschitz_pi(self):
        return self.theta_c


@dataclass(frozen=True)
class Custom:
    """User supplied split ``F = beta_hat + pi_hat``.

    ``beta_hat_ends`` gives the values of ``beta_hat`` at -1 and +1 for a
    singular kind (``math.inf`` is allowed).
    """

    beta: Callable
    dbeta: Callable
    beta_hat: Callable
    pi: Callable = staticmethod(lambda r: 0.0 * np.asarray(r, dtype=float))
    dpi: Callable = staticmethod(lambda r: 0.0 * np.asarray(r, dtype=float))
    pi_hat: Callable = staticmethod(lambda r: 0.0 * np.asarray(r, dtype=float))
    singular: bool = False
    beta_hat_ends: tuple = (math.inf, math.inf)


Potential = Union[Logarithmic, Custom]


@dataclass(frozen=True)
class PotentialSpec:
    bulk: Potential
    boundary: Optional[Potential] = None
    rho: float = 1.0
    c0: float = 0.0

    def __post_init__(self):
        if self.boundary is None:
            object.__setattr__(self, "boundary", self.bulk)
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if self.c0 < 0:
            raise ValueError("c0 must be nonnegative")

    def part(self, side: str = BULK) -> Potential:
        if side == BULK:
            return self.bulk
        if side == BOUNDARY:
            return self.boundary
        raise ValueError(f"unknown side {side!r}")

    def scale(self, side: str) -> float:
        """Factor multiplying epsilon in the resolvent of the given side."""
        return 1.0 if side == BULK else self.rho


@dataclass(frozen=True)
class YosidaConfig:
    eps: float
    newton_tol: float = 1e-13
    max_iter: int = 100

    def __post_init__(self):
        if not 0.0 < self.eps < 1.0:
            raise ValueError("eps must lie in (0, 1)")


def _xlogx(x):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(x > 0, x * np.log(np.where(x > 0, x, 1.0)), 0.0)
    return out


def _sech2(u):
    e = np.exp(-2.0 * np.abs(u))  # no overflow for large |u|
    return 4.0 * e / (1.0 + e) ** 2


def _log_cosh(u):
    a = np.abs(u)
    return a + np.log1p(np.exp(-2.0 * a)) - math.log(2.0)


def _ret(x, like):
    if np.ndim(like) == 0:
        return float(x)
    return x


def _check_open(part, r):
    if part.singular and np.any(np.abs(r) >= 1.0):
        raise DomainError("value outside (-1, 1) for a singular potential")


def eval_beta(spec: PotentialSpec, r: ArrayLike, side: str = BULK):
    """Return ``(beta(r), beta'(r))`` for the requested side."""
    part = spec.part(side)
    x = np.asarray(r, dtype=float)
    _check_open(part, x)
    return _ret(part.beta(x), r), _ret(part.dbeta(x), r)


def eval_pi(spec: PotentialSpec, r: ArrayLike, side: str = BULK):
    part = spec.part(side)
    x = np.asarray(r, dtype=float)
    return _ret(part.pi(x), r), _ret(part.dpi(x), r)


def eval_beta_hat(spec: PotentialSpec, r: ArrayLike, side: str = BULK):
    part = spec.part(side)
    x = np.asarray(r, dtype=float)
    if part.singular:
        if np.any(np.abs(x) > 1.0):
            raise DomainError("beta_hat is +inf outside [-1, 1]")
        if isinstance(part, Custom):
            lo, hi = part.beta_hat_ends
            inner = np.clip(x, -_ONE_MINUS, _ONE_MINUS)
            val = np.where(x <= -1.0, lo, np.where(x >= 1.0, hi, part.beta_hat(inner)))
            return _ret(val, r)
    return _ret(part.beta_hat(x), r)


def eval_energy_density(spec: PotentialSpec, r: ArrayLike, side: str = BULK):
    """``beta_hat(r) + pi_hat(r)``, finite on the closed interval [-1, 1]."""
    part = spec.part(side)
    x = np.asarray(r, dtype=float)
    val = np.asarray(eval_beta_hat(spec, x, side)) + part.pi_hat(x)
    return _ret(val, r)


def _safeguarded_newton(f, fprime, x, lo, hi, tol, max_iter):
    """Vectorized Newton iteration kept inside a shrinking bracket.

    ``f`` must be increasing with ``f(lo) <= 0 <= f(hi)``.
    """
    x = np.array(x, dtype=float)
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    fx = f(x)
    for it in range(max_iter + 1):
        done = np.abs(fx) < tol
        if np.all(done):
            return x, fx, it
        if it == max_iter:
            break
        pos = fx > 0
        hi = np.where(pos & ~done, x, hi)
        lo = np.where(~pos & ~done, x, lo)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = x - fx / fprime(x)
        bad = ~np.isfinite(step) | (step <= lo) | (step >= hi)
        xn = np.where(bad, 0.5 * (lo + hi), step)
        # bracket collapsed to adjacent doubles: nothing more to gain
        stuck = ~done & (xn == x)
        x = np.where(done, x, xn)
        fx = np.where(done, fx, f(x))
        if np.any(stuck):
            break
    done = np.abs(fx) < tol
    worst = float(np.max(np.abs(fx[~done]))) if np.any(~done) else 0.0
    raise ConvergenceError(
        f"resolvent did not converge (residual {worst:.3e})",
        residual=worst,
        iterations=it,
    )


def _log_dual(part: Logarithmic, r, c, tol, max_iter):
    """Solve ``c s + tanh(s/theta) = r`` for ``s`` (the Yosida value)."""
    th = part.theta
    f = lambda s: c * s + np.tanh(s / th) - r
    fp = lambda s: c + _sech2(s / th) / th
    lo = (r - 1.0) / c
    hi = (r + 1.0) / c
    s0 = np.clip(r / (c + 1.0 / th), lo, hi)
    s, _, _ = _safeguarded_newton(f, fp, s0, lo, hi, tol, max_iter)
    return s


def _custom_resolvent(part: Custom, r, c, tol, max_iter):
    if part.singular:
        lo = np.full_like(r, -_ONE_MINUS)
        hi = np.full_like(r, _ONE_MINUS)
    else:
        lo = r - np.abs(r) - 1.0
        hi = r + np.abs(r) + 1.0
    f = lambda j: j + c * part.beta(j) - r
    fp = lambda j: 1.0 + c * part.dbeta(j)
    j0 = np.clip(r, lo, hi) if not part.singular else np.zeros_like(r)
    j, _, _ = _safeguarded_newton(f, fp, j0, lo, hi, tol, max_iter)
    return j


def _resolve(spec, side, r, eps, cfg):
    """Return ``(J, beta_eps, c)`` with ``c = eps`` or ``eps*rho``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    tol = cfg.newton_tol if cfg else 1e-13
    max_iter = cfg.max_iter if cfg else 100
    part = spec.part(side)
    c = eps * spec.scale(side)
    x = np.asarray(r, dtype=float)
    if isinstance(part, Logarithmic):
        s = _log_dual(part, x, c, tol, max_iter)
        j = np.tanh(s / part.theta)
        return j, s, c
    j = _custom_resolvent(part, x, c, tol, max_iter)
    return j, (x - j) / c, c


def resolvent(spec: PotentialSpec, side: str, r: ArrayLike, eps: float,
              cfg: Optional[YosidaConfig] = None):
    """Resolvent ``J = (I + c beta)^{-1}(r)`` with ``c = eps`` (bulk) or ``eps*rho``."""
    j, _, _ = _resolve(spec, side, r, eps, cfg)
    return _ret(j, r)


def resolvent_residual(spec, side, r, eps, cfg=None):
    """``|J + c beta(J) - r|`` evaluated through the Yosida value.

    Near the singular endpoints ``J`` is within one ulp of +-1 and ``beta(J)``
    cannot be recomputed from the rounded ``J``; the Yosida value carries it.
    """
    j, s, c = _resolve(spec, side, r, eps, cfg)
    return _ret(np.abs(j + c * s - np.asarray(r, dtype=float)), r)


def yosida_beta(spec: PotentialSpec, side: str, r: ArrayLike, eps: float,
                cfg: Optional[YosidaConfig] = None):
    """Moreau-Yosida approximation ``beta_eps(r) = (r - J(r)) / c``."""
    _, s, _ = _resolve(spec, side, r, eps, cfg)
    return _ret(s, r)


def yosida_terms(spec, side, r, eps, cfg=None):
    """``(beta_eps(r), beta_eps'(r))``; the derivative is ``1/(1/beta'(J) + c)``."""
    part = spec.part(side)
    j, s, c = _resolve(spec, side, r, eps, cfg)
    if isinstance(part, Logarithmic):
        inv = _sech2(s / part.theta) / part.theta
    else:
        with np.errstate(divide="ignore"):
            inv = 1.0 / part.dbeta(j)
    return _ret(s, r), _ret(1.0 / (inv + c), r)


def moreau_envelope(spec: PotentialSpec, side: str, r: ArrayLike, eps: float,
                    cfg: Optional[YosidaConfig] = None):
    """``beta_hat_eps(r) = |r - J|^2 / (2c) + beta_hat(J)``.

    Finite for every real ``r``; outside [-1, 1] it is the Yosida extension
    and no longer approximates the physical free energy.
    """
    part = spec.part(side)
    j, s, c = _resolve(spec, side, r, eps, cfg)
    if isinstance(part, Logarithmic):
        u = s / part.theta
        inner = part.theta * (j * u - _log_cosh(u))
    else:
        inner = np.asarray(eval_beta_hat(spec, j, side))
    return _ret(0.5 * c * s * s + inner, r)


def beta_terms(spec, side, r, eps=None):
    """Singular part and its derivative, exact (``eps=None``) or regularized."""
    if eps is None:
        return eval_beta(spec, r, side)
    return yosida_terms(spec, side, r, eps)


def beta_hat_term(spec, side, r, eps=None):
    if eps is None:
        return eval_beta_hat(spec, r, side)
    return moreau_envelope(spec, side, r, eps)


@dataclass
class AssumptionReport:
    varpi: float
    varpi_boundary: float
    monotone: bool
    normalized: bool
    boundary_domination: bool
    domination_excess: float
    lipschitz_pi: float
    lipschitz_pi_boundary: float
    pi_lipschitz: bool
    mean_interior: bool
    kappa: float
    kappa_negative: float
    singular_growth: bool
    c3: float
    c4: float
    sign_condition: bool
    double_well: bool
    warnings: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all([
            self.varpi > 0 and self.varpi_boundary > 0,
            self.monotone,
            self.normalized,
            self.boundary_domination,
            self.pi_lipschitz,
            self.mean_interior,
            self.singular_growth,
            self.sign_condition,
        ])

    def to_text(self) -> str:
        rows = [
            ("varpi", self.varpi),
            ("varpi_boundary", self.varpi_boundary),
            ("monotone", self.monotone),
            ("normalized", self.normalized),
            ("boundary_domination", self.boundary_domination),
            ("domination_excess", self.domination_excess),
            ("lipschitz_pi", self.lipschitz_pi),
            ("lipschitz_pi_boundary", self.lipschitz_pi_boundary),
            ("pi_lipschitz", self.pi_lipschitz),
            ("mean_interior", self.mean_interior),
            ("growth_kappa", self.kappa),
            ("growth_kappa_negative", self.kappa_negative),
            ("singular_growth", self.singular_growth),
            ("sign_c3", self.c3),
            ("sign_c4", self.c4),
            ("sign_condition", self.sign_condition),
            ("double_well", self.double_well),
            ("passed", self.passed),
        ]
        rows += [("warning", w) for w in self.warnings]
        return "\n".join(f"{k} = {_fmt(v)}" for k, v in rows) + "\n"


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


KAPPA_MARGIN = 0.01


def _fit_kappa(part, sign):
    delta = np.logspace(-8, -2, 25)
    vals = np.abs(part.beta(sign * (1.0 - 2.0 * delta)))
    x = np.log(np.abs(np.log(delta)))
    slope, _ = np.polyfit(x, np.log(vals), 1)
    return float(slope)


def check_assumptions(spec: PotentialSpec, sample_count: int = 1000,
                      mean0: float = 0.0) -> AssumptionReport:
    """Sample-based validation of the structural assumptions on ``spec``."""
    if sample_count < 100:
        raise ValueError("sample_count must be at least 100")
    # odd node count so that r = 0 is sampled
    r = np.linspace(-1.0, 1.0, 2 * (sample_count // 2) + 3)[1:-1]
    bulk, bnd = spec.bulk, spec.boundary
    warnings = []

    b, db = bulk.beta(r), bulk.dbeta(r)
    bg, dbg = bnd.beta(r), bnd.dbeta(r)
    varpi = float(np.min(db))
    varpi_b = float(np.min(dbg))
    monotone = bool(np.all(np.diff(b) > 0) and np.all(np.diff(bg) > 0))
    zero = np.zeros(1)
    normalized = bool(
        np.all(np.abs(bulk.beta(zero)) < 1e-14)
        and np.all(np.abs(bnd.beta(zero)) < 1e-14)
        and np.all(np.abs(bulk.beta_hat(zero)) < 1e-14)
        and np.all(np.abs(bnd.beta_hat(zero)) < 1e-14)
    )
    slack = np.abs(b) - (spec.rho * np.abs(bg) + spec.c0)
    excess = float(max(0.0, np.max(slack)))
    # identical sides must pass exactly; allow only roundoff otherwise
    domination = bool(np.all(slack <= 1e-12 * (1.0 + np.abs(b))))

    def lip(fn):
        vals = fn(r)
        return float(np.max(np.abs(np.diff(vals) / np.diff(r))))

    lip_pi, lip_pi_b = lip(bulk.pi), lip(bnd.pi)
    pi_ok = bool(np.isfinite(lip_pi) and np.isfinite(lip_pi_b))
    interior = bool(-1.0 < mean0 < 1.0)

    if bulk.singular:
        kappa = _fit_kappa(bulk, 1.0)
        kappa_neg = _fit_kappa(bulk, -1.0)
        growth = bool(min(kappa, kappa_neg) > 0.5 + KAPPA_MARGIN)
    else:
        kappa = kappa_neg = float("nan")
        growth = False
        warnings.append("growth check needs a singular bulk potential")

    c3 = 0.5 * (1.0 - abs(mean0)) if interior else 0.0
    with np.errstate(invalid="ignore"):
        c4 = float(np.max(c3 * np.abs(bg) - bg * (r - mean0)))
    sign = bool(c3 > 0 and np.isfinite(c4))

    double_well = True
    if isinstance(bulk, Logarithmic):
        double_well = bulk.theta_c > bulk.theta
        if not double_well:
            warnings.append("no double-well: theta_c <= theta, potential is convex")

    return AssumptionReport(
        varpi=varpi,
        varpi_boundary=varpi_b,
        monotone=monotone,
        normalized=normalized,
        boundary_domination=domination,
        domination_excess=excess,
        lipschitz_pi=lip_pi,
        lipschitz_pi_boundary=lip_pi_b,
        pi_lipschitz=pi_ok,
        mean_interior=interior,
        kappa=kappa,
        kappa_negative=kappa_neg,
        singular_growth=growth,
        c3=c3,
        c4=c4,
        sign_condition=sign,
        double_well=double_well,
        warnings=warnings,
    )
