"""Steady states under the mass constraint.

At equilibrium both chemical potentials equal one constant ``mu_inf``; the
discrete stationary problem is the potential row of the stepper with
``mu = theta = mu_inf`` plus the generalized-mean constraint.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import brentq

from . import potentials as pot
from .errors import ConvergenceError, DomainError, InitError
from .fields import BulkSurfacePair, generalized_mean
from .grid import SlabGrid

log = logging.getLogger(__name__)


@dataclass
class StationaryState:
    phi: BulkSurfacePair
    mu_inf: float
    residual_norm: float
    mu_formula: float
    iterations: int

    @property
    def delta(self) -> float:
        """Separation margin ``1 - max|phi|`` of the steady state."""
        return 1.0 - float(np.max(np.abs(self.phi.bulk)))


def _parts(grid, potential, phi):
    if np.any(np.abs(phi) >= 1.0):
        raise DomainError("steady state candidate outside (-1, 1)")
    psi = grid.T @ phi
    b, db = pot.eval_beta(potential, phi, pot.BULK)
    bg, dbg = pot.eval_beta(potential, psi, pot.BOUNDARY)
    p, dp = pot.eval_pi(potential, phi, pot.BULK)
    pg, dpg = pot.eval_pi(potential, psi, pot.BOUNDARY)
    return b + p, db + dp, bg + pg, dbg + dpg


def _lumped(grid):
    return grid.w_flat + grid.hx * np.asarray(grid.T.sum(axis=0)).ravel()


def _stiffness(grid):
    return (grid.K + grid.T.T @ grid.Ks @ grid.T).tocsr()


def _weak_residual(grid, potential, phi, mu_inf, H=None):
    H = _stiffness(grid) if H is None else H
    f, _, fg, _ = _parts(grid, potential, phi)
    row = H @ phi + grid.w_flat * f + grid.T.T @ (grid.hx * fg)
    return row - _lumped(grid) * mu_inf


def steady_residual(grid: SlabGrid, potential, pair, mu_inf: float) -> float:
    """Weighted L^2 norm of the stationary residual with multiplier ``mu_inf``.

    The residual per node is the potential row divided by its lumped mass, so
    a constant state with the wrong multiplier has norm
    ``|beta(c) + pi(c) - mu_inf| * sqrt(|Omega| + |Gamma|)``.
    """
    phi = np.asarray(next(iter(pair)), dtype=float)
    m = _lumped(grid)
    r = _weak_residual(grid, potential, phi.ravel(), mu_inf) / m
    return float(np.sqrt(np.sum(m * r * r)))


def mu_infty_formula(grid: SlabGrid, potential, pair) -> float:
    """Mean of the nonlinear terms over bulk and boundary."""
    phi = np.asarray(next(iter(pair)), dtype=float).ravel()
    f, _, fg, _ = _parts(grid, potential, phi)
    total = float(np.sum(grid.w_flat * f) + grid.hx * np.sum(fg))
    return total / grid.total_measure


def solve_stationary(grid: SlabGrid, potential, mean0: float, init=None,
                     tol: float = 1e-11, max_iter: int = 100, phase_cap: float = 1.0 - 1e-12,
                     fallback_params=None, fallback_time: float = 5.0) -> StationaryState:
    """Newton on the stationary rows augmented by the mass constraint.

    Double-well potentials admit several steady states; the one returned is
    the one in the Newton basin of ``init`` (the constant state ``mean0`` by
    default).  If Newton fails and ``fallback_params`` is given, the
    evolution is run for ``fallback_time`` first and Newton is retried.
    """
    if not -1.0 < mean0 < 1.0:
        raise InitError("mean must lie in (-1, 1)")
    if init is None:
        phi = np.full(grid.n_bulk, float(mean0))
    else:
        phi = np.array(next(iter(init)), dtype=float).ravel()
        # shift the initial guess onto the constraint
        phi += mean0 - generalized_mean(grid, BulkSurfacePair.from_bulk(grid, phi.reshape(grid.shape)))
        if np.any(np.abs(phi) >= phase_cap):
            raise InitError("initial guess outside the phase interval")
    try:
        return _newton_stationary(grid, potential, mean0, phi, tol, max_iter, phase_cap)
    except ConvergenceError:
        if fallback_params is None:
            raise
    from .stepper import StepConfig, run_trajectory

    log.info("stationary Newton failed; relaxing with the evolution first")
    rec = run_trajectory(grid, fallback_params, StepConfig(tau=1e-2),
                         BulkSurfacePair.from_bulk(grid, phi.reshape(grid.shape)),
                         fallback_time, output_every=10**9, steady_tol=1e-9)
    phi = rec.final_state.phi.bulk.ravel().copy()
    return _newton_stationary(grid, potential, mean0, phi, tol, max_iter, phase_cap)


class _System:
    """Stationary rows (scaled to pointwise units) plus the mass constraint."""

    def __init__(self, grid, potential, mean0):
        self.grid, self.potential, self.mean0 = grid, potential, mean0
        self.H = _stiffness(grid)
        self.m = _lumped(grid)
        self.total = grid.total_measure
        self.ones = sp.csr_matrix(np.ones((grid.n_bulk, 1)))
        self.border = sp.csr_matrix(self.m[None, :] / self.total)

    def resid(self, phi, mu):
        r = _weak_residual(self.grid, self.potential, phi, mu, self.H) / self.m
        return np.append(r, (self.m @ phi) / self.total - self.mean0)

    def jac(self, phi):
        g = self.grid
        _, df, _, dfg = _parts(g, self.potential, phi)
        diag = g.w_flat * df + g.T.T @ (g.hx * dfg)
        top = sp.diags(1.0 / self.m) @ (self.H + sp.diags(diag))
        return sp.bmat([[top, -self.ones], [self.border, None]], format="csc")


def _newton_stationary(grid, potential, mean0, phi, tol, max_iter, phase_cap, watchdog=5):
    """Newton with a watchdog; falls back to a pinned-translation solve.

    On periodic strips the Jacobian has a nearly singular translation mode:
    discrete equilibria sit at grid-pinned interface positions, and a state
    relaxed by the evolution may lie between them, where full Newton steps
    overshoot and cycle.  After ``watchdog`` iterations without a new best
    residual the translation is handled explicitly (see ``_pinned_root``).
    """
    sysm = _System(grid, potential, mean0)
    mu = mu_infty_formula(grid, potential, (phi.reshape(grid.shape), None))
    R = sysm.resid(phi, mu)
    res = float(np.max(np.abs(R)))
    best = (phi, mu, R, res)
    stall = it = 0
    while res >= tol:
        if it == max_iter:
            raise ConvergenceError(f"stationary Newton did not converge ({best[3]:.3e})",
                                   residual=best[3], iterations=it)
        if stall >= watchdog:
            phi, mu = _pinned_root(sysm, best[0], best[1], tol, phase_cap)
            R = sysm.resid(phi, mu)
            res = float(np.max(np.abs(R)))
            best = (phi, mu, R, res)
            if res >= tol:
                raise ConvergenceError(f"stationary Newton did not converge ({res:.3e})",
                                       residual=res, iterations=it)
            break
        it += 1
        d = spla.spsolve(sysm.jac(phi), -R)
        lam = 1.0
        while np.max(np.abs(phi + lam * d[:-1])) >= phase_cap:
            lam *= 0.5
            if lam < 1e-12:
                raise ConvergenceError("stationary iterate left the phase interval",
                                       residual=best[3], iterations=it)
        phi, mu = phi + lam * d[:-1], mu + lam * d[-1]
        R = sysm.resid(phi, mu)
        res = float(np.max(np.abs(R)))
        log.debug("stationary Newton it=%d lam=%g res=%.3e", it, lam, res)
        if res < best[3]:
            best, stall = (phi, mu, R, res), 0
        else:
            stall += 1
    phi, mu, R, res = best
    pair = BulkSurfacePair.from_bulk(grid, phi.reshape(grid.shape))
    return StationaryState(
        phi=pair,
        mu_inf=float(mu),
        residual_norm=steady_residual(grid, potential, pair, mu),
        mu_formula=mu_infty_formula(grid, potential, pair),
        iterations=it,
    )


def _pinned_root(sysm: _System, phi_ref, mu0, tol, phase_cap, samples=9):
    """Equilibrium near ``phi_ref`` with the x-translation handled explicitly.

    With ``t`` the x-derivative of ``phi_ref``, the system is augmented by a
    force ``c t`` and the phase condition ``<t, M (phi - phi_ref)> = s <t, M t>``
    (``s`` is roughly the x-shift).  For fixed ``s`` this is well conditioned;
    equilibria are the roots of ``c(s)``, which is periodic in the shift with
    period at most one cell, so ``[-hx/2, hx/2]`` brackets a root.
    """
    g, m = sysm.grid, sysm.m
    field = phi_ref.reshape(g.shape)
    t = ((np.roll(field, -1, axis=0) - np.roll(field, 1, axis=0)) / (2 * g.hx)).ravel()
    tm = m * t
    norm = float(tm @ t)
    n = g.n_bulk
    cache = {}

    def solve(s):
        phi, mu, c = phi_ref + s * t, mu0, 0.0
        row = sp.csr_matrix(np.append(tm, 0.0)[None, :])
        for _ in range(50):
            R = np.concatenate([sysm.resid(phi, mu) - np.append(c * t, 0.0),
                                [float(tm @ (phi - phi_ref)) / norm - s]])
            if np.max(np.abs(R)) < 0.1 * tol:
                break
            J = sp.bmat([[sysm.jac(phi), sp.csr_matrix(np.append(-t, 0.0)[:, None])],
                         [row / norm, None]], format="csc")
            d = spla.spsolve(J, -R)
            lam = 1.0
            while np.max(np.abs(phi + lam * d[:n])) >= phase_cap:
                lam *= 0.5
                if lam < 1e-12:
                    raise ConvergenceError("pinned solve left the phase interval")
            phi, mu, c = phi + lam * d[:n], mu + lam * d[n], c + lam * d[n + 1]
        else:
            raise ConvergenceError("pinned stationary solve did not converge")
        cache[s] = (phi, mu)
        return c

    shifts = np.linspace(-0.5 * g.hx, 0.5 * g.hx, samples)
    forces = [solve(s) for s in shifts]
    order = np.argsort(np.abs(shifts))
    for k in order:
        for j in (k - 1, k + 1):
            if 0 <= j < samples and forces[k] * forces[j] <= 0:
                lo, hi = sorted((shifts[k], shifts[j]))
                s_star = brentq(solve, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
                solve(s_star)
                return cache[s_star]
    raise ConvergenceError("no equilibrium found along the translation mode")
