"""Implicit time stepping for the bulk-surface Cahn-Hilliard system.

One step solves, for ``X = (phi, mu, theta)`` at the new time level, the
discrete weak form

* potential rows (tested with trace-linked pairs)::

      W mu + T' hx theta = K phi + W (beta(phi) + pi*) + T' [Ks psi + hx (beta_G(psi) + pi_G*)]

* mass rows, ``L > 0`` (tested with independent pairs)::

      W (phi - phi_old)/tau + K mu - chi T' hx (theta - T mu) = 0
      hx (psi - psi_old)/tau + sigma Ks theta + chi hx (theta - T mu) = 0

* mass rows, ``L = 0`` (trace-linked test, ``theta = T mu``)::

      (W + T' hx T)(phi - phi_old)/tau + K mu + sigma T' Ks theta = 0
      theta - T mu = 0

``pi*`` is evaluated at the old level (convex splitting) or the new level
(fully implicit).  Summing the mass rows annihilates every stiffness term, so
the generalized mean is conserved by construction; testing the mass rows with
the chemical potentials and the potential rows with the increment gives the
discrete energy inequality.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import potentials as pot
from .errors import ConvergenceError, DomainError, InitError, RegimeError
from .fields import BulkSurfacePair, EllipticOperator, Linkage, generalized_mean, total_energy
from .grid import SlabGrid, lap_bulk, lap_surface, normal_derivative
from .model import ModelParams, chi

log = logging.getLogger(__name__)

__all__ = [
    "ModelParams",
    "Scheme",
    "StepConfig",
    "SimState",
    "StepDiagnostics",
    "Discretization",
    "assemble_residual",
    "initial_state",
    "newton_solve",
    "advance",
    "run_trajectory",
    "chi",
]


class Scheme(str, enum.Enum):
    CONVEX_SPLIT = "convex_split"
    FULLY_IMPLICIT = "fully_implicit"


@dataclass(frozen=True)
class StepConfig:
    tau: float = 1e-3
    scheme: Scheme = Scheme.CONVEX_SPLIT
    newton_tol: float = 1e-10
    newton_max: int = 50
    backtrack: float = 0.5
    max_backtracks: int = 30
    phase_cap: float = 1.0 - 1e-12
    max_halvings: int = 10
    # factorizations are reused within blocks of this many steps
    jacobian_reuse: int = 20

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.jacobian_reuse < 1:
            raise ValueError("jacobian_reuse must be >= 1")
        object.__setattr__(self, "scheme", Scheme(self.scheme))


@dataclass
class SimState:
    t: float
    phi: BulkSurfacePair
    mu: BulkSurfacePair
    step: int = 0

    def copy(self) -> "SimState":
        return SimState(self.t, self.phi.copy(), self.mu.copy(), self.step)


@dataclass
class StepDiagnostics:
    t: float
    energy: float
    mean: float
    dissipation: float
    velocity: float
    delta_sep: float
    max_abs_phi: float
    min_phi: float
    newton_iters: int
    energy_change: float = 0.0
    balance_defect: float = 0.0
    tau: float = 0.0


class Discretization:
    """Residual and Jacobian of one implicit step on a fixed grid and regime."""

    def __init__(self, grid: SlabGrid, params: ModelParams, cfg: StepConfig):
        self.grid, self.params, self.cfg = grid, params, cfg
        g = grid
        self.nb, self.ns = g.n_bulk, g.n_surf
        self.spec = params.potential
        self.eps = params.eps
        self.chi = params.chi
        self.implicit_pi = cfg.scheme is Scheme.FULLY_IMPLICIT
        hx = g.hx
        self.surf_count = np.asarray(g.T.sum(axis=0)).ravel()
        self.m_lumped = g.w_flat + hx * self.surf_count
        self.H0 = (g.K + g.T.T @ g.Ks @ g.T).tocsr()
        self.elliptic = EllipticOperator(g, params.L, params.sigma)
        self._jac_cache = {}

    # -- nonlinear terms -------------------------------------------------
    def _beta(self, x, side):
        if self.eps is None:
            cap = self.cfg.phase_cap
            if np.any(np.abs(x) >= 1.0):
                raise DomainError("iterate left the open phase interval")
            x = np.clip(x, -cap, cap)
        return pot.beta_terms(self.spec, side, x, self.eps)

    def _pi(self, x, side):
        return pot.eval_pi(self.spec, x, side)

    def gradient(self, phi, phi_old):
        """Energy gradient (split as configured) and its diagonal Jacobian parts."""
        g = self.grid
        psi, psi_old = g.T @ phi, g.T @ phi_old
        b, db = self._beta(phi, pot.BULK)
        bg, dbg = self._beta(psi, pot.BOUNDARY)
        if self.implicit_pi:
            p, dp = self._pi(phi, pot.BULK)
            pg, dpg = self._pi(psi, pot.BOUNDARY)
        else:
            p, _ = self._pi(phi_old, pot.BULK)
            pg, _ = self._pi(psi_old, pot.BOUNDARY)
            dp = np.zeros_like(phi)
            dpg = np.zeros_like(psi)
        grad = self.H0 @ phi + g.w_flat * (b + p) + g.T.T @ (g.hx * (bg + pg))
        diag = g.w_flat * (db + dp) + g.T.T @ (g.hx * (dbg + dpg))
        return grad, diag

    # -- scaling ---------------------------------------------------------
    @property
    def row_scale(self):
        if "scale" not in self._jac_cache:
            g, tau = self.grid, self.cfg.tau
            s_pot = 1.0 / self.m_lumped
            if self.params.L > 0:
                s_mass = np.concatenate([tau / g.w_flat, np.full(self.ns, tau / g.hx)])
            else:
                s_mass = np.concatenate([tau / self.m_lumped, np.ones(self.ns)])
            self._jac_cache["scale"] = np.concatenate([s_pot, s_mass])
        return self._jac_cache["scale"]

    def split(self, X):
        nb = self.nb
        return X[:nb], X[nb:2 * nb], X[2 * nb:]

    def blocks(self, X, phi_old):
        """Named unscaled residual blocks."""
        g, tau, c, sigma = self.grid, self.cfg.tau, self.chi, self.params.sigma
        phi, mu, theta = self.split(X)
        grad, _ = self.gradient(phi, phi_old)
        out = {"potential": g.w_flat * mu + g.T.T @ (g.hx * theta) - grad}
        dphi = (phi - phi_old) / tau
        if self.params.L > 0:
            jump = theta - g.T @ mu
            out["mass_bulk"] = g.w_flat * dphi + g.K @ mu - c * g.hx * (g.T.T @ jump)
            out["mass_surface"] = g.hx * (g.T @ dphi) + sigma * (g.Ks @ theta) + c * g.hx * jump
        else:
            out["mass"] = self.m_lumped * dphi + g.K @ mu + sigma * (g.T.T @ (g.Ks @ theta))
            out["coupling"] = theta - g.T @ mu
        return out

    def residual(self, X, phi_old):
        """Stacked residual, each row scaled to pointwise units."""
        b = self.blocks(X, phi_old)
        if self.params.L > 0:
            r = np.concatenate([b["potential"], b["mass_bulk"], b["mass_surface"]])
        else:
            r = np.concatenate([b["potential"], b["mass"], b["coupling"]])
        return self.row_scale * r

    def _jac_template(self):
        if "template" in self._jac_cache:
            return self._jac_cache["template"]
        g, tau, c, sigma = self.grid, self.cfg.tau, self.chi, self.params.sigma
        T, hx = g.T, g.hx
        W = sp.diags(g.w_flat)
        TtHx = hx * T.T
        if self.params.L > 0:
            rows = [
                [-self.H0, W, TtHx],
                [W / tau, g.K + c * hx * (T.T @ T), -c * TtHx],
                [hx * T / tau, -c * hx * T, sigma * g.Ks + c * hx * sp.identity(self.ns)],
            ]
        else:
            rows = [
                [-self.H0, W, TtHx],
                [sp.diags(self.m_lumped) / tau, g.K, sigma * (T.T @ g.Ks)],
                [None, -T, sp.identity(self.ns)],
            ]
        J = sp.diags(self.row_scale) @ sp.bmat(rows, format="csc")
        J.sum_duplicates()
        J.sort_indices()
        # positions of the (i, i) entries of the potential/phi block
        pos = np.empty(self.nb, dtype=np.int64)
        for i in range(self.nb):
            start, stop = J.indptr[i], J.indptr[i + 1]
            k = np.searchsorted(J.indices[start:stop], i)
            pos[i] = start + k
        self._jac_cache["template"] = (J, pos)
        return J, pos

    def jacobian(self, X, phi_old):
        J0, pos = self._jac_template()
        phi = self.split(X)[0]
        _, diag = self.gradient(phi, phi_old)
        J = J0.copy()
        J.data[pos] -= self.row_scale[: self.nb] * diag
        return J

    # -- chemical potential of a given phase field -----------------------
    def chemical_potential(self, phi_pair: BulkSurfacePair) -> BulkSurfacePair:
        """Pointwise ``mu`` and ``theta`` with the one-sided normal derivative split.

        The result satisfies the potential rows exactly (summation by parts).
        For ``L = 0`` the returned pair is made trace-linked by solving for the
        common boundary value, which keeps the potential rows satisfied.
        """
        g = self.grid
        phi = phi_pair.bulk
        psi = g.trace(phi)
        b, _ = self._beta(phi, pot.BULK)
        bg, _ = self._beta(psi, pot.BOUNDARY)
        p, _ = self._pi(phi, pot.BULK)
        pg, _ = self._pi(psi, pot.BOUNDARY)
        if self.params.L > 0:
            mu = -lap_bulk(g, phi) + b + p
            theta = normal_derivative(g, phi) - lap_surface(g, psi) + bg + pg
            return BulkSurfacePair(mu, theta, Linkage.INDEPENDENT)
        flat = phi.ravel()
        grad = self.H0 @ flat + g.w_flat * (b + p).ravel() + g.T.T @ (g.hx * (bg + pg).ravel())
        mu = (grad / self.m_lumped).reshape(g.shape)
        return BulkSurfacePair.from_bulk(g, mu)

    def pack(self, state: SimState) -> np.ndarray:
        return np.concatenate([state.phi.bulk.ravel(), state.mu.bulk.ravel(), state.mu.surf.ravel()])

    def unpack(self, X, t, step) -> SimState:
        g = self.grid
        phi, mu, theta = self.split(X)
        phi_pair = BulkSurfacePair.from_bulk(g, phi.reshape(g.shape))
        if self.params.L > 0:
            mu_pair = BulkSurfacePair(mu.reshape(g.shape), theta.reshape(g.surf_shape))
        else:
            mu_pair = BulkSurfacePair.from_bulk(g, mu.reshape(g.shape))
        return SimState(t, phi_pair, mu_pair, step)


def assemble_residual(grid, params, cfg, state_old: SimState, candidate: SimState,
                      scaled=False):
    """Residual blocks of one step from ``state_old`` to ``candidate``.

    Returns a dict of named blocks (``potential`` plus ``mass_bulk`` and
    ``mass_surface`` for ``L > 0``, or ``mass`` and ``coupling`` for
    ``L = 0``) in weak, unscaled form unless ``scaled``.
    """
    disc = Discretization(grid, params, cfg)
    _check_linkage(params, candidate)
    if params.eps is None and np.any(np.abs(candidate.phi.bulk) >= cfg.phase_cap):
        raise DomainError("candidate outside the phase cap")
    X = disc.pack(candidate)
    phi_old = state_old.phi.bulk.ravel()
    if scaled:
        return disc.residual(X, phi_old)
    return disc.blocks(X, phi_old)


def _check_linkage(params, state):
    if params.L == 0 and not np.array_equal(state.mu.surf, np.stack([state.mu.bulk[:, 0], state.mu.bulk[:, -1]])):
        raise RegimeError("L = 0 requires theta equal to the trace of mu")


def initial_state(grid, params, cfg, phi0, t0=0.0) -> SimState:
    """State at ``t0`` from a bulk field or pair; the surface part is its trace."""
    bulk = phi0 if isinstance(phi0, np.ndarray) else next(iter(phi0))
    phi0 = BulkSurfacePair.from_bulk(grid, bulk)
    disc = Discretization(grid, params, cfg)
    mean = generalized_mean(grid, phi0)
    if not -1.0 < mean < 1.0:
        raise InitError(f"initial generalized mean {mean} outside (-1, 1)")
    if params.eps is None and np.max(np.abs(phi0.bulk)) > 1.0 - 1e-6:
        raise InitError("exact mode needs |phi0| <= 1 - 1e-6")
    return SimState(t0, phi0, disc.chemical_potential(phi0), 0)


def _factor(J):
    J = J.tocsc()
    lu = spla.splu(J, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                   options=dict(SymmetricMode=True))
    probe = np.ones(J.shape[0])
    if not np.linalg.norm(J @ lu.solve(probe) - probe) < 1e-8 * np.sqrt(J.shape[0]):
        lu = spla.splu(J)
    return lu


class FactorCache:
    """Holds one Jacobian factorization for reuse by later Newton iterations."""

    def __init__(self):
        self.lu = None
        self.factorizations = 0

    def clear(self):
        self.lu = None


def _newton(disc: Discretization, X0, phi_old, cfg: StepConfig, cache: Optional[FactorCache] = None):
    """Damped (possibly chord) Newton; returns ``(X, iterations, residual)``.

    A cached factorization is reused while it contracts the residual well;
    otherwise the Jacobian is refactored at the current iterate.  Mass rows
    of the Jacobian do not depend on the iterate, so every full update
    satisfies them to roundoff whatever factorization is used.
    """
    cache = cache or FactorCache()
    X = X0.copy()
    R = disc.residual(X, phi_old)
    res = float(np.max(np.abs(R)))
    exact = disc.eps is None
    nb = disc.nb
    fresh = False
    for it in range(cfg.newton_max + 1):
        # at least one update: near equilibrium the old state alone can pass the
        # tolerance, which would freeze the trajectory
        if res < cfg.newton_tol and it > 0:
            return X, it, res
        if it == cfg.newton_max:
            break
        if cache.lu is None:
            try:
                cache.lu = _factor(disc.jacobian(X, phi_old))
            except RuntimeError as exc:
                raise ConvergenceError(f"singular Jacobian: {exc}", residual=res, iterations=it)
            cache.factorizations += 1
            fresh = True
        delta = cache.lu.solve(-R)
        lam = 1.0
        merit = float(R @ R)
        accepted = False
        for _ in range(cfg.max_backtracks + 1):
            Xn = X + lam * delta
            if not exact or np.max(np.abs(Xn[:nb])) < cfg.phase_cap:
                Rn = disc.residual(Xn, phi_old)
                if float(Rn @ Rn) < merit or float(np.max(np.abs(Rn))) < cfg.newton_tol:
                    accepted = True
                    break
            if not fresh:
                break
            lam *= cfg.backtrack
        if not accepted:
            if not fresh:
                cache.clear()
                continue
            if exact and np.max(np.abs(Xn[:nb])) >= cfg.phase_cap:
                raise ConvergenceError("iterate could not be kept inside the phase cap",
                                       residual=res, iterations=it)
            raise ConvergenceError("line search failed", residual=res, iterations=it)
        step_size = float(np.max(np.abs(Xn - X)))
        X, R = Xn, Rn
        res_new = float(np.max(np.abs(R)))
        if lam == 1.0 and step_size <= 1e-14 * (1.0 + float(np.max(np.abs(X)))):
            # roundoff floor: a full update that no longer moves the iterate
            return X, it + 1, res_new
        if lam < 1.0 or res_new > 0.25 * res:
            # keep mass rows exact: only a full update may end the iteration
            if not fresh or lam < 1.0:
                cache.clear()
        res = res_new
        fresh = False
        if lam < 1.0 and res < cfg.newton_tol:
            res = max(res, cfg.newton_tol)
    raise ConvergenceError(f"Newton did not converge (residual {res:.3e})", residual=res,
                           iterations=cfg.newton_max)


def newton_solve(grid, params, cfg, state_old: SimState, disc: Optional[Discretization] = None):
    """One implicit step of size ``cfg.tau``; returns ``(state_new, iterations)``."""
    disc = disc or Discretization(grid, params, cfg)
    X0 = disc.pack(state_old)
    X, its, _ = _newton(disc, X0, state_old.phi.bulk.ravel(), cfg)
    return disc.unpack(X, state_old.t + cfg.tau, state_old.step + 1), its


class Stepper:
    """Holds per-step-size discretizations so factor-free setup is reused."""

    def __init__(self, grid: SlabGrid, params: ModelParams, cfg: StepConfig):
        self.grid, self.params, self.cfg = grid, params, cfg
        self._discs = {}
        self._caches = {}
        self.elliptic = EllipticOperator(grid, params.L, params.sigma)

    def disc(self, tau):
        if tau not in self._discs:
            self._discs[tau] = Discretization(self.grid, self.params, replace(self.cfg, tau=tau))
            self._caches[tau] = FactorCache()
        return self._discs[tau]

    @property
    def factorizations(self) -> int:
        return sum(c.factorizations for c in self._caches.values())

    def energy(self, phi_pair):
        return total_energy(self.grid, self.params.potential, phi_pair, self.params.eps)

    def dissipation(self, mu_pair):
        g, p = self.grid, self.params
        flat = mu_pair.bulk.ravel()
        val = flat @ (g.K @ flat) + p.sigma * (mu_pair.surf.ravel() @ (g.Ks @ mu_pair.surf.ravel()))
        if p.L > 0:
            jump = g.trace(mu_pair.bulk) - mu_pair.surf
            val += p.chi * g.hx * float(np.sum(jump * jump))
        return float(val)

    def _substep(self, state, tau, depth):
        disc = self.disc(tau)
        try:
            X, its, _ = _newton(disc, disc.pack(state), state.phi.bulk.ravel(), disc.cfg,
                                self._caches[tau])
        except ConvergenceError:
            if depth >= self.cfg.max_halvings:
                raise
            log.info("Newton failed at tau=%g; halving", tau)
            half = 0.5 * tau
            mid, its1, d1 = self._substep(state, half, depth + 1)
            end, its2, d2 = self._substep(mid, half, depth + 1)
            return end, its1 + its2, d1 + d2
        new = disc.unpack(X, state.t + tau, state.step)
        return new, its, tau * self.dissipation(new.mu)

    def advance(self, state: SimState, energy_old: Optional[float] = None):
        tau = self.cfg.tau
        if state.step % self.cfg.jacobian_reuse == 0:
            # block boundary: results depend only on the state, never on history
            for c in self._caches.values():
                c.clear()
        if energy_old is None:
            energy_old = self.energy(state.phi)
        new, its, tau_d = self._substep(state, tau, 0)
        new.step = state.step + 1
        new.t = state.t + tau
        g = self.grid
        E = self.energy(new.phi)
        vel = BulkSurfacePair(
            (new.phi.bulk - state.phi.bulk) / tau, (new.phi.surf - state.phi.surf) / tau
        )
        vnorm = self.elliptic.norm(vel, method="direct")
        amax = max(float(np.max(np.abs(new.phi.bulk))), float(np.max(np.abs(new.phi.surf))))
        diag = StepDiagnostics(
            t=new.t,
            energy=E,
            mean=generalized_mean(g, new.phi),
            dissipation=tau_d / tau,
            velocity=vnorm,
            delta_sep=1.0 - amax,
            max_abs_phi=amax,
            min_phi=float(np.min(new.phi.bulk)),
            newton_iters=its,
            energy_change=E - energy_old,
            balance_defect=energy_old - E - tau_d,
            tau=tau,
        )
        return new, diag


def advance(grid, params, cfg, state: SimState):
    """Single step with diagnostics; see :class:`Stepper` for repeated use."""
    return Stepper(grid, params, cfg).advance(state)


def run_trajectory(grid, params, cfg, init, T_end, output_every=1, steady_tol=1e-9,
                   on_step: Optional[Callable] = None, stepper: Optional[Stepper] = None):
    """Integrate to ``T_end`` and return a :class:`TrajectoryRecord`.

    ``init`` is either a phase-field pair (chemical potential derived from it)
    or a full :class:`SimState` for resumption.  ``on_step(state, diag)`` is
    called after every step.  With ``steady_tol > 0`` the run stops early
    once the H^-1 velocity falls below it.
    """
    from .diagnostics import TrajectoryRecord

    stepper = stepper or Stepper(grid, params, cfg)
    state = init if isinstance(init, SimState) else initial_state(grid, params, cfg, init)
    E = stepper.energy(state.phi)
    record = TrajectoryRecord.start(state, E, generalized_mean(grid, state.phi))
    n_total = int(round((T_end - state.t) / cfg.tau))
    for k in range(n_total):
        state, diag = stepper.advance(state, E)
        E = diag.energy
        record.accumulate(diag)
        done = steady_tol > 0 and diag.velocity < steady_tol
        last = k == n_total - 1 or done
        if state.step % output_every == 0 or last:
            record.append(diag)
        if on_step is not None:
            on_step(state, diag)
        if done:
            record.status = "converged"
            break
    record.final_state = state
    return record
