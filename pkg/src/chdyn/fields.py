"""Bulk-surface pairs, generalized mean, free energy and the discrete H^-1 norm."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import potentials as pot
from .errors import DomainError, MeanError, RegimeError, ShapeError, SolverError
from .grid import SlabGrid, a_bulk, a_surface, pair_stiffness

MEAN_TOL = 1e-12
LINEAR_TOL = 1e-11


class Linkage(enum.Enum):
    TRACE_LINKED = 0
    INDEPENDENT = 1


@dataclass
class BulkSurfacePair:
    bulk: np.ndarray
    surf: np.ndarray
    linkage: Linkage = Linkage.INDEPENDENT

    def __post_init__(self):
        self.bulk = np.asarray(self.bulk, dtype=float)
        self.surf = np.asarray(self.surf, dtype=float)
        if self.linkage is Linkage.TRACE_LINKED:
            tr = np.stack([self.bulk[:, 0], self.bulk[:, -1]])
            if not np.array_equal(tr, self.surf):
                raise RegimeError("trace-linked pair has surface values differing from the trace")

    @classmethod
    def from_bulk(cls, grid: SlabGrid, bulk) -> "BulkSurfacePair":
        bulk = np.array(bulk, dtype=float)
        return cls(bulk, grid.trace(bulk), Linkage.TRACE_LINKED)

    @classmethod
    def constant(cls, grid: SlabGrid, c: float) -> "BulkSurfacePair":
        return cls.from_bulk(grid, np.full(grid.shape, float(c)))

    def __iter__(self):
        yield self.bulk
        yield self.surf

    def __getitem__(self, k):
        return (self.bulk, self.surf)[k]

    def __len__(self):
        return 2

    def flat(self) -> np.ndarray:
        return np.concatenate([self.bulk.ravel(), self.surf.ravel()])

    def copy(self) -> "BulkSurfacePair":
        return BulkSurfacePair(self.bulk.copy(), self.surf.copy(), self.linkage)


def _unpack(grid, pair):
    y, yg = pair
    y = np.asarray(y, dtype=float)
    yg = np.asarray(yg, dtype=float)
    if y.shape != grid.shape or yg.shape != grid.surf_shape:
        raise ShapeError(
            f"pair shapes {y.shape}/{yg.shape} do not match grid {grid.shape}/{grid.surf_shape}"
        )
    return y, yg


def _like(pair, bulk, surf):
    linkage = getattr(pair, "linkage", Linkage.INDEPENDENT)
    if linkage is Linkage.TRACE_LINKED:
        return BulkSurfacePair(bulk, np.stack([bulk[:, 0], bulk[:, -1]]), linkage)
    return BulkSurfacePair(bulk, surf, linkage)


def l2_inner(grid: SlabGrid, y, z) -> float:
    """Lumped L^2 product of pairs: bulk quadrature plus surface quadrature."""
    (u, ug), (v, vg) = _unpack(grid, y), _unpack(grid, z)
    return float(np.sum(grid.weights * u * v) + grid.hx * np.sum(ug * vg))


def generalized_mean(grid: SlabGrid, pair) -> float:
    y, yg = _unpack(grid, pair)
    return float((np.sum(grid.weights * y) + grid.hx * np.sum(yg)) / grid.total_measure)


def mean_info(grid: SlabGrid, pair):
    y, yg = _unpack(grid, pair)
    return (
        float(np.sum(grid.weights * y) / grid.area),
        float(grid.hx * np.sum(yg) / grid.perimeter),
        generalized_mean(grid, pair),
    )


def project_zero_mean(grid: SlabGrid, pair) -> BulkSurfacePair:
    y, yg = _unpack(grid, pair)
    m = generalized_mean(grid, pair)
    return _like(pair, y - m, yg - m)


def total_energy(grid: SlabGrid, spec: pot.PotentialSpec, pair, eps=None) -> float:
    """Discrete free energy of a trace-linked pair.

    Gradient parts use the same stiffness matrices as the bilinear form.
    With ``eps`` the singular parts are replaced by their Moreau envelopes.
    """
    phi, psi = _unpack(grid, pair)
    if not np.array_equal(grid.trace(phi), psi):
        raise RegimeError("energy needs a trace-linked pair")
    if eps is None:
        if np.any(np.abs(phi) > 1.0):
            raise DomainError("order parameter outside [-1, 1]")
        f_bulk = pot.eval_energy_density(spec, phi, pot.BULK)
        f_surf = pot.eval_energy_density(spec, psi, pot.BOUNDARY)
    else:
        f_bulk = pot.moreau_envelope(spec, pot.BULK, phi, eps) + spec.bulk.pi_hat(phi)
        f_surf = pot.moreau_envelope(spec, pot.BOUNDARY, psi, eps) + spec.boundary.pi_hat(psi)
    return float(
        0.5 * a_bulk(grid, phi, phi)
        + np.sum(grid.weights * f_bulk)
        + 0.5 * a_surface(grid, psi, psi)
        + grid.hx * np.sum(f_surf)
    )


class EllipticOperator:
    """Discrete solution operator of the bulk-surface elliptic problem.

    For ``L > 0`` unknowns are independent pairs; for ``L = 0`` the surface
    unknown is the trace of the bulk unknown and is eliminated.
    """

    def __init__(self, grid: SlabGrid, L: float, sigma: float):
        self.grid = grid
        self.L = L
        self.sigma = sigma
        g = grid
        if L > 0:
            self.A = pair_stiffness(g, L, sigma)
            self.mass = np.concatenate([g.w_flat, np.full(g.n_surf, g.hx)])
        else:
            self.A = (g.K + sigma * (g.T.T @ g.Ks @ g.T)).tocsr()
            self.mass = g.w_flat + g.hx * np.asarray(g.T.sum(axis=0)).ravel()
        self.n = self.A.shape[0]
        self._lu = None

    def rhs(self, pair) -> np.ndarray:
        g = self.grid
        y, yg = _unpack(g, pair)
        if self.L > 0:
            return np.concatenate([g.w_flat * y.ravel(), g.hx * yg.ravel()])
        return g.w_flat * y.ravel() + g.T.T @ (g.hx * yg.ravel())

    def to_pair(self, x: np.ndarray) -> BulkSurfacePair:
        g = self.grid
        bulk = x[: g.n_bulk].reshape(g.shape)
        if self.L > 0:
            return BulkSurfacePair(bulk, x[g.n_bulk:].reshape(g.surf_shape), Linkage.INDEPENDENT)
        return BulkSurfacePair.from_bulk(g, bulk)

    def _remove_mean(self, x):
        return x - (self.mass @ x) / self.mass.sum()

    def solve_cg(self, b, tol=LINEAR_TOL, max_iter=None):
        """Jacobi-preconditioned CG on the consistent singular system.

        The residual is re-projected onto the range (orthogonal to constants)
        every iteration to stop roundoff drift along the kernel.
        """
        A = self.A
        n = self.n
        max_iter = max_iter or 20 * n
        dinv = 1.0 / A.diagonal()
        bnorm = np.linalg.norm(b)
        x = np.zeros(n)
        if bnorm == 0.0:
            return x
        r = b - b.mean()
        z = dinv * r
        p = z.copy()
        rz = r @ z
        for _ in range(max_iter):
            Ap = A @ p
            alpha = rz / (p @ Ap)
            x += alpha * p
            r -= alpha * Ap
            r -= r.mean()
            if np.linalg.norm(r) <= tol * bnorm:
                # one correction from the true residual tightens the answer
                rt = b - A @ x
                if np.linalg.norm(rt - rt.mean()) <= tol * bnorm:
                    return self._remove_mean(x)
                r = rt - rt.mean()
            z = dinv * r
            rz_new = r @ z
            p = z + (rz_new / rz) * p
            rz = rz_new
        raise SolverError(f"CG stalled after {max_iter} iterations")

    def solve_direct(self, b):
        if self._lu is None:
            c = self.mass[:, None]
            bordered = sp.bmat([[self.A, sp.csr_matrix(c)], [sp.csr_matrix(c.T), None]], format="csc")
            self._lu = spla.splu(bordered)
        x = self._lu.solve(np.append(b, 0.0))[: self.n]
        return self._remove_mean(x)

    def solve(self, pair, method="cg", tol=LINEAR_TOL):
        g = self.grid
        m = generalized_mean(g, pair)
        y, yg = _unpack(g, pair)
        scale = max(1.0, float(np.max(np.abs(y))), float(np.max(np.abs(yg))))
        if abs(m) > MEAN_TOL * scale:
            raise MeanError(f"right-hand side has generalized mean {m:.3e}")
        b = self.rhs(pair)
        x = self.solve_direct(b) if method == "direct" else self.solve_cg(b, tol)
        return self.to_pair(x)

    def energy(self, x_pair) -> float:
        x = self._flat(x_pair)
        return float(x @ (self.A @ x))

    def _flat(self, pair):
        y, yg = _unpack(self.grid, pair)
        return np.concatenate([y.ravel(), yg.ravel()]) if self.L > 0 else y.ravel()

    def norm(self, pair, method="cg") -> float:
        m = generalized_mean(self.grid, pair)
        u = self.solve(project_zero_mean(self.grid, pair), method)
        return float(np.sqrt(max(self.energy(u), 0.0) + m * m))


def hminus_solve(grid: SlabGrid, params, rhs_pair, method="cg", tol=LINEAR_TOL) -> BulkSurfacePair:
    """Solve the elliptic problem for a zero-mean right-hand side pair."""
    return EllipticOperator(grid, params.L, params.sigma).solve(rhs_pair, method, tol)


def hminus_norm(grid: SlabGrid, params, pair, method="cg") -> float:
    """``sqrt(a(S(Py), S(Py)) + mean(y)^2)``."""
    return EllipticOperator(grid, params.L, params.sigma).norm(pair, method)


def dual_h1_norm(grid: SlabGrid, pair) -> float:
    """Discrete dual norm of ``(H^1)'`` with ``|z|^2 = |grad z|^2 + |grad_G z_G|^2 + |z|^2``.

    Only used for empirical norm-equivalence records.
    """
    g = grid
    blocks = sp.block_diag([g.K, g.Ks]).tocsr()
    mass = np.concatenate([g.w_flat, np.full(g.n_surf, g.hx)])
    y, yg = _unpack(g, pair)
    b = mass * np.concatenate([y.ravel(), yg.ravel()])
    z = spla.spsolve((blocks + sp.diags(mass)).tocsc(), b)
    return float(np.sqrt(b @ z))
