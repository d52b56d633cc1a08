"""Periodic slab geometry and summation-by-parts finite differences.

The domain is ``(0, Lx) x (0, 1)``, periodic in x, with boundary made of the
two curves ``y = 0`` and ``y = 1``.  Bulk fields have shape ``(Nx, Ny)``
(index ``[i, j]`` for ``x_i = i*hx``, ``y_j = j*hy``); surface fields have
shape ``(2, Nx)`` with row 0 on ``y = 0`` and row 1 on ``y = 1``.

Every operator is derived from the discrete Dirichlet forms, so for all
fields ``u, v``::

    sum(w * (-lap_bulk(u)) * v) == a_bulk(u, v) - sum(hx * dn(u) * v_trace)

holds to roundoff.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, RegimeError, ShapeError


@dataclass(frozen=True, eq=False)
class SlabGrid:
    Lx: float
    Nx: int
    Ny: int
    hx: float = field(init=False)
    hy: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "hx", self.Lx / self.Nx)
        object.__setattr__(self, "hy", 1.0 / (self.Ny - 1))
        _build_operators(self)

    @property
    def shape(self):
        return (self.Nx, self.Ny)

    @property
    def surf_shape(self):
        return (2, self.Nx)

    @property
    def n_bulk(self) -> int:
        return self.Nx * self.Ny

    @property
    def n_surf(self) -> int:
        return 2 * self.Nx

    @property
    def area(self) -> float:
        return self.Lx

    @property
    def perimeter(self) -> float:
        return 2.0 * self.Lx

    @property
    def total_measure(self) -> float:
        return self.Lx + 2.0 * self.Lx

    def coords(self):
        x = np.arange(self.Nx) * self.hx
        y = np.arange(self.Ny) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def surface_x(self):
        return np.arange(self.Nx) * self.hx

    def trace(self, bulk: np.ndarray) -> np.ndarray:
        """Boundary rows of a bulk field as a surface field."""
        return np.stack([bulk[:, 0], bulk[:, -1]])

    def __repr__(self):
        return f"SlabGrid(Lx={self.Lx!r}, Nx={self.Nx}, Ny={self.Ny})"


def build_grid(Lx: float, Nx: int, Ny: int) -> SlabGrid:
    if not Lx > 0:
        raise ConfigError(f"Lx must be positive, got {Lx}")
    if int(Nx) != Nx or Nx < 4 or Nx % 2:
        raise ConfigError(f"Nx must be an even integer >= 4, got {Nx}")
    if int(Ny) != Ny or Ny < 3:
        raise ConfigError(f"Ny must be an integer >= 3, got {Ny}")
    return SlabGrid(float(Lx), int(Nx), int(Ny))


def _periodic_second_difference(n):
    main = 2.0 * np.ones(n)
    off = -np.ones(n - 1)
    m = sp.diags([main, off, off], [0, 1, -1], format="lil")
    m[0, n - 1] = -1.0
    m[n - 1, 0] = -1.0
    return m.tocsr()


def _build_operators(g: SlabGrid):
    Nx, Ny, hx, hy = g.Nx, g.Ny, g.hx, g.hy
    cy = np.ones(Ny)
    cy[0] = cy[-1] = 0.5
    weights = hx * hy * np.tile(cy, (Nx, 1))

    # x-edges: every row, row weight hy*cy_j; y-edges: every column, weight hx
    dxx = _periodic_second_difference(Nx) / hx**2
    kx = sp.kron(dxx, sp.diags(hx * hy * cy))
    ey = sp.diags([np.ones(Ny - 1), -np.ones(Ny - 1)], [0, 1], shape=(Ny - 1, Ny))
    dyy = (ey.T @ ey) / hy**2
    ky = sp.kron(sp.identity(Nx), hx * hy * dyy)
    stiff = (kx + ky).tocsr()

    n = Nx * Ny
    rows = np.arange(2 * Nx)
    cols = np.concatenate([np.arange(Nx) * Ny, np.arange(Nx) * Ny + Ny - 1])
    trace = sp.csr_matrix((np.ones(2 * Nx), (rows, cols)), shape=(2 * Nx, n))

    surf_stiff = sp.block_diag([_periodic_second_difference(Nx) / hx] * 2).tocsr()

    # outward one-sided second-order normal derivative
    base = np.arange(Nx) * Ny
    r_idx = np.concatenate([np.repeat(np.arange(Nx), 3), np.repeat(np.arange(Nx) + Nx, 3)])
    c_lo = np.stack([base, base + 1, base + 2], axis=1).ravel()
    c_hi = np.stack([base + Ny - 1, base + Ny - 2, base + Ny - 3], axis=1).ravel()
    coef = np.tile([3.0, -4.0, 1.0], 2 * Nx) / (2.0 * hy)
    dn = sp.csr_matrix((coef, (r_idx, np.concatenate([c_lo, c_hi]))), shape=(2 * Nx, n))

    object.__setattr__(g, "weights", weights)
    object.__setattr__(g, "w_flat", weights.ravel())
    object.__setattr__(g, "surf_weight", hx)
    object.__setattr__(g, "K", stiff)
    object.__setattr__(g, "T", trace)
    object.__setattr__(g, "Ks", surf_stiff)
    object.__setattr__(g, "Dn", dn)


def _check_bulk(grid, u):
    u = np.asarray(u, dtype=float)
    if u.shape != grid.shape:
        raise ShapeError(f"bulk field has shape {u.shape}, expected {grid.shape}")
    return u


def _check_surf(grid, u):
    u = np.asarray(u, dtype=float)
    if u.shape != grid.surf_shape:
        raise ShapeError(f"surface field has shape {u.shape}, expected {grid.surf_shape}")
    return u


def integrate_bulk(grid: SlabGrid, u) -> float:
    u = _check_bulk(grid, u)
    return float(np.sum(grid.weights * u))


def integrate_surface(grid: SlabGrid, u) -> float:
    u = _check_surf(grid, u)
    return float(grid.hx * np.sum(u))


def normal_derivative(grid: SlabGrid, u) -> np.ndarray:
    u = _check_bulk(grid, u)
    return (grid.Dn @ u.ravel()).reshape(grid.surf_shape)


def lap_bulk(grid: SlabGrid, u) -> np.ndarray:
    """Discrete Laplacian; boundary rows are closed by the summation-by-parts identity."""
    u = _check_bulk(grid, u)
    flat = u.ravel()
    flux = grid.T.T @ (grid.hx * (grid.Dn @ flat))
    return (-(grid.K @ flat - flux) / grid.w_flat).reshape(grid.shape)


def lap_surface(grid: SlabGrid, u) -> np.ndarray:
    u = _check_surf(grid, u)
    return (-(grid.Ks @ u.ravel()) / grid.hx).reshape(grid.surf_shape)


def a_bulk(grid: SlabGrid, u, v) -> float:
    u, v = _check_bulk(grid, u), _check_bulk(grid, v)
    return float(u.ravel() @ (grid.K @ v.ravel()))


def a_surface(grid: SlabGrid, u, v) -> float:
    u, v = _check_surf(grid, u), _check_surf(grid, v)
    return float(u.ravel() @ (grid.Ks @ v.ravel()))


def pair_stiffness(grid: SlabGrid, L: float, sigma: float) -> sp.csr_matrix:
    """Matrix of the bilinear form on independent (bulk, surface) pairs."""
    from .model import chi

    c = chi(L)
    T, Ms = grid.T, grid.hx
    top = grid.K + c * Ms * (T.T @ T)
    return sp.bmat(
        [[top, -c * Ms * T.T], [-c * Ms * T, sigma * grid.Ks + c * Ms * sp.identity(grid.n_surf)]],
        format="csr",
    )


def bilinear_a(grid: SlabGrid, params, y, z) -> float:
    """Discrete ``a_{L,sigma}`` of two (bulk, surface) pairs.

    For ``L = 0`` both pairs must be trace-linked.
    """
    (u, ug), (v, vg) = y, z
    u, v = _check_bulk(grid, u), _check_bulk(grid, v)
    ug, vg = _check_surf(grid, ug), _check_surf(grid, vg)
    if params.L == 0:
        for bulk, surf in ((u, ug), (v, vg)):
            if not np.array_equal(grid.trace(bulk), surf):
                raise RegimeError("L = 0 requires trace-linked pairs")
    c = params.chi
    val = a_bulk(grid, u, v) + params.sigma * a_surface(grid, ug, vg)
    if c:
        val += c * grid.hx * float(np.sum((grid.trace(u) - ug) * (grid.trace(v) - vg)))
    return val


def self_test(grid: SlabGrid, seed: int = 0, tol: float = 1e-10):
    """Invariants of the discrete operators as ``(name, passed, value)`` rows."""
    rng = np.random.Generator(np.random.PCG64(seed))
    u, v = rng.standard_normal(grid.shape), rng.standard_normal(grid.shape)
    X, Y = grid.coords()
    rows = []

    err = abs(integrate_bulk(grid, np.ones(grid.shape)) - grid.area) / grid.area
    err = max(err, abs(integrate_surface(grid, np.ones(grid.surf_shape)) - grid.perimeter) / grid.perimeter)
    rows.append(("measures", err < tol, err))

    lhs = float(np.sum(grid.weights * -lap_bulk(grid, u) * v))
    rhs = a_bulk(grid, u, v) - float(np.sum(grid.hx * normal_derivative(grid, u) * grid.trace(v)))
    err = abs(lhs - rhs) / max(1.0, abs(rhs))
    rows.append(("summation_by_parts", err < tol, err))

    err = max(abs(grid.K - grid.K.T).max(), abs(grid.Ks - grid.Ks.T).max(),
              float(np.max(np.abs(grid.K @ np.ones(grid.n_bulk)))),
              float(np.max(np.abs(grid.Ks @ np.ones(grid.n_surf)))))
    rows.append(("stiffness_symmetric_kernel", err < tol, err))

    dn = normal_derivative(grid, Y)
    err = float(np.max(np.abs(dn - np.array([[-1.0], [1.0]]))))
    rows.append(("normal_derivative_linear", err < tol, err))

    xs = grid.surface_x()
    w = np.stack([np.cos(2 * np.pi * xs / grid.Lx)] * 2)
    symbol = -(4.0 / grid.hx**2) * np.sin(np.pi / grid.Nx) ** 2
    err = float(np.max(np.abs(lap_surface(grid, w) - symbol * w))) / abs(symbol)
    rows.append(("surface_laplacian_symbol", err < tol, err))
    return [(name, bool(ok), float(val)) for name, ok, val in rows]
