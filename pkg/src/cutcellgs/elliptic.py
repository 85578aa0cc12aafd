"""Conservative finite-volume discretization of the toroidal elliptic operator.

The operator is written in divergence form, ``div((1/R) grad psi) = S/R`` with
``Delta* psi = S``. Each active grid point owns the part of its control volume
covered by the domain. Its row balances the outward fluxes through the
covered parts of the four edges and through the boundary facet against the
integrated source. Rows are divided by ``dr*dz`` (not by the volume fraction).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import CUT, DIRICHLET, EXTERIOR, INTERIOR, CutCellMesh
from .grid import CartesianGrid

logger = logging.getLogger(__name__)


class AssemblyError(RuntimeError):
    """The discretization could not be built for a cell."""


class SolverError(RuntimeError):
    """Iterative linear solve failed to reach its tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class FluxField:
    """Grid-point values of a flux function together with their validity mask."""

    grid: CartesianGrid
    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.grid.shape or self.mask.shape != self.grid.shape:
            raise ValueError("field and mask must match the grid shape")

    def max_abs_diff(self, other: "FluxField") -> float:
        m = self.mask & other.mask
        return float(np.max(np.abs(self.values[m] - other.values[m]), initial=0.0))


# ---------------------------------------------------------------------------
# local formulas
# ---------------------------------------------------------------------------


def full_cell_row(i: int, j: int, grid: CartesianGrid) -> dict:
    """Five-point coefficients of ``(1/R) Delta*`` at point ``(i, j)``.

    Returns ``{(di, dj): coefficient}``, already divided by ``dr*dz``.
    """
    r_w = grid.r[i] - 0.5 * grid.dr
    r_e = grid.r[i] + 0.5 * grid.dr
    r_c = grid.r[i]
    if min(r_w, r_c) <= 0.0:
        raise ValueError("five-point stencil needs R > 0")
    dr, dz = grid.dr, grid.dz
    ce = 1.0 / (r_e * dr * dr)
    cw = 1.0 / (r_w * dr * dr)
    cn = cs = 1.0 / (r_c * dz * dz)
    return {(1, 0): ce, (-1, 0): cw, (0, 1): cn, (0, -1): cs, (0, 0): -(ce + cw + cn + cs)}


def partial_edge_flux(a: float, grad_here: float, grad_side: float | None) -> float:
    """Flux density at the midpoint of the covered part of an edge.

    ``grad_here`` is the full-edge flux density (``(1/R) dpsi/dn``) on the
    cut edge's own row or column and ``grad_side`` the one on the neighbouring
    row or column on the covered side. ``None`` falls back to the one-sided
    value. The result multiplied by ``a`` times the edge length is the flux.
    """
    if grad_side is None or a >= 1.0:
        return grad_here
    return 0.5 * (1.0 + a) * grad_here + 0.5 * (1.0 - a) * grad_side


def interface_flux_coefficients(d1: float, d2: float | None) -> tuple[float, float, float]:
    """Coefficients ``(c_f, c_1, c_2)`` with ``q = c_f psi_f + c_1 psi_1 + c_2 psi_2``.

    ``q`` is the one-sided normal derivative at the boundary along the
    outward direction, fitted through ``psi_f`` at distance 0 and interpolated
    values at distances ``d1 < d2`` along the inward normal. With ``d2`` of
    ``None`` the two-point first-order formula is used.
    """
    if d2 is None:
        return 1.0 / d1, -1.0 / d1, 0.0
    den = d2 - d1
    return (d1 + d2) / (d1 * d2), -d2 / (d1 * den), d1 / (d2 * den)


def interface_flux(psi_f, psi_1, psi_2, d1, d2, area, r_f):
    """Outward flux ``(A/R_f) q`` through a facet from the three-point fit."""
    cf, c1, c2 = interface_flux_coefficients(d1, d2)
    q = cf * psi_f + c1 * psi_1 + (0.0 if d2 is None else c2 * psi_2)
    return area / r_f * q


# ---------------------------------------------------------------------------
# normal-derivative stencils
# ---------------------------------------------------------------------------


def _lagrange_weights(nodes, x):
    w = np.ones(len(nodes))
    for a in range(len(nodes)):
        for b in range(len(nodes)):
            if a != b:
                w[a] *= (x - nodes[b]) / (nodes[a] - nodes[b])
    return w


def _line_interpolation(coords, usable, x, order=3):
    """Indices and weights interpolating at ``x`` along one grid line.

    Prefers windows of ``order`` consecutive usable nodes that bracket ``x``,
    nearest first; returns ``None`` if no window is usable.
    """
    n = len(coords)
    h = coords[1] - coords[0]
    t = (x - coords[0]) / h
    centre = int(np.rint(t))
    starts = []
    for shift in range(0, order + 2):
        for s in (centre - order // 2 - shift, centre - order // 2 + shift):
            if s not in starts:
                starts.append(s)
    bracketing, other = [], []
    for s in starts:
        if s < 0 or s + order > n:
            continue
        idx = np.arange(s, s + order)
        if not usable[idx].all():
            continue
        (bracketing if s <= t <= s + order - 1 else other).append(idx)
    for idx in bracketing + other:
        return idx, _lagrange_weights(coords[idx], x)
    return None


@dataclass(frozen=True)
class NormalStencil:
    """Linear map giving outward normal derivatives at facets.

    ``q = c * psi_f + Q @ psi.ravel()`` with one entry per facet.
    """

    Q: sp.csr_matrix
    c: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    first_order: np.ndarray

    def apply(self, psi: np.ndarray, psi_f) -> np.ndarray:
        return self.c * psi_f + self.Q @ np.asarray(psi).ravel()


def _rectangle_stencil(mesh: CutCellMesh) -> NormalStencil:
    grid = mesh.grid
    f = mesh.facets
    n = len(f)
    rows, cols, vals = [], [], []
    c = np.empty(n)
    d1 = np.empty(n)
    for k, ((i, j), nv) in enumerate(zip(f.cells, f.normals_in)):
        di, dj = int(round(nv[0])), int(round(nv[1]))
        h = grid.dr if di else grid.dz
        cf, c1, c2 = interface_flux_coefficients(h, 2 * h)
        c[k] = cf
        d1[k] = h
        rows += [k, k]
        cols += [grid.index(i + di, j + dj), grid.index(i + 2 * di, j + 2 * dj)]
        vals += [c1, c2]
    Q = sp.csr_matrix((vals, (rows, cols)), shape=(n, grid.size))
    return NormalStencil(Q, c, d1, 2 * d1, np.zeros(n, dtype=bool))


def _facet_stencil(mesh: CutCellMesh, k: int, usable: np.ndarray):
    """Points and weights for facet ``k``; tries the dominant direction first."""
    grid = mesh.grid
    i, j = mesh.facets.cells[k]
    xf = mesh.facets.midpoints[k]
    nv = mesh.facets.normals_in[k]
    if not np.any(nv):
        return None
    order_dirs = (0, 1) if abs(nv[0]) >= abs(nv[1]) else (1, 0)
    for axis in order_dirs:
        if abs(nv[axis]) < 1e-12:
            continue
        s = 1 if nv[axis] > 0 else -1
        lines = (grid.r, grid.z) if axis == 0 else (grid.z, grid.r)
        base = i if axis == 0 else j
        picks = []
        for m in (1, 2):
            line = base + m * s
            if line < 0 or line >= len(lines[0]):
                break
            d = (lines[0][line] - xf[axis]) / nv[axis]
            x_other = xf[1 - axis] + d * nv[1 - axis]
            use = usable[line, :] if axis == 0 else usable[:, line]
            hit = _line_interpolation(lines[1], use, x_other, order=3)
            if hit is None:
                hit = _line_interpolation(lines[1], use, x_other, order=2)
            if hit is None:
                break
            idx, w = hit
            flat = grid.index(line, idx) if axis == 0 else grid.index(idx, line)
            picks.append((d, flat, w))
        if picks:
            return picks
    return None


def normal_stencil(mesh: CutCellMesh) -> NormalStencil:
    """Three-point one-sided normal-derivative stencils for every facet."""
    if mesh.is_rectangular:
        return _rectangle_stencil(mesh)
    grid = mesh.grid
    usable = mesh.active
    n = len(mesh.facets)
    rows, cols, vals = [], [], []
    c = np.empty(n)
    d1 = np.empty(n)
    d2 = np.full(n, np.nan)
    first = np.zeros(n, dtype=bool)
    for k in range(n):
        if not np.any(mesh.facets.normals_in[k]):
            # self-cancelling saddle facet: no net flux
            c[k] = 0.0
            d1[k] = np.nan
            continue
        picks = _facet_stencil(mesh, k, usable)
        if picks is None:
            i, j = mesh.facets.cells[k]
            raise AssemblyError(
                f"no interpolation points for the boundary facet of cell ({i}, {j}); "
                "the domain is too thin for this mesh"
            )
        if len(picks) == 1:
            (da, fa, wa), = picks
            cf, c1, _ = interface_flux_coefficients(da, None)
            first[k] = True
            c[k] = cf
            d1[k] = da
            rows += [k] * len(fa)
            cols += list(fa)
            vals += list(c1 * wa)
        else:
            (da, fa, wa), (db, fb, wb) = picks
            cf, c1, c2 = interface_flux_coefficients(da, db)
            c[k] = cf
            d1[k] = da
            d2[k] = db
            rows += [k] * (len(fa) + len(fb))
            cols += list(fa) + list(fb)
            vals += list(c1 * wa) + list(c2 * wb)
    if first.any():
        logger.debug("%d facets use the first-order normal derivative", int(first.sum()))
    Q = sp.csr_matrix((vals, (rows, cols)), shape=(n, grid.size))
    return NormalStencil(Q, c, d1, d2, first)


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiscreteSystem:
    """``matrix @ psi = rhs`` over all grid points (flattened C-order)."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    grid: CartesianGrid
    active: np.ndarray

    def stats(self) -> dict:
        return {
            "rows": int(self.matrix.shape[0]),
            "nnz": int(self.matrix.nnz),
            "active_rows": int(self.active.sum()),
        }


def _edge_fluxes(mesh: CutCellMesh):
    """Sparse map from psi to the R- and Z-directed edge fluxes.

    Returns ``(Fr, Fz, keep_r, keep_z)``: ``Fr`` has one row per internal
    vertical edge ``(i, j)``, ``1 <= i < nr`` (flattened over ``(i-1, j)``),
    holding ``a dz (1/R) dpsi/dR``; ``Fz`` similarly for horizontal edges.
    """
    grid = mesh.grid
    nr, nz = grid.shape
    dr, dz = grid.dr, grid.dz
    valid = mesh.valid
    phi = None if mesh.level_set is None else mesh.level_set.corner_values

    # vertical edges between (i-1, j) and (i, j), i = 1..nr-1
    I, J = np.meshgrid(np.arange(1, nr), np.arange(nz), indexing="ij")
    a = mesh.ap_r[1:nr, :]
    coef = a * dz / (grid.r_corners[1:nr, None] * dr)
    if phi is None:
        side = np.zeros_like(I)
    else:
        lower_in = phi[1:nr, :-1] <= 0.0
        side = np.where(lower_in, -1, 1)
    partial = (a > 0.0) & (a < 1.0)
    js = J + side
    ok = partial & (js >= 0) & (js < nz)
    jc = np.clip(js, 0, nz - 1)
    ok &= valid[I - 1, jc] & valid[I, jc]
    w0 = np.where(ok, 0.5 * (1.0 + a), 1.0)
    w1 = np.where(ok, 0.5 * (1.0 - a), 0.0)
    erow = np.arange(I.size).reshape(I.shape)
    rows = np.concatenate([erow.ravel()] * 4)
    cols = np.concatenate([
        grid.index(I, J).ravel(), grid.index(I - 1, J).ravel(),
        grid.index(I, jc).ravel(), grid.index(I - 1, jc).ravel(),
    ])
    vals = np.concatenate([
        (coef * w0).ravel(), (-coef * w0).ravel(), (coef * w1).ravel(), (-coef * w1).ravel()
    ])
    nzmask = vals != 0.0
    Fr = sp.csr_matrix((vals[nzmask], (rows[nzmask], cols[nzmask])), shape=(I.size, grid.size))

    # horizontal edges between (i, j-1) and (i, j), j = 1..nz-1
    I, J = np.meshgrid(np.arange(nr), np.arange(1, nz), indexing="ij")
    a = mesh.ap_z[:, 1:nz]
    if phi is None:
        side = np.zeros_like(I)
    else:
        left_in = phi[:-1, 1:nz] <= 0.0
        side = np.where(left_in, -1, 1)
    partial = (a > 0.0) & (a < 1.0)
    is_ = I + side
    ok = partial & (is_ >= 0) & (is_ < nr)
    ic = np.clip(is_, 0, nr - 1)
    ok &= valid[ic, J - 1] & valid[ic, J]
    w0 = np.where(ok, 0.5 * (1.0 + a), 1.0)
    w1 = np.where(ok, 0.5 * (1.0 - a), 0.0)
    c_here = a * dr / (grid.r[I] * dz) * w0
    c_side = a * dr / (grid.r[ic] * dz) * w1
    erow = np.arange(I.size).reshape(I.shape)
    rows = np.concatenate([erow.ravel()] * 4)
    cols = np.concatenate([
        grid.index(I, J).ravel(), grid.index(I, J - 1).ravel(),
        grid.index(ic, J).ravel(), grid.index(ic, J - 1).ravel(),
    ])
    vals = np.concatenate([c_here.ravel(), -c_here.ravel(), c_side.ravel(), -c_side.ravel()])
    nzmask = vals != 0.0
    Fz = sp.csr_matrix((vals[nzmask], (rows[nzmask], cols[nzmask])), shape=(I.size, grid.size))
    return Fr, Fz


def _divergence(grid: CartesianGrid):
    """Sparse maps from edge fluxes to per-point net outward flux."""
    nr, nz = grid.shape
    # vertical edge e=(i, j) (i = 1..nr-1) is east of (i-1, j), west of (i, j)
    I, J = np.meshgrid(np.arange(1, nr), np.arange(nz), indexing="ij")
    e = np.arange(I.size)
    Dr = sp.csr_matrix(
        (
            np.concatenate([np.ones(I.size), -np.ones(I.size)]),
            (np.concatenate([grid.index(I - 1, J).ravel(), grid.index(I, J).ravel()]),
             np.concatenate([e, e])),
        ),
        shape=(grid.size, I.size),
    )
    I, J = np.meshgrid(np.arange(nr), np.arange(1, nz), indexing="ij")
    e = np.arange(I.size)
    Dz = sp.csr_matrix(
        (
            np.concatenate([np.ones(I.size), -np.ones(I.size)]),
            (np.concatenate([grid.index(I, J - 1).ravel(), grid.index(I, J).ravel()]),
             np.concatenate([e, e])),
        ),
        shape=(grid.size, I.size),
    )
    return Dr, Dz


class EllipticOperator:
    """Assembled operator for a fixed mesh, reusable across right-hand sides.

    ``solve(source, psi_b)`` returns grid values of ``psi`` with
    ``Delta* psi = source`` in the domain and ``psi = psi_b`` on the boundary
    points. ``source`` is sampled at cell centroids (shape ``(nr, nz)``).
    """

    def __init__(self, mesh: CutCellMesh, method: str = "direct", rtol: float = 1e-5,
                 atol: float = 1e-5, max_iter: int = 500):
        self.mesh = mesh
        self.grid = mesh.grid
        self.method = method
        self.rtol = rtol
        self.atol = atol
        self.max_iter = max_iter
        self.stencil = normal_stencil(mesh)
        self._build()
        self._factor = None
        self._amg = None

    def _build(self):
        mesh, grid = self.mesh, self.grid
        kind = mesh.kind.ravel()
        active = (kind == INTERIOR) | (kind == CUT)
        scale = 1.0 / (grid.dr * grid.dz)
        Fr, Fz = _edge_fluxes(mesh)
        Dr, Dz = _divergence(grid)
        keep = sp.diags(active.astype(float) * scale)
        A = keep @ (Dr @ Fr + Dz @ Fz)

        nb = len(mesh.boundary_points)
        f = mesh.facets
        if mesh.is_rectangular:
            ring = np.array([grid.index(*ij) for ij in _ring_cells(mesh)])
            B = sp.csr_matrix(
                (np.ones(nb), (ring, np.arange(nb))), shape=(grid.size, nb)
            )
        else:
            cell_rows = grid.index(f.cells[:, 0], f.cells[:, 1])
            w = f.areas / f.midpoints[:, 0] * scale
            P = sp.csr_matrix((w, (cell_rows, np.arange(len(f)))), shape=(grid.size, len(f)))
            A = A + P @ self.stencil.Q
            B = -(P @ sp.diags(self.stencil.c)) @ sp.csr_matrix(
                (np.ones(len(f)), (np.arange(len(f)), f.bindex)), shape=(len(f), nb)
            )
        inactive = ~active
        A = A + sp.diags(inactive.astype(float))
        self.matrix = sp.csr_matrix(A)
        self.matrix.sum_duplicates()
        self.matrix.eliminate_zeros()
        self.boundary_map = sp.csr_matrix(B)
        self.active_flat = active
        Rc = mesh.centroids[..., 0].ravel()
        self._src_weight = np.where(active, mesh.volume_fraction.ravel() / Rc, 0.0)

    def rhs(self, source, psi_b=None) -> np.ndarray:
        src = np.broadcast_to(np.asarray(source, dtype=float), self.grid.shape).ravel()
        b = self._src_weight * np.where(self.active_flat, src, 0.0)
        if psi_b is not None:
            b = b + self.boundary_map @ np.broadcast_to(
                np.asarray(psi_b, dtype=float), (len(self.mesh.boundary_points),)
            )
        return b

    def system(self, source, psi_b=None) -> DiscreteSystem:
        return DiscreteSystem(self.matrix, self.rhs(source, psi_b), self.grid,
                              self.active_flat.reshape(self.grid.shape))

    def solve(self, source, psi_b=None) -> np.ndarray:
        x = self.solve_rhs(self.rhs(source, psi_b))
        return x.reshape(self.grid.shape)

    def solve_rhs(self, b: np.ndarray) -> np.ndarray:
        if self.method == "direct":
            if self._factor is None:
                self._factor = spla.splu(sp.csc_matrix(self.matrix))
            return self._factor.solve(b)
        if self.method == "amg":
            return self._solve_amg(b)
        raise ValueError(f"unknown linear solver {self.method!r}")

    def _solve_amg(self, b):
        import pyamg

        if self._amg is None:
            self._amg = pyamg.smoothed_aggregation_solver(
                self.matrix, symmetry="nonsymmetric", strength="evolution"
            )
        M = self._amg.aspreconditioner()
        bnorm = np.linalg.norm(b)
        tol = max(self.atol, self.rtol * bnorm)
        x, info = spla.gmres(self.matrix, b, M=M, rtol=0.0, atol=tol,
                             restart=50, maxiter=self.max_iter)
        res = float(np.linalg.norm(b - self.matrix @ x))
        if info != 0 or res > tol * (1 + 1e-8):
            raise SolverError(f"GMRES did not converge: residual {res:.3e}", residual=res)
        return x

    def apply(self, psi) -> np.ndarray:
        """``(1/R) Delta*_h psi`` per active row (times the volume fraction)."""
        return (self.matrix @ np.asarray(psi, dtype=float).ravel()).reshape(self.grid.shape)

    def normal_derivative(self, psi, psi_b=0.0) -> np.ndarray:
        """Outward normal derivative at each facet midpoint."""
        nb = len(self.mesh.boundary_points)
        vals = np.broadcast_to(np.asarray(psi_b, dtype=float), (nb,))
        return self.stencil.apply(psi, vals[self.mesh.facets.bindex])


def _ring_cells(mesh: CutCellMesh):
    """Grid indices of the rectangle boundary points, in boundary-point order."""
    g = mesh.grid
    i = np.rint((mesh.boundary_points[:, 0] - g.r_min) / g.dr).astype(int)
    j = np.rint((mesh.boundary_points[:, 1] - g.z_min) / g.dz).astype(int)
    return list(zip(i, j))


def assemble(mesh: CutCellMesh, dirichlet, source, method: str = "direct") -> DiscreteSystem:
    """Assemble the full-grid linear system for given boundary data and source.

    ``dirichlet`` is either an array with one value per boundary point or a
    callable ``f(R, Z)`` evaluated at the boundary points.
    """
    op = EllipticOperator(mesh, method=method)
    if callable(dirichlet):
        bp = mesh.boundary_points
        dirichlet = dirichlet(bp[:, 0], bp[:, 1])
    return op.system(source, dirichlet)


def solve(system: DiscreteSystem, rtol: float = 1e-5, atol: float = 1e-5,
          max_iter: int = 500, method: str = "direct") -> FluxField:
    """Solve an assembled system; inactive points come out exactly zero."""
    if method == "direct":
        x = spla.spsolve(sp.csc_matrix(system.matrix), system.rhs)
    elif method == "amg":
        import pyamg

        ml = pyamg.smoothed_aggregation_solver(system.matrix, symmetry="nonsymmetric")
        tol = max(atol, rtol * np.linalg.norm(system.rhs))
        x, info = spla.gmres(system.matrix, system.rhs, M=ml.aspreconditioner(), rtol=0.0,
                             atol=tol, restart=50, maxiter=max_iter)
        res = float(np.linalg.norm(system.rhs - system.matrix @ x))
        if info != 0 or res > tol * (1 + 1e-8):
            raise SolverError(f"GMRES did not converge: residual {res:.3e}", residual=res)
    else:
        raise ValueError(f"unknown linear solver {method!r}")
    x = np.asarray(x).reshape(system.grid.shape)
    return FluxField(system.grid, x, system.active.copy())




def centroid_interpolator(mesh: CutCellMesh) -> sp.csr_matrix:
    """Sparse map from grid values to values at cell centroids.

    Full cells are the identity. Cut cells add a first-order Taylor
    correction from the grid point to the centroid, with the gradient from
    central differences where both neighbours hold values and one-sided
    differences otherwise.
    """
    grid = mesh.grid
    nr, nz = grid.shape
    usable = mesh.active
    rows, cols, vals = [], [], []
    n = grid.size
    cut = np.argwhere(mesh.kind == CUT)
    diag = np.ones(n)
    for i, j in cut:
        p = grid.index(i, j)
        shift = mesh.centroids[i, j] - np.array([grid.r[i], grid.z[j]])
        for axis, h in ((0, grid.dr), (1, grid.dz)):
            if shift[axis] == 0.0:
                continue
            step = np.array([1, 0]) if axis == 0 else np.array([0, 1])
            lo = (i - step[0], j - step[1])
            hi = (i + step[0], j + step[1])
            ok_lo = 0 <= lo[0] < nr and 0 <= lo[1] < nz and usable[lo]
            ok_hi = 0 <= hi[0] < nr and 0 <= hi[1] < nz and usable[hi]
            s = shift[axis]
            if ok_lo and ok_hi:
                entries = [(hi, s / (2 * h)), (lo, -s / (2 * h))]
            elif ok_hi:
                entries = [(hi, s / h), ((i, j), -s / h)]
            elif ok_lo:
                entries = [((i, j), s / h), (lo, -s / h)]
            else:
                continue
            for (a, b), w in entries:
                rows.append(p)
                cols.append(grid.index(a, b))
                vals.append(w)
    M = sp.csr_matrix((vals, (rows, cols)), shape=(n, n)) + sp.diags(diag)
    return sp.csr_matrix(M)


__all__ = [
    "AssemblyError", "DiscreteSystem", "EllipticOperator", "FluxField", "NormalStencil",
    "SolverError", "assemble", "centroid_interpolator", "full_cell_row", "interface_flux",
    "interface_flux_coefficients", "normal_stencil", "partial_edge_flux", "solve",
]
