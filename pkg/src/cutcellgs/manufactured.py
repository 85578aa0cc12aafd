"""Verification problems with known solutions and a mesh-ladder convergence harness."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .geometry import BoundaryPolygon, CutCellMesh, build_cut_cell_mesh
from .grid import CartesianGrid

logger = logging.getLogger(__name__)

# Chebyshev radii per half of the verification wall; dense enough that the
# chord error of the polygon stays below the discretization error on the ladder
BOUNDARY_NODES = 2000


# ---------------------------------------------------------------------------
# linear (Soloviev) case
# ---------------------------------------------------------------------------


def soloviev_coefficients(eps: float, kappa: float, delta: float) -> np.ndarray:
    """``(D1, D2, D3)`` placing the outer, inner and top points on ``psi = 0``."""
    if not 0.0 < eps < 1.0:
        raise ValueError("inverse aspect ratio must lie in (0, 1)")
    ro, ri, rt = 1.0 + eps, 1.0 - eps, 1.0 - delta * eps
    zt = kappa * eps
    M = np.array([
        [1.0, ro**2, ro**4],
        [1.0, ri**2, ri**4],
        [1.0, rt**2, rt**4 - 4.0 * rt**2 * zt**2],
    ])
    rhs = -np.array([ro**4, ri**4, rt**4]) / 8.0
    if abs(np.linalg.det(M)) < 1e-14:
        raise ValueError("degenerate shape parameters: singular coefficient system")
    return np.linalg.solve(M, rhs)


@dataclass(frozen=True)
class SolovievCase:
    """Closed-form equilibrium ``psi = R^4/8 + D1 + D2 R^2 + D3 (R^4 - 4 R^2 Z^2)``.

    It satisfies ``Delta* psi = R^2``.
    """

    eps: float = 0.32
    kappa: float = 1.7
    delta: float = 0.33

    @property
    def coefficients(self) -> np.ndarray:
        return soloviev_coefficients(self.eps, self.kappa, self.delta)

    def psi(self, r, z):
        d1, d2, d3 = self.coefficients
        r = np.asarray(r, dtype=float)
        z = np.asarray(z, dtype=float)
        return r**4 / 8.0 + d1 + d2 * r**2 + d3 * (r**4 - 4.0 * r**2 * z**2)

    def grad(self, r, z):
        d1, d2, d3 = self.coefficients
        r = np.asarray(r, dtype=float)
        z = np.asarray(z, dtype=float)
        dr = r**3 / 2.0 + 2.0 * d2 * r + d3 * (4.0 * r**3 - 8.0 * r * z**2)
        dz = -8.0 * d3 * r**2 * z
        return dr, dz

    def source(self, r, z):
        return np.asarray(r, dtype=float) ** 2 + 0.0 * np.asarray(z, dtype=float)

    def axis(self) -> tuple[float, float]:
        _, d2, d3 = self.coefficients
        return math.sqrt(-d2 / (2.0 * (0.125 + d3))), 0.0

    def boundary(self, n_nodes: int = 200) -> BoundaryPolygon:
        return soloviev_boundary(self, n_nodes)

    def grid(self, nr: int, nz: int) -> CartesianGrid:
        """Grid used for the verification ladder (equal spacing in R and Z)."""
        return CartesianGrid(0.55, 1.45, -0.6, 0.6, nr, nz)


def soloviev_boundary(case: SolovievCase, n_nodes: int = 200) -> BoundaryPolygon:
    """Polygon through ``psi = 0`` at Chebyshev-Lobatto radii, mirrored in Z.

    For fixed R the zero set is linear in ``Z^2``, so the root is closed-form.
    """
    if n_nodes < 16:
        raise ValueError("need at least 16 boundary nodes")
    d1, d2, d3 = case.coefficients
    lo, hi = 1.0 - case.eps, 1.0 + case.eps
    k = np.arange(n_nodes)
    r = 0.5 * (lo + hi) + 0.5 * (hi - lo) * np.cos(np.pi * k / (n_nodes - 1))  # hi -> lo
    r[0], r[-1] = hi, lo
    rm = r[1:-1]
    z2 = (rm**4 / 8.0 + d1 + d2 * rm**2 + d3 * rm**4) / (4.0 * d3 * rm**2)
    if np.any(~(z2 > 0.0)):
        bad = rm[np.argmax(~(z2 > 0.0))]
        raise ValueError(f"no boundary root at R = {bad:.6g}")
    z = np.concatenate([[0.0], np.sqrt(z2), [0.0]])
    upper = np.column_stack([r, z])  # outer midplane -> over the top -> inner midplane
    lower = np.column_stack([r[-2:0:-1], -z[-2:0:-1]])
    return BoundaryPolygon(np.vstack([upper, lower]))


# ---------------------------------------------------------------------------
# nonlinear case
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NonlinearCase:
    """Manufactured problem ``Delta* psi = -F(R, Z, psi)`` with a sin-cos solution."""

    k_r: float = 1.15 * math.pi
    k_z: float = 1.15
    r0: float = -0.5
    soloviev: SolovievCase = SolovievCase()

    def psi(self, r, z):
        return np.sin(self.k_r * (np.asarray(r) + self.r0)) * np.cos(self.k_z * np.asarray(z))

    def source(self, r, z, psi):
        """Right-hand side ``Delta* psi = -F``."""
        return -nonlinear_source(r, z, psi, self.k_r, self.k_z, self.r0)

    def source_derivative(self, r, z, psi):
        """``d(-F)/d psi`` (used only for diagnostics)."""
        r = np.asarray(r, dtype=float)
        return -((self.k_r**2 + self.k_z**2) + r * (-2.0 * psi + np.exp(-psi)))

    def boundary(self, n_nodes: int = 200) -> BoundaryPolygon:
        return self.soloviev.boundary(n_nodes)

    def grid(self, nr: int, nz: int) -> CartesianGrid:
        return self.soloviev.grid(nr, nz)


def nonlinear_source(r, z, psi, k_r=1.15 * math.pi, k_z=1.15, r0=-0.5):
    """``F(R, Z, psi)``; the bracketed terms vanish when psi is the exact solution."""
    r = np.asarray(r, dtype=float)
    z = np.asarray(z, dtype=float)
    psi = np.asarray(psi, dtype=float)
    s = np.sin(k_r * (r + r0))
    c = np.cos(k_r * (r + r0))
    cz = np.cos(k_z * z)
    sc = s * cz
    return (
        (k_r**2 + k_z**2) * psi
        + (k_r / r) * c * cz
        + r * (sc**2 - psi**2 + np.exp(-sc) - np.exp(-psi))
    )


# ---------------------------------------------------------------------------
# error norms and convergence study
# ---------------------------------------------------------------------------


def error_norms(mesh: CutCellMesh, psi: np.ndarray, exact: np.ndarray) -> tuple[float, float, float]:
    """``(L1, L2, Linf)`` over active points; L1/L2 weighted by covered area."""
    m = mesh.active
    e = np.abs(np.asarray(psi)[m] - np.asarray(exact)[m])
    w = mesh.volume_fraction[m] * mesh.grid.dr * mesh.grid.dz
    return float(np.sum(w * e)), float(np.sqrt(np.sum(w * e * e))), float(e.max())


@dataclass
class ConvergenceRow:
    nr: int
    nz: int
    l1: float
    l2: float
    linf: float
    order_l1: float = float("nan")
    order_l2: float = float("nan")
    order_linf: float = float("nan")
    iterations: int = 0


def solve_linear_case(case: SolovievCase, nr: int, nz: int, n_nodes: int = BOUNDARY_NODES,
                      method: str = "direct", boundary_data: str = "wall"):
    """Fixed-boundary Soloviev solve; returns ``(mesh, psi, exact)``.

    ``boundary_data='wall'`` imposes ``psi = 0`` on the reconstructed wall
    facets (the problem as posed); ``'exact'`` samples the closed form there.
    """
    from .elliptic import EllipticOperator

    grid = case.grid(nr, nz)
    mesh = build_cut_cell_mesh(grid, case.boundary(n_nodes))
    op = EllipticOperator(mesh, method=method)
    c = mesh.centroids
    src = case.source(c[..., 0], c[..., 1])
    bp = mesh.boundary_points
    if boundary_data == "wall":
        psi_b = np.zeros(len(bp))
    elif boundary_data == "exact":
        psi_b = case.psi(bp[:, 0], bp[:, 1])
    else:
        raise ValueError(f"unknown boundary_data {boundary_data!r}")
    psi = op.solve(src, psi_b)
    R, Z = grid.mesh()
    return mesh, psi, case.psi(R, Z)


def solve_nonlinear_case(case: NonlinearCase, nr: int, nz: int, n_nodes: int = BOUNDARY_NODES,
                         tol: float = 1e-9, max_iter: int = 200, method: str = "direct"):
    """Picard + Aitken solve of the nonlinear problem; returns ``(mesh, psi, exact, iters)``."""
    from .driver import picard_fixed_boundary
    from .elliptic import EllipticOperator, centroid_interpolator

    grid = case.grid(nr, nz)
    mesh = build_cut_cell_mesh(grid, case.boundary(n_nodes))
    op = EllipticOperator(mesh, method=method)
    c = mesh.centroids
    bp = mesh.boundary_points
    psi_b = case.psi(bp[:, 0], bp[:, 1])
    cell_rc, cell_zc = c[..., 0], c[..., 1]

    to_centroid = centroid_interpolator(mesh)

    def source(psi):
        return case.source(cell_rc, cell_zc, (to_centroid @ psi.ravel()).reshape(psi.shape))

    psi0 = np.zeros(grid.shape)
    psi, records = picard_fixed_boundary(op, source, psi_b, psi0, tol=tol, max_iter=max_iter)
    R, Z = grid.mesh()
    return mesh, psi, case.psi(R, Z), len(records)


def convergence_study(solver: Callable[[int, int], tuple], ladder: Sequence[tuple[int, int]]):
    """Run ``solver(nr, nz) -> (mesh, psi, exact, ...)`` over a mesh ladder."""
    if len(ladder) < 2:
        raise ValueError("a convergence study needs at least two meshes")
    rows: list[ConvergenceRow] = []
    for nr, nz in ladder:
        out = solver(nr, nz)
        mesh, psi, exact = out[:3]
        l1, l2, linf = error_norms(mesh, psi, exact)
        row = ConvergenceRow(nr, nz, l1, l2, linf, iterations=int(out[3]) if len(out) > 3 else 0)
        if rows:
            prev = rows[-1]
            row.order_l1 = math.log2(prev.l1 / l1)
            row.order_l2 = math.log2(prev.l2 / l2)
            row.order_linf = math.log2(prev.linf / linf)
        rows.append(row)
        logger.info("%dx%d: L1 %.3e L2 %.3e Linf %.3e", nr, nz, l1, l2, linf)
    return rows


LADDER = [(31, 41), (61, 81), (121, 161), (241, 321), (481, 641)]


def write_convergence_csv(rows, path):
    with open(path, "w", newline="") as fh:
        fh.write("# mesh convergence table; orders are log2(coarse/fine)\n")
        w = csv.writer(fh)
        w.writerow(["nr", "nz", "L1", "L2", "Linf", "order_L1", "order_L2", "order_Linf",
                    "iterations"])
        for r in rows:
            w.writerow([r.nr, r.nz, f"{r.l1:.6e}", f"{r.l2:.6e}", f"{r.linf:.6e}",
                        f"{r.order_l1:.4f}", f"{r.order_l2:.4f}", f"{r.order_linf:.4f}",
                        r.iterations])


def format_convergence(rows) -> str:
    lines = [f"{'grid':>10} {'L1':>11} {'L2':>11} {'Linf':>11} {'p(L1)':>6} {'p(L2)':>6} "
             f"{'p(Linf)':>7}"]
    for r in rows:
        lines.append(
            f"{r.nr:>4}x{r.nz:<5} {r.l1:11.3e} {r.l2:11.3e} {r.linf:11.3e} "
            f"{r.order_l1:6.2f} {r.order_l2:6.2f} {r.order_linf:7.2f}"
        )
    return "\n".join(lines)


def write_report(rows, path):
    Path(path).write_text(format_convergence(rows) + "\n")


# ---------------------------------------------------------------------------
# synthetic free-boundary case
# ---------------------------------------------------------------------------

# the rectangular computational box used for the ITER-like free-boundary runs
ITER_BOX = (3.55, 8.88, -3.84, 4.92)


def _isoflux_fit(U, dUdn, mesh: CutCellMesh, coils, points, xpoint, reg: float,
                 weight: float = 10.0, h: float = 1e-3) -> np.ndarray:
    """Currents making ``psi`` uniform on ``points`` with a field null at ``xpoint``.

    The common flux level is a free unknown; the Tikhonov term acts on
    mega-ampere-turns.
    """
    from .green import interior_estimate

    xp = np.asarray(xpoint, dtype=float)
    probes = np.array([xp, xp + [h, 0], xp - [h, 0], xp + [0, h], xp - [0, h]])
    pts = np.vstack([points, probes])
    plasma = interior_estimate(U, dUdn, pts, mesh)
    A = coils.response(pts)
    n = len(points)
    nc = A.shape[1]
    rows = [np.append(A[k], 1.0) for k in range(n + 1)]
    rhs = list(plasma[: n + 1])
    for a, b in ((n + 1, n + 2), (n + 3, n + 4)):
        rows.append(weight * np.append((A[a] - A[b]) / (2 * h), 0.0))
        rhs.append(weight * (plasma[a] - plasma[b]) / (2 * h))
    turns = np.array([c.turns for c in coils])
    D = np.hstack([np.diag(turns / 1e6), np.zeros((nc, 1))])
    M = np.vstack([np.array(rows), math.sqrt(reg) * D])
    x = np.linalg.lstsq(M, np.concatenate([rhs, np.zeros(nc)]), rcond=None)[0]
    return x[:-1]


@dataclass
class FreeBoundarySetup:
    mesh: CutCellMesh
    coils: object
    profiles: object
    psi_init: np.ndarray
    target: object
    plasma_current: float
    lcfs: BoundaryPolygon


@dataclass(frozen=True)
class FreeBoundaryCase:
    """Single-null equilibrium on the ITER-like box held by the Table-3 style coil set.

    The initial field is self-consistent up to the coil fit: a fixed-boundary
    equilibrium is solved inside a separatrix, and coil currents are fitted
    so that this separatrix (and its X-point) is reproduced in vacuum plus
    plasma flux. Control points are traced from that field.
    """

    nr: int = 65
    nz: int = 105
    r0: float = 6.2
    minor: float = 2.0
    kappa: float = 1.4
    delta: float = 0.33
    xpoint: tuple = (5.45, -3.15)
    z_cut: float = -2.2
    seed_density: float = 0.143
    p0: float = 5e5
    b0: float = 5.3
    cg: float = 0.02
    reg: float = 1e-4
    n_control: int = 21
    n_sub: int = 20

    def grid(self) -> CartesianGrid:
        return CartesianGrid(*ITER_BOX, self.nr, self.nz)

    def profiles(self):
        """Pressure and ``g`` vanishing smoothly (to second order) at the separatrix."""
        from .physics import ProfileTable

        g0 = self.b0 * self.r0
        return ProfileTable.from_functions(
            lambda x: self.p0 * (1 - x) ** 2,
            lambda x: g0 * np.sqrt(1 + self.cg * (1 - x) ** 2))

    def _seed(self, rect, coils):
        from .elliptic import EllipticOperator
        from .green import field_estimate

        sol = SolovievCase(self.minor / self.r0, self.kappa, self.delta)
        shape = sol.boundary(200).vertices * self.r0
        R, Z = rect.grid.mesh()
        inside = ((sol.psi(R / self.r0, Z / self.r0) < 0) & rect.active
                  & (np.abs(R - self.r0) < self.minor))
        src = np.where(inside, self.seed_density * R ** 2, 0.0)
        op = EllipticOperator(rect)
        U = op.solve(src, 0.0)
        dUdn = op.normal_derivative(U, 0.0)
        ctrl = BoundaryPolygon(shape).resample(40)
        ctrl = ctrl[ctrl[:, 1] > self.z_cut]
        I = _isoflux_fit(U, dUdn, rect, coils, ctrl, self.xpoint, self.reg)
        return np.where(rect.valid, field_estimate(U, dUdn, rect, coils, I), 0.0)

    def build(self) -> FreeBoundarySetup:
        from .coils import ShapeTarget, separatrix_contour
        from .driver import EquilibriumSource, SolverConfig, solve_fixed_boundary
        from .elliptic import EllipticOperator
        from .geometry import rectangular_mesh
        from .green import field_estimate, iter_like_coils
        from .physics import find_critical_points, plasma_current, select_normalization

        grid = self.grid()
        rect = rectangular_mesh(grid)
        coils = iter_like_coils(self.n_sub)
        bp = rect.boundary_points

        def normalization(psi):
            return select_normalization(find_critical_points(psi, rect),
                                        grid.bilinear(psi, bp[:, 0], bp[:, 1]), bp)

        seed = self._seed(rect, coils)
        n_seed = normalization(seed)
        lcfs = BoundaryPolygon(BoundaryPolygon(separatrix_contour(seed, rect, n_seed))
                               .resample(400))
        # plasma: fixed-boundary equilibrium inside the seed separatrix
        profiles = self.profiles()
        cut = build_cut_cell_mesh(grid, lcfs)
        inner = solve_fixed_boundary(cut, 0.0, profiles=profiles,
                                     config=SolverConfig(eps_in=1e-6, n_max=200))
        fn = EquilibriumSource(cut, profiles)
        fn.psi_b = np.zeros(len(cut.boundary_points))
        src, _ = fn(inner.psi)
        ip = plasma_current(src, cut)
        # coils holding that plasma in the box
        op = EllipticOperator(rect)
        U = op.solve(src, 0.0)
        dUdn = op.normal_derivative(U, 0.0)
        I = _isoflux_fit(U, dUdn, rect, coils, lcfs.resample(80), n_seed.xpoint, self.reg)
        psi = np.where(rect.valid, field_estimate(U, dUdn, rect, coils, I), 0.0)
        target = ShapeTarget.from_field(psi, rect, normalization(psi), self.n_control)
        logger.info("synthetic case: Ip %.3f MA, seed X-point (%.3f, %.3f)", ip / 1e6,
                    *n_seed.xpoint)
        return FreeBoundarySetup(rect, coils, profiles, psi, target, ip, lcfs)
