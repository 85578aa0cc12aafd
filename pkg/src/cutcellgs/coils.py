"""Coil currents from regularized least squares against shape control points."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import BoundaryPolygon, CutCellMesh, read_points
from .green import CoilSet, line_weights


@dataclass(frozen=True)
class ShapeTarget:
    """Control points on the desired plasma boundary."""

    points: np.ndarray

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.points, dtype=float))
        if p.ndim != 2 or p.shape[1] != 2:
            raise ValueError("control points must be an (M, 2) array")
        d = np.hypot(*(p[:, None, :] - p[None, :, :]).transpose(2, 0, 1))
        np.fill_diagonal(d, np.inf)
        if np.any(d == 0.0):
            raise ValueError("control points must be distinct")
        object.__setattr__(self, "points", p)

    def __len__(self):
        return len(self.points)

    @classmethod
    def from_boundary(cls, boundary: BoundaryPolygon | np.ndarray, m: int = 21) -> "ShapeTarget":
        """``m`` points evenly spaced in arc length along a closed polyline."""
        poly = boundary if isinstance(boundary, BoundaryPolygon) else BoundaryPolygon(boundary)
        return cls(poly.resample(m))

    @classmethod
    def from_field(cls, psi, mesh: CutCellMesh, normalization, m: int = 21,
                   n_rays: int = 720) -> "ShapeTarget":
        """``m`` points on the ``psibar = 1`` contour of a grid field, traced from the axis."""
        return cls.from_boundary(separatrix_contour(psi, mesh, normalization, n_rays), m)

    @classmethod
    def from_file(cls, path) -> "ShapeTarget":
        return cls(read_points(path))

    def check(self, mesh: CutCellMesh, n_coils: int | None = None):
        inside = mesh.inside(self.points[:, 0], self.points[:, 1])
        if not inside.all():
            k = int(np.argmin(inside))
            raise ValueError(f"control point {k} at ({self.points[k, 0]:.6g}, "
                             f"{self.points[k, 1]:.6g}) lies outside the domain")
        if n_coils is not None and len(self) <= n_coils:
            raise ValueError(f"need more control points ({len(self)}) than coils ({n_coils})")


def separatrix_contour(psi, mesh: CutCellMesh, normalization, n_rays: int = 720) -> np.ndarray:
    """Closed polyline where ``psibar`` first reaches 1 along rays from the magnetic axis.

    Rays that leave the domain without crossing (the one aimed through the
    X-point grazes the level) are skipped; more than a tenth skipped is an
    error.
    """
    g = mesh.grid
    psibar = normalization.psibar(np.asarray(psi, dtype=float))
    ax = np.asarray(normalization.axis, dtype=float)
    step = 0.25 * min(g.dr, g.dz)
    reach = np.hypot(g.r_max - g.r_min, g.z_max - g.z_min)
    s = np.arange(1, int(reach / step) + 1) * step
    out = []
    for th in np.linspace(0.0, 2 * np.pi, n_rays, endpoint=False):
        d = np.array([np.cos(th), np.sin(th)])
        r = ax[0] + s * d[0]
        z = ax[1] + s * d[1]
        ok = mesh.inside(r, z)
        stop = int(np.argmin(ok)) if not ok.all() else len(s)
        vals = g.bilinear(psibar, r[:stop], z[:stop])
        hit = np.nonzero(vals >= 1.0)[0]
        if len(hit) == 0:
            continue
        k = hit[0]
        lo = s[k - 1] if k > 0 else 0.0
        hi = s[k]
        for _ in range(50):
            mid = 0.5 * (lo + hi)
            v = g.bilinear(psibar, ax[0] + mid * d[0], ax[1] + mid * d[1])[0]
            lo, hi = (mid, hi) if v < 1.0 else (lo, mid)
        t = 0.5 * (lo + hi)
        out.append(ax + t * d)
    if len(out) < 0.9 * n_rays:
        raise ValueError(f"only {len(out)} of {n_rays} rays reach the separatrix")
    return np.array(out)


def build_constraint_rows(points, U, dUdn, mesh: CutCellMesh, coils: CoilSet, psi_x: float,
                          W_line=None, response=None):
    """Least-squares rows ``A I ~ b`` asking for ``psi = psi_x`` at each control point.

    ``A[j, i] = mu0 G(coil_i; x_j) turns_i``;
    ``b_j = -int (dl/R) G dU/dn + U(x_j) - psi_x``.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    inside = mesh.inside(pts[:, 0], pts[:, 1])
    if not inside.all():
        k = int(np.argmin(inside))
        raise ValueError(f"control point {k} at ({pts[k, 0]:.6g}, {pts[k, 1]:.6g}) lies "
                         "outside the domain")
    if W_line is None:
        f = mesh.facets
        W_line = line_weights(pts, f.endpoints, f.areas)
    A = coils.response(pts) if response is None else response
    u = mesh.grid.bilinear(np.where(mesh.valid, U, 0.0), pts[:, 0], pts[:, 1])
    b = -W_line @ np.asarray(dUdn, dtype=float) + u - psi_x
    return A, b


def regularization_matrix(n: int, reference=None) -> np.ndarray:
    """Identity, or ``diag(1/|I0|)`` with a floor against vanishing references."""
    if reference is None:
        return np.eye(n)
    ref = np.abs(np.asarray(reference, dtype=float))
    top = float(ref.max(initial=0.0))
    floor = 1e-6 * top if top > 0 else 1.0
    return np.diag(1.0 / np.maximum(ref, floor))


def objective(A, b, currents, gamma, reference=None) -> float:
    D = regularization_matrix(A.shape[1], reference)
    r = A @ currents - b
    return float(r @ r + gamma * np.sum((D @ currents) ** 2))


def solve_currents(A, b, gamma: float = 1e-15, reference=None) -> np.ndarray:
    """Minimize ``|A I - b|^2 + gamma |D I|^2`` by an orthogonal factorization."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim != 2 or b.shape != (A.shape[0],):
        raise ValueError("A must be (M, N) and b of length M")
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    n = A.shape[1]
    D = regularization_matrix(n, reference)
    if gamma > 0:
        # scale columns so the stacked problem is well balanced
        M = np.vstack([A, np.sqrt(gamma) * D])
        rhs = np.concatenate([b, np.zeros(n)])
    else:
        M, rhs = A, b
    col = np.linalg.norm(M, axis=0)
    col[col == 0] = 1.0
    x, _, rank, _ = np.linalg.lstsq(M / col, rhs, rcond=None)
    if rank < n:
        raise np.linalg.LinAlgError("rank-deficient coil least-squares problem")
    return x / col
