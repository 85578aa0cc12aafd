"""Profiles, critical points, flux normalization and the plasma source term."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.special import comb

from .geometry import CutCellMesh

logger = logging.getLogger(__name__)

MU0 = 4e-7 * math.pi


class InvalidSolution(RuntimeError):
    """The flux field has no unique magnetic axis."""

    history: list = []


# ---------------------------------------------------------------------------
# barycentric rational interpolation
# ---------------------------------------------------------------------------


def barycentric_weights(n: int, d: int) -> np.ndarray:
    """Floater-Hormann weights for ``n`` equispaced nodes and blend degree ``d``."""
    if n <= d:
        raise ValueError(f"need more than d = {d} nodes, got {n}")
    w = np.empty(n)
    last = n - 1
    for i in range(n):
        k = np.arange(max(0, i - last + d), min(d, i) + 1)
        w[i] = (-1.0) ** (i - d) * comb(d, k).sum()
    return w


def _barycentric(nodes, weights, values, x, derivative=False):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    diff = x[:, None] - nodes[None, :]
    exact = diff == 0.0
    hit = exact.any(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = weights[None, :] / diff
        den = a.sum(axis=1)
        r = (a @ values) / den
    r[hit] = values[np.argmax(exact[hit], axis=1)]
    if not derivative:
        return r
    # the derivative formula cancels catastrophically next to a node; within
    # 1e-7 spacings the node derivative is accurate to that relative offset
    near = np.abs(diff) <= 1e-7 * (nodes[-1] - nodes[0]) / max(len(nodes) - 1, 1)
    close = near.any(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        dr = np.sum(a * (r[:, None] - values[None, :]) / diff, axis=1) / den
    if close.any():
        idx = np.argmax(near[close], axis=1)
        dr[close] = _node_derivative(nodes, weights, values)[idx]
    return r, dr


def _node_derivative(nodes, weights, values):
    dx = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(dx, 1.0)
    D = (weights[None, :] / weights[:, None]) / dx
    np.fill_diagonal(D, 0.0)
    np.fill_diagonal(D, -D.sum(axis=1))
    return D @ values


class BarycentricInterpolant:
    """Rational interpolant through equispaced data."""

    def __init__(self, nodes, values, d: int = 4):
        self.nodes = np.asarray(nodes, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self.d = d
        self.weights = barycentric_weights(len(self.nodes), d)

    def __call__(self, x):
        return _barycentric(self.nodes, self.weights, self.values, x)

    def derivative(self, x):
        return _barycentric(self.nodes, self.weights, self.values, x, derivative=True)[1]


@dataclass(frozen=True)
class ProfileTable:
    """Equispaced ``p(psibar)`` and ``g(psibar)`` tables on ``[0, 1]``."""

    psibar: np.ndarray
    p: np.ndarray
    g: np.ndarray
    d: int = 4

    def __post_init__(self):
        x = np.asarray(self.psibar, dtype=float)
        p = np.asarray(self.p, dtype=float)
        g = np.asarray(self.g, dtype=float)
        if x.ndim != 1 or p.shape != x.shape or g.shape != x.shape:
            raise ValueError("profile columns must be 1-D and of equal length")
        if len(x) < self.d + 1:
            raise ValueError(f"profile needs at least {self.d + 1} nodes")
        if abs(x[0]) > 1e-12 or abs(x[-1] - 1.0) > 1e-12:
            raise ValueError("profile nodes must span [0, 1]")
        h = np.diff(x)
        if np.any(h <= 0):
            raise ValueError("profile nodes must be strictly increasing")
        if np.max(np.abs(h - h.mean())) > 1e-9 * h.mean() + 1e-12:
            raise ValueError("profile nodes must be equispaced")
        object.__setattr__(self, "psibar", x)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "weights", barycentric_weights(len(x), self.d))

    @classmethod
    def from_functions(cls, p, g, n: int = 21, d: int = 4) -> "ProfileTable":
        x = np.linspace(0.0, 1.0, n)
        return cls(x, np.asarray(p(x), dtype=float), np.asarray(g(x), dtype=float), d)

    def scaled(self, pressure_factor: float = 1.0) -> "ProfileTable":
        return ProfileTable(self.psibar, pressure_factor * self.p, self.g, self.d)

    def evaluate(self, psibar):
        x = np.clip(psibar, 0.0, 1.0)
        return (_barycentric(self.psibar, self.weights, self.p, x),
                _barycentric(self.psibar, self.weights, self.g, x))

    def derivative(self, psibar):
        x = np.clip(psibar, 0.0, 1.0)
        return (_barycentric(self.psibar, self.weights, self.p, x, derivative=True)[1],
                _barycentric(self.psibar, self.weights, self.g, x, derivative=True)[1])

    @classmethod
    def from_file(cls, path, d: int = 4) -> "ProfileTable":
        path = Path(path)
        rows = []
        for lineno, line in enumerate(path.read_text().splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.replace(",", " ").split()
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 'psibar p g'")
            try:
                rows.append([float(v) for v in parts])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: malformed number") from exc
        arr = np.array(rows, dtype=float).reshape(-1, 3)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], d)

    def to_file(self, path):
        lines = ["# psibar p[Pa] g[T m]"]
        lines += [f"{x:.17g} {p:.17g} {g:.17g}" for x, p, g in zip(self.psibar, self.p, self.g)]
        Path(path).write_text("\n".join(lines) + "\n")


def profile_eval(table: ProfileTable, psibar):
    return table.evaluate(psibar)


def profile_derivative(table: ProfileTable, psibar):
    return table.derivative(psibar)


# ---------------------------------------------------------------------------
# critical points
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CriticalPoint:
    r: float
    z: float
    psi: float
    kind: str  # "min", "max" or "saddle"
    det: float
    grad_norm: float

    @property
    def is_extremum(self) -> bool:
        return self.kind in ("min", "max")


def _basis(nodes, x):
    """Lagrange basis values and first two derivatives at ``x``."""
    n = len(nodes)
    L = np.zeros(n)
    L1 = np.zeros(n)
    L2 = np.zeros(n)
    for a in range(n):
        others = [nodes[b] for b in range(n) if b != a]
        den = np.prod([nodes[a] - o for o in others])
        f = [x - o for o in others]
        L[a] = np.prod(f) / den
        s1 = 0.0
        s2 = 0.0
        for p in range(len(f)):
            rest = [f[q] for q in range(len(f)) if q != p]
            s1 += np.prod(rest)
            for q in range(len(f)):
                if q != p:
                    s2 += np.prod([f[t] for t in range(len(f)) if t != p and t != q])
        L1[a] = s1 / den
        L2[a] = s2 / den
    return L, L1, L2


class LocalField:
    """Tensor-product polynomial interpolation of grid data near a point."""

    def __init__(self, mesh: CutCellMesh, psi: np.ndarray, valid: np.ndarray):
        self.grid = mesh.grid
        self.psi = psi
        self.valid = valid

    def window(self, r, z, size):
        g = self.grid
        x = (r - g.r_min) / g.dr
        y = (z - g.z_min) / g.dz
        i0 = int(math.floor(x)) - size // 2 + 1
        j0 = int(math.floor(y)) - size // 2 + 1
        i0 = min(max(i0, 0), g.nr - size)
        j0 = min(max(j0, 0), g.nz - size)
        if not self.valid[i0:i0 + size, j0:j0 + size].all():
            return None
        return i0, j0

    def pick_window(self, r, z):
        for size in (6, 4):
            w = self.window(r, z, size)
            if w is not None:
                return w + (size,)
        return None

    def derivatives(self, r, z, window=None):
        """``(psi, grad, hessian)`` at ``(r, z)`` or ``None`` without valid data.

        ``window`` pins the interpolation stencil ``(i0, j0, size)``.
        """
        w = window or self.pick_window(r, z)
        if w is None:
            return None
        i0, j0, size = w
        g = self.grid
        xs = g.r[i0:i0 + size]
        ys = g.z[j0:j0 + size]
        Lx, Lx1, Lx2 = _basis(xs, r)
        Ly, Ly1, Ly2 = _basis(ys, z)
        c = self.psi[i0:i0 + size, j0:j0 + size]
        val = Lx @ c @ Ly
        grad = np.array([Lx1 @ c @ Ly, Lx @ c @ Ly1])
        hess = np.array([[Lx2 @ c @ Ly, Lx1 @ c @ Ly1], [Lx1 @ c @ Ly1, Lx @ c @ Ly2]])
        return val, grad, hess


def _newton(local: LocalField, r, z, tol, max_iter=50):
    g = local.grid
    hmax = max(g.dr, g.dz)
    # once close, keep one stencil: switching windows across a grid line
    # makes the interpolant kink and Newton can cycle around the root
    window = None
    for _ in range(max_iter):
        out = local.derivatives(r, z, window)
        if out is None:
            return None
        val, grad, hess = out
        if np.hypot(*grad) <= tol:
            return r, z, val, grad, hess
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            return None
        n = np.hypot(*step)
        if n > hmax:
            step *= hmax / n
        r -= step[0]
        z -= step[1]
        if not g.contains(r, z):
            return None
        if window is None and n < 0.25 * hmax:
            window = local.pick_window(r, z)
    return None


def _scan_candidates(mesh, psi, valid, n_candidates):
    g = mesh.grid
    ok = valid.copy()
    ok[0, :] = ok[-1, :] = ok[:, 0] = ok[:, -1] = False
    inner = ok.copy()
    inner[1:-1, 1:-1] &= (valid[2:, 1:-1] & valid[:-2, 1:-1] & valid[1:-1, 2:] & valid[1:-1, :-2])
    gr = np.zeros_like(psi)
    gz = np.zeros_like(psi)
    gr[1:-1, :] = (psi[2:, :] - psi[:-2, :]) / (2 * g.dr)
    gz[:, 1:-1] = (psi[:, 2:] - psi[:, :-2]) / (2 * g.dz)
    g2 = np.where(inner, gr**2 + gz**2, np.inf)
    local_min = (g2 == ndimage.minimum_filter(g2, size=3, mode="constant", cval=np.inf))
    local_min &= np.isfinite(g2)
    idx = np.argwhere(local_min)
    order = np.lexsort((idx[:, 1], idx[:, 0], g2[local_min]))
    return idx[order[:n_candidates]]


def _surrounded(mesh: CutCellMesh, r: float, z: float) -> bool:
    """True when the grid square holding ``(r, z)`` has four active corners.

    Newton runs that end next to the boundary extrapolate across data the
    interior solve does not control and are not trusted.
    """
    g = mesh.grid
    x = (r - g.r_min) / g.dr
    y = (z - g.z_min) / g.dz
    i, j = int(np.floor(x)), int(np.floor(y))
    if not (0 <= i < g.nr - 1 and 0 <= j < g.nz - 1):
        return False
    return bool(mesh.active[i:i + 2, j:j + 2].all())


def find_critical_points(psi: np.ndarray, mesh: CutCellMesh, n_candidates: int = 10,
                         n_jobs: int = 1, valid: np.ndarray | None = None):
    """Locate and classify critical points of the grid field ``psi`` inside the domain."""
    psi = np.asarray(psi, dtype=float)
    valid = mesh.valid if valid is None else valid
    g = mesh.grid
    vals = psi[valid]
    scale = max(float(np.ptp(vals)), 1e-300) / min(g.r_max - g.r_min, g.z_max - g.z_min)
    tol = 1e-8 * scale
    cands = _scan_candidates(mesh, psi, valid, n_candidates)
    local = LocalField(mesh, psi, valid)
    starts = [(g.r[i], g.z[j]) for i, j in cands]

    def run(start):
        return _newton(local, start[0], start[1], tol)

    if n_jobs > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            results = list(ex.map(run, starts))
    else:
        results = [run(s) for s in starts]

    found = []
    for start, res in zip(starts, results):
        if res is None:
            logger.debug("Newton search from (%.4g, %.4g) dropped", *start)
            continue
        r, z, val, grad, hess = res
        det = float(np.linalg.det(hess))
        if det > 0:
            kind = "min" if hess[0, 0] > 0 else "max"
        elif det < 0:
            kind = "saddle"
        else:
            continue
        found.append(CriticalPoint(float(r), float(z), float(val), kind, det,
                                   float(np.hypot(*grad))))
    if not found:
        return []
    found = [p for p in found if _surrounded(mesh, p.r, p.z)]
    radius = 2.0 * max(g.dr, g.dz)
    unique: list[CriticalPoint] = []
    for p in sorted(found, key=lambda c: c.grad_norm):
        if all(math.hypot(p.r - q.r, p.z - q.z) > radius for q in unique):
            unique.append(p)
    unique.sort(key=lambda c: (c.r, c.z))
    return unique


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Normalization:
    psi_axis: float
    psi_x: float
    axis: tuple[float, float]
    xpoint: tuple[float, float] | None
    limited: bool = False

    def __post_init__(self):
        if self.psi_axis == self.psi_x:
            raise InvalidSolution("axis and separatrix flux coincide")

    def psibar(self, psi):
        return (np.asarray(psi) - self.psi_axis) / (self.psi_x - self.psi_axis)


def select_normalization(points, psi_boundary=None, boundary_points=None) -> Normalization:
    """Pick the magnetic axis and the separatrix flux from critical points.

    With no saddle in the domain the separatrix is the contour touching the
    wall: the smallest (axis minimum) or largest (axis maximum) boundary value.
    """
    extrema = [p for p in points if p.is_extremum]
    if len(extrema) != 1:
        where = ", ".join(f"{p.kind} at ({p.r:.4g}, {p.z:.4g}) psi={p.psi:.6g}" for p in extrema)
        raise InvalidSolution(f"expected exactly one magnetic axis, found {len(extrema)}"
                              + (f": {where}" if where else ""))
    axis = extrema[0]
    convex = axis.kind == "min"
    saddles = [p for p in points if p.kind == "saddle"]
    if convex:
        saddles = [p for p in saddles if p.psi > axis.psi]
    else:
        saddles = [p for p in saddles if p.psi < axis.psi]
    if saddles:
        pick = min(saddles, key=lambda p: p.psi) if convex else max(saddles, key=lambda p: p.psi)
        return Normalization(axis.psi, pick.psi, (axis.r, axis.z), (pick.r, pick.z))
    if psi_boundary is None or len(psi_boundary) == 0:
        raise InvalidSolution("no saddle point and no limiter data")
    psi_boundary = np.asarray(psi_boundary, dtype=float)
    k = int(np.argmin(psi_boundary) if convex else np.argmax(psi_boundary))
    loc = None if boundary_points is None else tuple(np.asarray(boundary_points)[k])
    return Normalization(axis.psi, float(psi_boundary[k]), (axis.r, axis.z), loc, limited=True)


# ---------------------------------------------------------------------------
# source term
# ---------------------------------------------------------------------------


def plasma_mask(psibar_grid: np.ndarray, active: np.ndarray, norm: Normalization, grid,
                clip_at_xpoint: bool = True) -> np.ndarray:
    """Points with ``psibar < 1`` connected (4-neighbour) to the magnetic axis.

    When an X-point is known, points beyond the line through it perpendicular
    to the axis direction are excluded so the private flux region never joins.
    """
    inside = active & (psibar_grid < 1.0)
    if clip_at_xpoint and norm.xpoint is not None and not norm.limited:
        R, Z = grid.mesh()
        ax = np.array(norm.axis)
        xp = np.array(norm.xpoint)
        d = xp - ax
        inside &= ((R - xp[0]) * d[0] + (Z - xp[1]) * d[1]) < 0.0
    labels, _ = ndimage.label(inside)
    i = int(np.clip(np.rint((norm.axis[0] - grid.r_min) / grid.dr), 0, grid.nr - 1))
    j = int(np.clip(np.rint((norm.axis[1] - grid.z_min) / grid.dz), 0, grid.nz - 1))
    lab = labels[i, j]
    if lab == 0:
        # axis grid point just outside: take the component nearest to it
        pts = np.argwhere(labels > 0)
        if len(pts) == 0:
            return np.zeros_like(inside)
        k = np.argmin((pts[:, 0] - i) ** 2 + (pts[:, 1] - j) ** 2)
        lab = labels[tuple(pts[k])]
    return labels == lab


def source_term(psi: np.ndarray, norm: Normalization, profiles: ProfileTable,
                mesh: CutCellMesh, psi_centroid: np.ndarray | None = None):
    """``Delta* psi`` right-hand side ``-(mu0 R^2 dp/dpsi + g dg/dpsi)`` at centroids.

    Returns ``(source, mask)``; the source vanishes outside the plasma.
    """
    pc = psi if psi_centroid is None else psi_centroid
    pbar = norm.psibar(pc)
    mask = plasma_mask(norm.psibar(psi), mesh.active, norm, mesh.grid)
    dpsi = norm.psi_x - norm.psi_axis
    x = pbar[mask]
    _, g = profiles.evaluate(x)
    dp, dg = profiles.derivative(x)
    r = mesh.centroids[..., 0][mask]
    out = np.zeros(mesh.grid.shape)
    out[mask] = -(MU0 * r**2 * dp + g * dg) / dpsi
    return out, mask


def plasma_current(source: np.ndarray, mesh: CutCellMesh) -> float:
    """Toroidal current ``int J dA`` with ``mu0 R J = source``."""
    r = mesh.centroids[..., 0]
    w = mesh.volume_fraction * mesh.grid.dr * mesh.grid.dz
    return float(np.sum(source / (MU0 * r) * w))
