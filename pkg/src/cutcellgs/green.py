"""Toroidal Green's function, coil fluxes and boundary-value formulas.

Sign conventions: the solver works with ``Delta* psi = S``; the Green's
function satisfies ``Delta* G = -R delta`` so a coil carrying ampere-turns
``N I`` adds ``-mu0 G N I`` to ``psi``.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ellipe, ellipkm1, hyp2f1

from .geometry import CutCellMesh
from .physics import MU0

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


def elliptic_KE(k):
    """Complete elliptic integrals ``K(k)`` and ``E(k)`` of modulus ``k``."""
    k = np.asarray(k, dtype=float)
    if np.any((k < 0) | (k >= 1)) or np.any(~np.isfinite(k)):
        raise ValueError("elliptic modulus must satisfy 0 <= k < 1")
    m = k * k
    m1 = (1.0 - k) * (1.0 + k)
    K = ellipkm1(m1)
    E = ellipe(m)
    if K.ndim == 0:
        return float(K), float(E)
    return K, E


def elliptic_KE_agm(k: float) -> tuple[float, float]:
    """Arithmetic-geometric mean evaluation (independent of scipy)."""
    if not 0.0 <= k < 1.0:
        raise ValueError("elliptic modulus must satisfy 0 <= k < 1")
    a, b = 1.0, math.sqrt((1.0 - k) * (1.0 + k))
    c = k
    s = 0.5 * c * c
    p = 1.0
    for _ in range(64):
        if abs(c) <= 1e-16 * a:
            break
        a, b, c = 0.5 * (a + b), math.sqrt(a * b), 0.5 * (a - b)
        p *= 2.0
        s += 0.5 * p * c * c
    K = math.pi / (2.0 * a)
    return K, K * (1.0 - s)


def greens_function(r, z, rp, zp):
    """``G(R, Z; R', Z') = (1/2pi) sqrt(R R')/k [(2 - k^2) K(k) - 2 E(k)]``."""
    r = np.asarray(r, dtype=float)
    z = np.asarray(z, dtype=float)
    rp = np.asarray(rp, dtype=float)
    zp = np.asarray(zp, dtype=float)
    dz2 = (z - zp) ** 2
    den = (r + rp) ** 2 + dz2
    m = np.minimum(4.0 * r * rp / den, 1.0)
    m1 = ((r - rp) ** 2 + dz2) / den
    with np.errstate(divide="ignore", invalid="ignore"):
        K = ellipkm1(m1)
        E = ellipe(m)
        k = np.sqrt(m)
        G = np.sqrt(r * rp) / (TWO_PI * k) * ((2.0 - m) * K - 2.0 * E)
        # small k: the bracket equals (pi/16) k^4 2F1(3/2, 3/2; 3; k^2) without cancellation
        small = m < 0.05
        if np.any(small):
            Gs = np.sqrt(r * rp) / 32.0 * m ** 1.5 * hyp2f1(1.5, 1.5, 3.0, np.where(small, m, 0.0))
            G = np.where(small, Gs, G)
    return G


# ---------------------------------------------------------------------------
# coils
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Coil:
    name: str
    kind: str  # "point" or "solenoid"
    r: float
    z: float = 0.0
    z_min: float = 0.0
    z_max: float = 0.0
    turns: float = 1.0

    def __post_init__(self):
        if self.kind not in ("point", "solenoid"):
            raise ValueError(f"coil {self.name}: unknown type {self.kind!r}")
        if not self.r > 0:
            raise ValueError(f"coil {self.name}: R must be positive")
        if not self.turns > 0:
            raise ValueError(f"coil {self.name}: turns must be positive")
        if self.kind == "solenoid" and not self.z_min < self.z_max:
            raise ValueError(f"coil {self.name}: need Zmin < Zmax")

    def filaments(self, n_sub: int):
        """``(R, Z, turns)`` of the point filaments representing the coil."""
        if self.kind == "point":
            return np.array([self.r]), np.array([self.z]), np.array([self.turns])
        h = (self.z_max - self.z_min) / n_sub
        zs = self.z_min + h * (np.arange(n_sub) + 0.5)
        return np.full(n_sub, self.r), zs, np.full(n_sub, self.turns / n_sub)


class CoilSet:
    """Ordered collection of coils; currents are per turn, in amperes."""

    def __init__(self, coils, n_sub: int = 20):
        self.coils = list(coils)
        names = [c.name for c in self.coils]
        if len(set(names)) != len(names):
            raise ValueError("coil names must be unique")
        if n_sub < 1:
            raise ValueError("n_sub must be positive")
        self.n_sub = n_sub

    def __len__(self):
        return len(self.coils)

    def __iter__(self):
        return iter(self.coils)

    @property
    def names(self):
        return [c.name for c in self.coils]

    def filaments(self):
        rs, zs, ws, idx = [], [], [], []
        for k, c in enumerate(self.coils):
            r, z, w = c.filaments(self.n_sub)
            rs.append(r)
            zs.append(z)
            ws.append(w)
            idx.append(np.full(len(r), k))
        return np.concatenate(rs), np.concatenate(zs), np.concatenate(ws), np.concatenate(idx)

    def response(self, points) -> np.ndarray:
        """``mu0 G turns`` matrix (points x coils); coil flux is ``-response @ I``."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        fr, fz, fw, fi = self.filaments()
        G = greens_function(pts[:, 0, None], pts[:, 1, None], fr[None, :], fz[None, :])
        out = np.zeros((len(pts), len(self.coils)))
        np.add.at(out.T, fi, (MU0 * G * fw[None, :]).T)
        return out

    def validate_outside(self, mesh: CutCellMesh):
        fr, fz, _, fi = self.filaments()
        inside = mesh.inside(fr, fz)
        if np.any(inside):
            k = int(fi[np.argmax(inside)])
            raise ValueError(f"coil {self.coils[k].name} lies inside the computational domain")

    @classmethod
    def from_file(cls, path, n_sub: int = 20) -> "CoilSet":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"no such file: {path}")
        coils = []
        for lineno, line in enumerate(path.read_text().splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                if len(parts) == 5 and parts[1] == "point":
                    coils.append(Coil(parts[0], "point", float(parts[2]), z=float(parts[3]),
                                      turns=float(parts[4])))
                elif len(parts) == 6 and parts[1] == "solenoid":
                    coils.append(Coil(parts[0], "solenoid", float(parts[2]),
                                      z_min=float(parts[3]), z_max=float(parts[4]),
                                      turns=float(parts[5])))
                else:
                    raise ValueError(
                        "expected 'name point R Z turns' or 'name solenoid R Zmin Zmax turns'"
                    )
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
        return cls(coils, n_sub=n_sub)

    def to_file(self, path):
        lines = ["# name type R Z|Zmin Zmax turns"]
        for c in self.coils:
            if c.kind == "point":
                lines.append(f"{c.name} point {c.r:.17g} {c.z:.17g} {c.turns:.17g}")
            else:
                lines.append(f"{c.name} solenoid {c.r:.17g} {c.z_min:.17g} {c.z_max:.17g} "
                             f"{c.turns:.17g}")
        Path(path).write_text("\n".join(lines) + "\n")


def iter_like_coils(n_sub: int = 20) -> CoilSet:
    """Poloidal-field and central-solenoid layout of an ITER-class device."""
    pf = [
        ("PF1", 3.9431, 7.5741, 248.6),
        ("PF2", 8.2851, 6.5398, 115.2),
        ("PF3", 11.9919, 3.2752, 185.9),
        ("PF4", 11.9630, -2.2336, 169.9),
        ("PF5", 8.3908, -6.7269, 216.8),
        ("PF6", 4.3340, -7.4665, 459.4),
    ]
    cs = [
        ("CS1", -5.415, -3.6067, 553.0),
        ("CS2", -3.6067, -1.7983, 553.0),
        ("CS3", -1.7983, 1.8183, 1106.0),
        ("CS4", 1.8183, 3.6267, 553.0),
        ("CS5", 3.6267, 5.435, 553.0),
    ]
    coils = [Coil(n, "point", r, z=z, turns=t) for n, r, z, t in pf]
    coils += [Coil(n, "solenoid", 1.696, z_min=a, z_max=b, turns=t) for n, a, b, t in cs]
    return CoilSet(coils, n_sub=n_sub)


def coil_flux(coils: CoilSet, currents, points) -> np.ndarray:
    """Flux ``-sum_i mu0 G(coil_i; x) turns_i I_i`` at each point."""
    return -coils.response(points) @ np.asarray(currents, dtype=float)


# ---------------------------------------------------------------------------
# boundary-integral weights
# ---------------------------------------------------------------------------


def _segment_weights(points, ends, lengths):
    """``w[p, k] = int_{segment k} G(x; x_p) / R(x) dl`` for all pairs."""
    pts = np.atleast_2d(points)
    a = ends[:, 0, :]
    b = ends[:, 1, :]
    mid = 0.5 * (a + b)
    W = np.empty((len(pts), len(lengths)))
    # midpoint rule everywhere, then refine near and self segments
    G = greens_function(mid[None, :, 0], mid[None, :, 1], pts[:, 0, None], pts[:, 1, None])
    dist = np.hypot(mid[None, :, 0] - pts[:, 0, None], mid[None, :, 1] - pts[:, 1, None])
    W[:] = G / mid[None, :, 0] * lengths[None, :]
    near = dist < 4.0 * lengths[None, :]
    t = 0.5 * (_GL_NODES + 1.0)
    for p, k in zip(*np.nonzero(near)):
        W[p, k] = _near_weight(pts[p], a[k], b[k], lengths[k], t)
    return W


def _near_weight(x, a, b, length, t):
    tang = (b - a) / length
    s_p = float((x - a) @ tang)
    off = float(np.hypot(*(x - a - s_p * tang)))
    if off < 1e-9 * length and -1e-9 * length < s_p < length * (1 + 1e-9):
        return _self_weight(x, a, b, length, s_p)
    # Gauss-Legendre on four sub-intervals
    total = 0.0
    for q in range(4):
        tt = (q + t) / 4.0
        pts = a[None, :] + tt[:, None] * (b - a)[None, :]
        g = greens_function(pts[:, 0], pts[:, 1], x[0], x[1])
        total += float(np.sum(_GL_WEIGHTS * g / pts[:, 0])) * 0.5 * length / 4.0
    return total


def _self_weight(x, a, b, length, s_p):
    """Weight of the segment containing the evaluation point.

    The logarithmic part ``(1/2pi)(ln(8R/rho) - 2)`` is integrated exactly and
    the bounded remainder with Gauss-Legendre on each side of the point.
    """
    rp = x[0]
    tang = (b - a) / length
    total = 0.0
    for lo, hi in ((0.0, s_p), (s_p, length)):
        span = hi - lo
        if span <= 0.0:
            continue
        # exact: int_0^span (1/2pi)(ln(8R/s) - 2) ds
        total += span / TWO_PI * (math.log(8.0 * rp / span) + 1.0 - 2.0)
        s = lo + 0.5 * (_GL_NODES + 1.0) * span
        pts = a[None, :] + s[:, None] * tang[None, :]
        rho = np.abs(s - s_p)
        g = greens_function(pts[:, 0], pts[:, 1], x[0], x[1]) / pts[:, 0]
        sing = (np.log(8.0 * rp / rho) - 2.0) / TWO_PI
        total += float(np.sum(_GL_WEIGHTS * (g - sing))) * 0.5 * span
    return total


@dataclass(frozen=True)
class BoundaryWeights:
    """Precomputed line-integral and coil weights for a set of evaluation points."""

    points: np.ndarray
    W_line: np.ndarray
    W_coil: np.ndarray

    @classmethod
    def build(cls, mesh: CutCellMesh, coils: CoilSet | None, points=None, n_jobs: int = 1,
              chunk: int = 64) -> "BoundaryWeights":
        pts = mesh.boundary_points if points is None else np.atleast_2d(points)
        f = mesh.facets
        W = line_weights(pts, f.endpoints, f.areas, n_jobs=n_jobs, chunk=chunk)
        Wc = np.zeros((len(pts), 0)) if coils is None or len(coils) == 0 else coils.response(pts)
        return cls(np.array(pts), W, Wc)


def line_weights(points, ends, lengths, n_jobs: int = 1, chunk: int = 64) -> np.ndarray:
    """Weights of ``int (dl/R) G`` for each (point, segment) pair, chunked by point."""
    points = np.atleast_2d(points)
    blocks = [(s, min(s + chunk, len(points))) for s in range(0, len(points), chunk)]

    def work(block):
        s, e = block
        return _segment_weights(points[s:e], ends, lengths)

    if n_jobs > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            parts = list(ex.map(work, blocks))
    else:
        parts = [work(b) for b in blocks]
    if not parts:
        return np.zeros((0, len(lengths)))
    return np.vstack(parts)


# ---------------------------------------------------------------------------
# boundary values
# ---------------------------------------------------------------------------


def solve_homogeneous_U(op, source) -> np.ndarray:
    """``Delta* U = source`` in the domain with ``U = 0`` on the boundary."""
    return op.solve(source, 0.0)


def normal_derivative(U, op) -> np.ndarray:
    """Outward normal derivative of ``U`` at every facet (zero boundary data)."""
    return op.normal_derivative(U, 0.0)


def hagenow_boundary(dUdn, currents, weights: BoundaryWeights) -> np.ndarray:
    """``psi_b = -int (dl/R) G dU/dn - sum mu0 G N I`` at the weight points."""
    out = -weights.W_line @ np.asarray(dUdn, dtype=float)
    if weights.W_coil.shape[1]:
        out = out - weights.W_coil @ np.asarray(currents, dtype=float)
    return out


def volume_integral_boundary(source, mesh: CutCellMesh, points, coils: CoilSet | None = None,
                             currents=None, chunk: int = 256) -> np.ndarray:
    """``psi = -int G S / R dA - sum mu0 G N I`` by midpoint quadrature on cells."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    src = np.asarray(source, dtype=float)
    m = mesh.active & (src != 0.0)
    rc = mesh.centroids[..., 0][m]
    zc = mesh.centroids[..., 1][m]
    q = src[m] / rc * mesh.volume_fraction[m] * mesh.grid.dr * mesh.grid.dz
    out = np.zeros(len(pts))
    for s in range(0, len(pts), chunk):
        p = pts[s:s + chunk]
        G = greens_function(rc[None, :], zc[None, :], p[:, 0, None], p[:, 1, None])
        out[s:s + chunk] = -(G @ q)
    if coils is not None and len(coils) and currents is not None:
        out += coil_flux(coils, currents, pts)
    return out


def interior_estimate(U, dUdn, points, mesh: CutCellMesh, coils: CoilSet | None = None,
                      currents=None, W_line=None, n_jobs: int = 1,
                      check_inside: bool = True) -> np.ndarray:
    """``psi = U - int (dl/R) G dU/dn - sum mu0 G N I`` at interior points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if check_inside:
        ok = mesh.inside(pts[:, 0], pts[:, 1])
        if not ok.all():
            k = int(np.argmin(ok))
            raise ValueError(f"point {k} at ({pts[k, 0]:.6g}, {pts[k, 1]:.6g}) is outside "
                             "the domain")
    if W_line is None:
        f = mesh.facets
        W_line = line_weights(pts, f.endpoints, f.areas, n_jobs=n_jobs)
    u = mesh.grid.bilinear(np.where(mesh.valid, U, 0.0), pts[:, 0], pts[:, 1])
    out = u - W_line @ np.asarray(dUdn, dtype=float)
    if coils is not None and len(coils) and currents is not None:
        out += coil_flux(coils, currents, pts)
    return out


def field_estimate(U, dUdn, mesh: CutCellMesh, coils: CoilSet | None = None, currents=None,
                   n_jobs: int = 1, chunk: int = 2048) -> np.ndarray:
    """Interior estimate on every valid grid point, computed in blocks."""
    g = mesh.grid
    R, Z = g.mesh()
    valid = mesh.valid
    pts = np.column_stack([R[valid], Z[valid]])
    f = mesh.facets
    dUdn = np.asarray(dUdn, dtype=float)
    blocks = [(s, min(s + chunk, len(pts))) for s in range(0, len(pts), chunk)]

    def work(block):
        s, e = block
        p = pts[s:e]
        G = greens_function(f.midpoints[None, :, 0], f.midpoints[None, :, 1],
                            p[:, 0, None], p[:, 1, None])
        W = G / f.midpoints[None, :, 0] * f.areas[None, :]
        dist = np.hypot(f.midpoints[None, :, 0] - p[:, 0, None],
                        f.midpoints[None, :, 1] - p[:, 1, None])
        near = dist < 4.0 * f.areas[None, :]
        t = 0.5 * (_GL_NODES + 1.0)
        for a, k in zip(*np.nonzero(near)):
            W[a, k] = _near_weight(p[a], f.endpoints[k, 0], f.endpoints[k, 1], f.areas[k], t)
        return -(W @ dUdn)

    if n_jobs > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            parts = list(ex.map(work, blocks))
    else:
        parts = [work(b) for b in blocks]
    line = np.concatenate(parts) if parts else np.zeros(0)
    out = np.zeros(g.shape)
    out[valid] = np.asarray(U)[valid] + line
    if coils is not None and len(coils) and currents is not None:
        out[valid] += coil_flux(coils, currents, pts)
    return out
