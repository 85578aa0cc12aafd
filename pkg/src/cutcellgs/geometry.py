"""Level set and cut-cell geometry for a polygonal wall on a Cartesian grid.

The wall is a simple polygon. Its signed distance is sampled at control-volume
corners; every per-cell quantity (classification, edge apertures, the
piecewise-linear boundary facet, covered-polygon centroid and volume fraction)
is derived from those corner samples alone, so shared edges always agree
between neighbouring cells.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import shapely

from .grid import CartesianGrid

logger = logging.getLogger(__name__)

EXTERIOR = 0
INTERIOR = 1
CUT = 2
DIRICHLET = 3

PRUNE_FRACTION = 1e-6


class GeometryError(ValueError):
    """Invalid wall polygon or polygon/grid combination."""


# ---------------------------------------------------------------------------
# polygon
# ---------------------------------------------------------------------------


def _segments_intersect(p1, p2, q1, q2):
    """Proper or touching intersection test for segment arrays (broadcasting)."""

    def orient(a, b, c):
        return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (
            b[..., 1] - a[..., 1]
        ) * (c[..., 0] - a[..., 0])

    d1 = orient(q1, q2, p1)
    d2 = orient(q1, q2, p2)
    d3 = orient(p1, p2, q1)
    d4 = orient(p1, p2, q2)
    return (d1 * d2 <= 0) & (d3 * d4 <= 0)


def shoelace_area(vertices) -> float:
    """Signed area of a polygon (positive when counter-clockwise)."""
    v = np.asarray(vertices, dtype=float)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


@dataclass(frozen=True)
class BoundaryPolygon:
    """Closed, simple, counter-clockwise wall polygon in the (R, Z) plane.

    ``vertices`` holds the distinct vertices; ``closed`` appends the first one
    again. Clockwise input is reversed, a repeated closing vertex is dropped.
    """

    vertices: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2:
            raise GeometryError("polygon vertices must be an (n, 2) array")
        if len(v) > 1 and np.allclose(v[0], v[-1]):
            v = v[:-1]
        keep = np.ones(len(v), dtype=bool)
        keep[1:] = np.any(np.diff(v, axis=0) != 0.0, axis=1)
        v = v[keep]
        if len(v) < 3:
            raise GeometryError("polygon needs at least 3 distinct vertices")
        area = shoelace_area(v)
        if abs(area) <= 1e-14 * np.ptp(v, axis=0).prod():
            raise GeometryError("polygon has zero area")
        if area < 0:
            v = v[::-1].copy()
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        self._check_simple()

    def _check_simple(self):
        n = len(self.vertices)
        if n == 3 or shapely.LinearRing(self.vertices).is_simple:
            return
        a = self.vertices
        b = np.roll(a, -1, axis=0)
        idx_i, idx_j = np.triu_indices(n, k=2)
        # adjacent through the closing edge
        mask = ~((idx_i == 0) & (idx_j == n - 1))
        idx_i, idx_j = idx_i[mask], idx_j[mask]
        hit = _segments_intersect(a[idx_i], b[idx_i], a[idx_j], b[idx_j])
        if np.any(hit):
            k = int(np.argmax(hit))
            raise GeometryError(
                f"polygon is self-intersecting: edge {idx_i[k]} crosses edge {idx_j[k]}"
            )
        raise GeometryError("polygon is not simple")

    @property
    def closed(self) -> np.ndarray:
        return np.vstack([self.vertices, self.vertices[:1]])

    @property
    def area(self) -> float:
        return shoelace_area(self.vertices)

    @property
    def segments(self) -> tuple[np.ndarray, np.ndarray]:
        c = self.closed
        return c[:-1], c[1:]

    @property
    def vertex_mean(self) -> np.ndarray:
        """Mean of the closed vertex list (first vertex counted twice)."""
        return self.closed.mean(axis=0)

    @classmethod
    def from_file(cls, path) -> "BoundaryPolygon":
        return cls(read_points(path))

    def to_file(self, path, header: str | None = None):
        write_points(path, self.vertices, header=header)

    def resample(self, m: int) -> np.ndarray:
        """``m`` points evenly spaced in arc length around the closed polygon."""
        c = self.closed
        seg = np.hypot(*np.diff(c, axis=0).T)
        s = np.concatenate([[0.0], np.cumsum(seg)])
        t = np.linspace(0.0, s[-1], m, endpoint=False)
        return np.column_stack([np.interp(t, s, c[:, 0]), np.interp(t, s, c[:, 1])])


def read_points(path) -> np.ndarray:
    """Read ``R Z`` rows from a text file; ``#`` starts a comment."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    rows = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 2:
            raise GeometryError(f"{path}:{lineno}: expected 'R Z', got {line!r}")
        try:
            rows.append((float(parts[0]), float(parts[1])))
        except ValueError as exc:
            raise GeometryError(f"{path}:{lineno}: malformed number in {line!r}") from exc
    return np.array(rows, dtype=float).reshape(-1, 2)


def write_points(path, points, header: str | None = None):
    lines = []
    if header:
        lines.extend(f"# {h}" for h in header.splitlines())
    lines.extend(f"{r:.17g} {z:.17g}" for r, z in np.asarray(points))
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# signed distance
# ---------------------------------------------------------------------------


def _segment_distance(points, a, b):
    """Distance from each point to the nearest segment; shapes (m,2),(s,2),(s,2)."""
    ab = b - a
    ab2 = np.einsum("ij,ij->i", ab, ab)
    out = np.empty(len(points))
    chunk = max(1, 4_000_000 // max(len(a), 1))
    for start in range(0, len(points), chunk):
        p = points[start:start + chunk, None, :]
        ap = p - a[None]
        t = np.clip(np.einsum("mij,ij->mi", ap, ab) / ab2, 0.0, 1.0)
        d = ap - t[..., None] * ab[None]
        out[start:start + chunk] = np.sqrt(np.min(np.einsum("mij,mij->mi", d, d), axis=1))
    return out


def winding_number(polygon: BoundaryPolygon, points) -> np.ndarray:
    """Integer winding number of ``polygon`` around each point."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    a, b = polygon.segments
    wn = np.zeros(len(pts), dtype=int)
    chunk = max(1, 4_000_000 // len(a))
    for start in range(0, len(pts), chunk):
        p = pts[start:start + chunk, None, :]
        cross = (b[None, :, 0] - a[None, :, 0]) * (p[..., 1] - a[None, :, 1]) - (
            p[..., 0] - a[None, :, 0]
        ) * (b[None, :, 1] - a[None, :, 1])
        up = (a[None, :, 1] <= p[..., 1]) & (b[None, :, 1] > p[..., 1]) & (cross > 0)
        down = (a[None, :, 1] > p[..., 1]) & (b[None, :, 1] <= p[..., 1]) & (cross < 0)
        wn[start:start + chunk] = up.sum(axis=1) - down.sum(axis=1)
    return wn


def angle_inside(polygon: BoundaryPolygon, points) -> np.ndarray:
    """Inside test by angular interval around the vertex mean.

    Valid for polygons that are star-shaped with respect to the vertex mean;
    kept as a cross-check of :func:`winding_number`.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    c = polygon.closed
    center = polygon.vertex_mean
    ref = np.arctan2(*(c[0] - center)[::-1])

    def rel_angle(p):
        ang = np.arctan2(p[..., 1] - center[1], p[..., 0] - center[0]) - ref
        return np.mod(ang, 2 * np.pi)

    theta_v = rel_angle(c[:-1])
    order = np.argsort(theta_v)
    theta_sorted = theta_v[order]
    theta_p = rel_angle(pts)
    k = np.searchsorted(theta_sorted, theta_p, side="right") - 1
    i0 = order[k % len(order)]
    p0 = c[i0]
    p1 = c[i0 + 1]
    # intersect the ray center->P with the line p0->p1
    d = pts - center
    e = p1 - p0
    denom = d[:, 0] * e[:, 1] - d[:, 1] * e[:, 0]
    w = p0 - center
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (w[:, 0] * e[:, 1] - w[:, 1] * e[:, 0]) / denom
    return np.where(np.isfinite(t), t >= 1.0, True)


def signed_distance(polygon: BoundaryPolygon, points) -> np.ndarray:
    """Signed distance to the polygon: negative inside, positive outside.

    Magnitude is the distance to the nearest polygon segment. Points strictly
    inside get a negative sign; points on the boundary get 0.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    ring = shapely.LinearRing(polygon.vertices)
    d = shapely.distance(shapely.points(pts), ring)
    inside = shapely.contains_xy(shapely.Polygon(polygon.vertices), pts[:, 0], pts[:, 1])
    return np.where(inside, -d, d)


def signed_distance_reference(polygon: BoundaryPolygon, points) -> np.ndarray:
    """Pure-numpy signed distance (nearest segment, winding-number sign)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    a, b = polygon.segments
    d = _segment_distance(pts, a, b)
    inside = winding_number(polygon, pts) != 0
    return np.where(inside, -d, d)


@dataclass(frozen=True)
class LevelSet:
    """Signed distance sampled at the control-volume corners of ``grid``."""

    grid: CartesianGrid
    corner_values: np.ndarray

    @property
    def inside(self) -> np.ndarray:
        # zero counts as inside
        return self.corner_values <= 0.0


def build_level_set(grid: CartesianGrid, polygon: BoundaryPolygon) -> LevelSet:
    """Sample the signed distance of ``polygon`` at all corners of ``grid``.

    The polygon must keep at least one cell of clearance from the outer
    ring of grid points.
    """
    v = polygon.vertices
    lo_r, hi_r = grid.r_min + grid.dr, grid.r_max - grid.dr
    lo_z, hi_z = grid.z_min + grid.dz, grid.z_max - grid.dz
    bad = (v[:, 0] < lo_r) | (v[:, 0] > hi_r) | (v[:, 1] < lo_z) | (v[:, 1] > hi_z)
    if np.any(bad):
        k = int(np.argmax(bad))
        raise GeometryError(
            f"polygon vertex {k} at ({v[k, 0]:.6g}, {v[k, 1]:.6g}) lies outside the "
            f"usable grid region [{lo_r:.6g}, {hi_r:.6g}] x [{lo_z:.6g}, {hi_z:.6g}]"
        )
    rc, zc = np.meshgrid(grid.r_corners, grid.z_corners, indexing="ij")
    phi = signed_distance(polygon, np.column_stack([rc.ravel(), zc.ravel()]))
    phi = phi.reshape(rc.shape)
    phi.setflags(write=False)
    return LevelSet(grid, phi)


# ---------------------------------------------------------------------------
# per-cell geometry
# ---------------------------------------------------------------------------


def edge_aperture(phi_a, phi_b):
    """Covered fraction of an edge from the level set at its two endpoints.

    Both endpoints inside (``<= 0``) gives 1, none inside gives 0, otherwise
    the fraction on the negative side of the linear root.
    """
    phi_a = np.asarray(phi_a, dtype=float)
    phi_b = np.asarray(phi_b, dtype=float)
    ina = phi_a <= 0.0
    inb = phi_b <= 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        frac_a = phi_a / (phi_a - phi_b)  # length fraction from a to the root
    out = np.where(ina & inb, 1.0, 0.0)
    out = np.where(ina & ~inb, frac_a, out)
    out = np.where(~ina & inb, 1.0 - frac_a, out)
    out = np.clip(out, 0.0, 1.0)
    return out if out.ndim else float(out)


def interface_geometry(a_east, a_west, a_north, a_south, dr, dz):
    """Facet area and inward unit normal of a cut cell from its apertures.

    The R component pairs with the vertical edge length ``dz`` and the Z
    component with ``dr``; for ``dr == dz`` this is the usual aperture
    identity. Returns ``(area, normal_in)``; zero area gives a zero normal.
    """
    vec = np.array([dz * (a_east - a_west), dr * (a_north - a_south)], dtype=float)
    area = float(np.hypot(*vec))
    if area == 0.0:
        return 0.0, np.zeros(2)
    return area, vec / area


def polygon_centroid(vertices) -> np.ndarray:
    """Centroid of a counter-clockwise polygon."""
    v = np.asarray(vertices, dtype=float)
    x, y = v[:, 0], v[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    s = cross.sum()
    if s == 0.0:
        raise GeometryError("centroid of a zero-area polygon")
    return np.array([np.sum((x + xn) * cross), np.sum((y + yn) * cross)]) / (3.0 * s)


def _cell_corners(grid: CartesianGrid, i: int, j: int):
    r0, r1 = grid.r_corners[i], grid.r_corners[i + 1]
    z0, z1 = grid.z_corners[j], grid.z_corners[j + 1]
    pos = np.array([[r0, z0], [r1, z0], [r1, z1], [r0, z1]])
    return pos


def cut_polygon(level_set: LevelSet, i: int, j: int):
    """Covered region of cell ``(i, j)`` under the piecewise-linear boundary.

    Returns ``(pieces, facets)``: a list of counter-clockwise polygons (one,
    or two for a disconnected saddle cell) and the list of boundary segments
    ``(p, q)`` crossing the cell.
    """
    grid = level_set.grid
    phi = level_set.corner_values
    vals = np.array([phi[i, j], phi[i + 1, j], phi[i + 1, j + 1], phi[i, j + 1]])
    pos = _cell_corners(grid, i, j)
    inside = vals <= 0.0
    if inside.all():
        return [pos], []
    if not inside.any():
        return [], []

    crossing = {}
    for k in range(4):
        k1 = (k + 1) % 4
        if inside[k] != inside[k1]:
            t = vals[k] / (vals[k] - vals[k1])
            crossing[k] = pos[k] + t * (pos[k1] - pos[k])

    saddle = inside[0] == inside[2] and inside[1] == inside[3]
    if saddle and vals.mean() > 0.0:
        # disconnected: one triangle per inside corner
        pieces, facets = [], []
        for k in range(4):
            if inside[k]:
                prev = (k - 1) % 4
                pieces.append(np.array([pos[k], crossing[k], crossing[prev]]))
                facets.append((crossing[k], crossing[prev]))
        return pieces, facets

    verts = []
    for k in range(4):
        if inside[k]:
            verts.append(pos[k])
        if k in crossing:
            verts.append(crossing[k])
    # the boundary runs from an exit crossing (inside -> outside) to the next entry
    facets = []
    for k in range(4):
        if k in crossing and inside[k]:
            m = (k + 1) % 4
            while m not in crossing:
                m = (m + 1) % 4
            facets.append((crossing[k], crossing[m]))
    return [np.array(verts)], facets


# ---------------------------------------------------------------------------
# mesh
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Facets:
    """Boundary facets: one per boundary cell (cut mesh) or frame node (rectangle).

    ``bindex`` maps each facet to the boundary evaluation point that carries
    its Dirichlet value.
    """

    cells: np.ndarray  # (n, 2) int
    midpoints: np.ndarray  # (n, 2)
    normals_in: np.ndarray  # (n, 2)
    areas: np.ndarray  # (n,)
    endpoints: np.ndarray  # (n, 2, 2)
    bindex: np.ndarray  # (n,) int

    def __len__(self):
        return len(self.areas)


@dataclass(frozen=True)
class CutCellMesh:
    """Cell classification and cut-cell geometry on a Cartesian grid.

    Array shapes: ``kind``, ``volume_fraction``, ``centroids[..., k]`` are
    ``(nr, nz)``; ``ap_r`` holds vertical-edge apertures ``(nr + 1, nz)`` and
    ``ap_z`` horizontal-edge apertures ``(nr, nz + 1)``. Cell ``(i, j)`` has
    west/east edges ``ap_r[i, j]``/``ap_r[i + 1, j]`` and south/north edges
    ``ap_z[i, j]``/``ap_z[i, j + 1]``.
    """

    grid: CartesianGrid
    kind: np.ndarray
    volume_fraction: np.ndarray
    ap_r: np.ndarray
    ap_z: np.ndarray
    centroids: np.ndarray
    facets: Facets
    boundary_points: np.ndarray
    level_set: LevelSet | None = None
    polygon: BoundaryPolygon | None = None
    n_pruned: int = 0
    cut_pieces: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def active(self) -> np.ndarray:
        """Unknowns of the discrete problem (interior and cut cells)."""
        return (self.kind == INTERIOR) | (self.kind == CUT)

    @property
    def valid(self) -> np.ndarray:
        """Points holding meaningful flux values (active plus Dirichlet nodes)."""
        return self.kind != EXTERIOR

    @property
    def is_rectangular(self) -> bool:
        return self.polygon is None

    def summary(self) -> dict:
        k = self.kind
        return {
            "grid": f"{self.grid.nr}x{self.grid.nz}",
            "interior": int(np.sum(k == INTERIOR)),
            "cut": int(np.sum(k == CUT)),
            "exterior": int(np.sum(k == EXTERIOR)),
            "dirichlet": int(np.sum(k == DIRICHLET)),
            "active": int(np.sum(self.active)),
            "pruned": int(self.n_pruned),
            "boundary_points": int(len(self.boundary_points)),
        }

    def inside(self, r, z) -> np.ndarray:
        """Whether points lie in the computational domain."""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        z = np.atleast_1d(np.asarray(z, dtype=float))
        if self.polygon is None:
            g = self.grid
            return (r > g.r_min) & (r < g.r_max) & (z > g.z_min) & (z < g.z_max)
        return winding_number(self.polygon, np.column_stack([r, z])) != 0

    def cell_of(self, r, z):
        g = self.grid
        i = np.clip(np.rint((np.asarray(r) - g.r_min) / g.dr).astype(int), 0, g.nr - 1)
        j = np.clip(np.rint((np.asarray(z) - g.z_min) / g.dz).astype(int), 0, g.nz - 1)
        return i, j


def build_cut_cell_mesh(grid: CartesianGrid, polygon: BoundaryPolygon) -> CutCellMesh:
    """Classify cells and compute every cut-cell quantity for ``polygon``."""
    ls = build_level_set(grid, polygon)
    phi = ls.corner_values
    inside = ls.inside
    nr, nz = grid.shape
    dr, dz = grid.dr, grid.dz

    ap_r = edge_aperture(phi[:, :-1], phi[:, 1:])  # (nr+1, nz)
    ap_z = edge_aperture(phi[:-1, :], phi[1:, :])  # (nr, nz+1)

    n_in = (
        inside[:-1, :-1].astype(int) + inside[1:, :-1] + inside[1:, 1:] + inside[:-1, 1:]
    )
    kind = np.full(grid.shape, EXTERIOR, dtype=np.int8)
    kind[n_in == 4] = INTERIOR
    kind[(n_in > 0) & (n_in < 4)] = CUT

    frac = np.where(kind == INTERIOR, 1.0, 0.0)
    R, Z = grid.mesh()
    centroids = np.stack([R, Z], axis=-1).astype(float)
    pieces_by_cell = {}
    segs_by_cell = {}
    for i, j in zip(*np.nonzero(kind == CUT)):
        pieces, segs = cut_polygon(ls, i, j)
        area = sum(shoelace_area(p) for p in pieces)
        frac[i, j] = area / (dr * dz)
        if frac[i, j] >= PRUNE_FRACTION:
            cx = sum(shoelace_area(p) * polygon_centroid(p) for p in pieces) / area
            centroids[i, j] = cx
        pieces_by_cell[(i, j)] = pieces
        segs_by_cell[(i, j)] = segs

    pruned = (kind == CUT) & (frac < PRUNE_FRACTION)
    n_pruned = int(pruned.sum())
    kind[pruned] = EXTERIOR
    frac[pruned] = 0.0
    for i, j in zip(*np.nonzero(pruned)):
        pieces_by_cell.pop((i, j), None)
        segs_by_cell.pop((i, j), None)
    if n_pruned:
        logger.debug("pruned %d cut cells with volume fraction < %g", n_pruned, PRUNE_FRACTION)

    # edges adjacent to an inactive cell carry no flux
    act = kind != EXTERIOR
    pad = np.zeros((nr + 2, nz), dtype=bool)
    pad[1:-1] = act
    ap_r = np.where(pad[:-1] & pad[1:], ap_r, 0.0)
    pad = np.zeros((nr, nz + 2), dtype=bool)
    pad[:, 1:-1] = act
    ap_z = np.where(pad[:, :-1] & pad[:, 1:], ap_z, 0.0)

    # cells whose aperture balance is nonzero have a facet
    vec_r = dz * (ap_r[1:, :] - ap_r[:-1, :])
    vec_z = dr * (ap_z[:, 1:] - ap_z[:, :-1])
    facet_area = np.hypot(vec_r, vec_z)
    gained = (kind == INTERIOR) & (facet_area > 1e-12 * min(dr, dz))
    kind[gained] = CUT

    cells, mids, normals, areas, ends = [], [], [], [], []
    tiny = 1e-12 * min(dr, dz)
    for i, j in zip(*np.nonzero(kind == CUT)):
        area = facet_area[i, j]
        segs = segs_by_cell.get((i, j), [])
        if segs:
            mid = np.mean([0.5 * (p + q) for p, q in segs], axis=0)
        else:
            mid = _zeroed_edge_midpoint(grid, ap_r, ap_z, i, j, phi)
        if area <= tiny:
            if len(segs) == 2:
                # symmetric saddle: the two facets cancel in the aperture balance
                normal = np.zeros(2)
            else:
                raise GeometryError(f"cut cell ({i}, {j}) has a degenerate facet")
        else:
            normal = np.array([vec_r[i, j], vec_z[i, j]]) / area
        tangent = np.array([-normal[1], normal[0]])
        cells.append((i, j))
        mids.append(mid)
        normals.append(normal)
        areas.append(area)
        ends.append([mid - 0.5 * area * tangent, mid + 0.5 * area * tangent])

    n = len(cells)
    facets = Facets(
        cells=np.array(cells, dtype=int).reshape(n, 2),
        midpoints=np.array(mids, dtype=float).reshape(n, 2),
        normals_in=np.array(normals, dtype=float).reshape(n, 2),
        areas=np.array(areas, dtype=float),
        endpoints=np.array(ends, dtype=float).reshape(n, 2, 2),
        bindex=np.arange(n),
    )
    for arr in (kind, frac, ap_r, ap_z, centroids):
        arr.setflags(write=False)
    return CutCellMesh(
        grid=grid,
        kind=kind,
        volume_fraction=frac,
        ap_r=ap_r,
        ap_z=ap_z,
        centroids=centroids,
        facets=facets,
        boundary_points=facets.midpoints,
        level_set=ls,
        polygon=polygon,
        n_pruned=n_pruned,
        cut_pieces=pieces_by_cell,
    )


def _zeroed_edge_midpoint(grid, ap_r, ap_z, i, j, phi):
    """Midpoint of the edges a cell lost to a pruned neighbour."""
    pts = []
    rc, zc = grid.r_corners, grid.z_corners
    if ap_r[i, j] == 0.0 and (phi[i, j] <= 0 or phi[i, j + 1] <= 0):
        pts.append((rc[i], grid.z[j]))
    if ap_r[i + 1, j] == 0.0 and (phi[i + 1, j] <= 0 or phi[i + 1, j + 1] <= 0):
        pts.append((rc[i + 1], grid.z[j]))
    if ap_z[i, j] == 0.0 and (phi[i, j] <= 0 or phi[i + 1, j] <= 0):
        pts.append((grid.r[i], zc[j]))
    if ap_z[i, j + 1] == 0.0 and (phi[i, j + 1] <= 0 or phi[i + 1, j + 1] <= 0):
        pts.append((grid.r[i], zc[j + 1]))
    if not pts:
        return np.array([grid.r[i], grid.z[j]])
    return np.mean(np.array(pts), axis=0)


def rectangular_mesh(grid: CartesianGrid) -> CutCellMesh:
    """Whole-grid domain: interior points are unknowns, the outer ring is Dirichlet.

    Facets sit on the non-corner ring points with axis-aligned inward normals;
    corner points carry Dirichlet values but no facet (the normal derivative
    of a field vanishing on both walls is zero there).
    """
    nr, nz = grid.shape
    kind = np.full(grid.shape, INTERIOR, dtype=np.int8)
    kind[0, :] = kind[-1, :] = kind[:, 0] = kind[:, -1] = DIRICHLET
    frac = np.ones(grid.shape)
    ap_r = np.ones((nr + 1, nz))
    ap_z = np.ones((nr, nz + 1))
    R, Z = grid.mesh()
    centroids = np.stack([R, Z], axis=-1)

    # boundary points: counter-clockwise around the frame starting at (0, 0)
    ring = (
        [(i, 0) for i in range(nr)]
        + [(nr - 1, j) for j in range(1, nz)]
        + [(i, nz - 1) for i in range(nr - 2, -1, -1)]
        + [(0, j) for j in range(nz - 2, 0, -1)]
    )
    ring = np.array(ring, dtype=int)
    bpoints = np.column_stack([grid.r[ring[:, 0]], grid.z[ring[:, 1]]])
    pos = {tuple(c): k for k, c in enumerate(ring)}

    cells, normals, lengths = [], [], []
    for i in range(1, nr - 1):
        cells.append((i, 0)); normals.append((0.0, 1.0)); lengths.append(grid.dr)
        cells.append((i, nz - 1)); normals.append((0.0, -1.0)); lengths.append(grid.dr)
    for j in range(1, nz - 1):
        cells.append((0, j)); normals.append((1.0, 0.0)); lengths.append(grid.dz)
        cells.append((nr - 1, j)); normals.append((-1.0, 0.0)); lengths.append(grid.dz)
    cells = np.array(cells, dtype=int)
    normals = np.array(normals)
    lengths = np.array(lengths)
    mids = np.column_stack([grid.r[cells[:, 0]], grid.z[cells[:, 1]]])
    tangent = np.column_stack([-normals[:, 1], normals[:, 0]])
    ends = np.stack(
        [mids - 0.5 * lengths[:, None] * tangent, mids + 0.5 * lengths[:, None] * tangent],
        axis=1,
    )
    facets = Facets(
        cells=cells,
        midpoints=mids,
        normals_in=normals,
        areas=lengths,
        endpoints=ends,
        bindex=np.array([pos[tuple(c)] for c in cells], dtype=int),
    )
    for arr in (kind, frac, ap_r, ap_z, centroids):
        arr.setflags(write=False)
    return CutCellMesh(
        grid=grid,
        kind=kind,
        volume_fraction=frac,
        ap_r=ap_r,
        ap_z=ap_z,
        centroids=centroids,
        facets=facets,
        boundary_points=bpoints,
    )
