import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cutcellgs.geometry import (CUT, DIRICHLET, EXTERIOR, INTERIOR, BoundaryPolygon,
                                GeometryError, build_cut_cell_mesh, build_level_set,
                                cut_polygon, edge_aperture, interface_geometry,
                                polygon_centroid, rectangular_mesh, shoelace_area,
                                signed_distance, signed_distance_reference, winding_number)
from cutcellgs.grid import CartesianGrid

finite = st.floats(-10, 10, allow_nan=False)


def ellipse(n=64, r0=2.0, a=0.6, b=0.9):
    t = np.linspace(0, 2 * np.pi, n, endpoint=False)
    return BoundaryPolygon(np.column_stack([r0 + a * np.cos(t), b * np.sin(t)]))


def test_edge_aperture_examples():
    assert edge_aperture(-1.0, -1.0) == 1.0
    assert edge_aperture(1.0, 1.0) == 0.0
    assert edge_aperture(1.0, -1.0) == pytest.approx(0.5)
    assert edge_aperture(-1.0, 3.0) == pytest.approx(0.25)


@given(finite, finite)
def test_aperture_in_unit_interval_and_symmetric(a, b):
    v = edge_aperture(a, b)
    assert 0.0 <= v <= 1.0
    assert edge_aperture(b, a) == pytest.approx(v, abs=1e-12)


@given(st.floats(-5, 5), st.floats(0.01, 5), st.floats(0.0, 1.0))
def test_aperture_monotone_in_endpoint(a, b, s):
    # lowering one endpoint value can only increase the covered part
    assert edge_aperture(a - s, b) >= edge_aperture(a, b) - 1e-12


def test_interface_geometry_example():
    area, n = interface_geometry(1.0, 1.0, 0.0, 1.0, 0.1, 0.1)
    assert area == pytest.approx(0.1)
    np.testing.assert_allclose(n, [0.0, -1.0])
    area, n = interface_geometry(1.0, 1.0, 1.0, 1.0, 0.1, 0.1)
    assert area == 0.0 and not n.any()


def test_polygon_centroid_triangle():
    np.testing.assert_allclose(polygon_centroid([[0, 0], [1, 0], [0, 1]]), [1 / 3, 1 / 3])
    with pytest.raises(GeometryError):
        polygon_centroid([[0, 0], [1, 0], [2, 0]])


def test_shoelace_and_orientation():
    sq = [[0, 0], [0, 1], [1, 1], [1, 0]]  # clockwise input
    poly = BoundaryPolygon(sq)
    assert poly.area == pytest.approx(1.0)
    assert shoelace_area(poly.vertices) > 0


def test_self_intersecting_polygon_rejected():
    with pytest.raises(GeometryError):
        BoundaryPolygon([[0, 0], [1, 1], [1, 0], [0, 1]])


def test_signed_distance_matches_reference(rng):
    poly = ellipse()
    pts = np.column_stack([rng.uniform(1.0, 3.0, 500), rng.uniform(-1.5, 1.5, 500)])
    np.testing.assert_allclose(signed_distance(poly, pts), signed_distance_reference(poly, pts),
                               atol=1e-12)
    inside = winding_number(poly, pts) != 0
    assert np.all(signed_distance(poly, pts)[inside] <= 0)


def test_level_set_clearance_error():
    grid = CartesianGrid(1.5, 2.5, -1.0, 1.0, 11, 21)
    with pytest.raises(GeometryError, match="vertex"):
        build_level_set(grid, ellipse())


def test_cut_polygon_full_and_empty():
    grid = CartesianGrid(1.0, 3.0, -1.5, 1.5, 21, 31)
    ls = build_level_set(grid, ellipse())
    pieces, facets = cut_polygon(ls, 10, 15)
    assert len(pieces) == 1 and not facets
    assert cut_polygon(ls, 0, 0) == ([], [])


@pytest.fixture(scope="module")
def mesh():
    return build_cut_cell_mesh(CartesianGrid(1.0, 3.0, -1.5, 1.5, 41, 61), ellipse(200))


def test_classification_partition(mesh):
    k = mesh.kind
    assert set(np.unique(k)) <= {EXTERIOR, INTERIOR, CUT, DIRICHLET}
    s = mesh.summary()
    assert s["interior"] + s["cut"] + s["exterior"] + s["dirichlet"] == mesh.grid.size
    assert np.all(mesh.volume_fraction[k == INTERIOR] == 1.0)
    assert np.all(mesh.volume_fraction[k == EXTERIOR] == 0.0)
    f = mesh.volume_fraction[k == CUT]
    assert np.all((f > 0) & (f <= 1))


def test_volume_fraction_matches_shoelace(mesh):
    g = mesh.grid
    total = mesh.volume_fraction.sum() * g.dr * g.dz
    # the discrete wall is the piecewise-linear zero set of the level set
    assert total == pytest.approx(mesh.polygon.area, rel=2e-3)
    for (i, j), pieces in list(mesh.cut_pieces.items())[:50]:
        area = sum(shoelace_area(p) for p in pieces)
        assert mesh.volume_fraction[i, j] * g.dr * g.dz == pytest.approx(area, rel=1e-10)


def test_facet_area_identity(mesh):
    g = mesh.grid
    f = mesh.facets
    cells, counts = np.unique(f.cells, axis=0, return_counts=True)
    single = {tuple(c) for c, n in zip(cells, counts) if n == 1}
    checked = 0
    for k in range(len(f)):
        i, j = f.cells[k]
        if (i, j) not in single:
            continue
        area, n = interface_geometry(mesh.ap_r[i + 1, j], mesh.ap_r[i, j], mesh.ap_z[i, j + 1],
                                     mesh.ap_z[i, j], g.dr, g.dz)
        assert f.areas[k] == pytest.approx(area, rel=1e-9, abs=1e-14)
        checked += 1
    assert checked > 0


def test_rectangular_mesh():
    m = rectangular_mesh(CartesianGrid(1.0, 2.0, -1.0, 1.0, 11, 21))
    assert m.is_rectangular
    assert m.summary()["cut"] == 0
    assert m.summary()["dirichlet"] == 2 * (11 + 21) - 4


@settings(max_examples=15, deadline=None)
@given(st.floats(0.3, 0.7), st.floats(0.4, 1.0), st.floats(1.8, 2.2))
def test_random_ellipse_partition(a, b, r0):
    m = build_cut_cell_mesh(CartesianGrid(1.0, 3.0, -1.5, 1.5, 21, 31),
                            ellipse(48, r0, a, b))
    assert m.volume_fraction.sum() * m.grid.dr * m.grid.dz == pytest.approx(m.polygon.area,
                                                                          rel=0.05)
    assert np.all(m.active == ((m.kind == INTERIOR) | (m.kind == CUT)))
