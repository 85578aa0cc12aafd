import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cutcellgs.elliptic import EllipticOperator
from cutcellgs.elliptic import full_cell_row
from cutcellgs.geometry import rectangular_mesh
from cutcellgs.green import (BoundaryWeights, Coil, CoilSet, coil_flux, elliptic_KE,
                             elliptic_KE_agm, greens_function, hagenow_boundary,
                             interior_estimate, iter_like_coils, normal_derivative,
                             solve_homogeneous_U, volume_integral_boundary)
from cutcellgs.grid import CartesianGrid
from cutcellgs.physics import MU0


def test_elliptic_k0():
    K, E = elliptic_KE(0.0)
    assert K == pytest.approx(math.pi / 2, abs=1e-15)
    assert E == pytest.approx(math.pi / 2, abs=1e-15)


@pytest.mark.parametrize("k", [0.1, 0.5, 0.9, 0.999])
def test_elliptic_matches_agm(k):
    np.testing.assert_allclose(elliptic_KE(k), elliptic_KE_agm(k), rtol=1e-12)


def test_elliptic_near_one():
    k = 1 - 1e-8
    K, E = elliptic_KE(k)
    kp = math.sqrt((1 - k) * (1 + k))
    assert math.isfinite(K) and E == pytest.approx(1.0, abs=1e-6)
    assert K == pytest.approx(math.log(4 / kp), rel=1e-6)


def test_elliptic_domain():
    with pytest.raises(ValueError):
        elliptic_KE(1.0)
    with pytest.raises(ValueError):
        elliptic_KE_agm(-0.1)


@given(st.floats(1e-3, 0.999))
def test_legendre_relation(k):
    kp = math.sqrt(1 - k * k)
    K, E = elliptic_KE(k)
    Kp, Ep = elliptic_KE(kp)
    assert E * Kp + Ep * K - K * Kp == pytest.approx(math.pi / 2, abs=1e-10)


def test_green_symmetry_example():
    assert greens_function(1.0, 0.2, 2.0, -0.3) == greens_function(2.0, -0.3, 1.0, 0.2)


@given(st.floats(0.5, 10), st.floats(-5, 5), st.floats(0.5, 10), st.floats(-5, 5))
def test_green_symmetry(r, z, rp, zp):
    if abs(r - rp) + abs(z - zp) < 1e-6:
        return
    a = greens_function(r, z, rp, zp)
    b = greens_function(rp, zp, r, z)
    assert a == pytest.approx(b, rel=1e-13)
    assert a > 0


def test_green_far_field_and_small_k_branch():
    far = greens_function(2.0, 0.0, 2.0, np.array([10.0, 100.0, 1000.0]))
    assert np.all(np.diff(far) < 0) and far[-1] < 1e-6
    # the hypergeometric branch joins the elliptic-integral formula continuously
    z = np.linspace(5.0, 12.0, 400)
    g = greens_function(1.0, 0.0, 1.5, z)
    assert np.all(np.isfinite(g)) and np.max(np.abs(np.diff(np.log(g)))) < 0.05


def test_green_annihilated_by_discrete_operator():
    res = []
    for n in (41, 81):
        g = CartesianGrid(3.0, 4.0, 1.0, 2.0, n, n)
        i = j = n // 2
        row = full_cell_row(i, j, g)
        val = sum(c * greens_function(g.r[i + di], g.z[j + dj], 1.0, 0.0)
                  for (di, dj), c in row.items())
        res.append(abs(val))
    assert res[1] < res[0] / 3


def test_coil_flux_linearity():
    coils = CoilSet([Coil("A", "point", 3.0, z=1.0, turns=10.0)])
    pts = np.array([[5.0, 0.0], [6.0, 1.0]])
    assert np.all(coil_flux(coils, [0.0], pts) == 0)
    one = coil_flux(coils, [1.0], pts)
    np.testing.assert_array_equal(coil_flux(coils, [2.0], pts), 2.0 * one)
    np.testing.assert_allclose(one, -MU0 * 10.0 * greens_function(3.0, 1.0, pts[:, 0],
                                                                   pts[:, 1]))


def test_solenoid_subdivision_converges():
    cs3 = Coil("CS3", "solenoid", 1.696, z_min=-1.7983, z_max=1.8183, turns=1106)
    p = np.array([[6.2, 0.0], [4.0, 0.0]])
    a, b, c = (CoilSet([cs3], n_sub=n).response(p)[:, 0] for n in (20, 40, 80))
    assert abs(a[0] - b[0]) / abs(b[0]) < 1e-4
    # midpoint sub-coils: second order in the sub-coil height
    np.testing.assert_allclose(np.abs(a - b) / np.abs(b - c), 4.0, rtol=0.05)


def test_iter_coils_and_file_round_trip(tmp_path):
    coils = iter_like_coils()
    assert len(coils) == 11 and coils.names[0] == "PF1"
    coils.to_file(tmp_path / "c.txt")
    again = CoilSet.from_file(tmp_path / "c.txt")
    assert again.coils == coils.coils
    (tmp_path / "bad.txt").write_text("X point 1.0\n")
    with pytest.raises(ValueError, match="bad.txt:1"):
        CoilSet.from_file(tmp_path / "bad.txt")
    with pytest.raises(ValueError):
        Coil("Y", "solenoid", 1.0, z_min=1.0, z_max=0.0)


def _patch(n):
    mesh = rectangular_mesh(CartesianGrid(4.0, 8.0, -2.0, 2.0, n, n))
    c = mesh.centroids
    rho2 = (c[..., 0] - 6.0) ** 2 + (c[..., 1] - 0.3) ** 2
    src = np.where(rho2 < 1.0, (1.0 - rho2) ** 3, 0.0) * mesh.active
    return mesh, src


def _boundary_pair(n, coils=None, currents=None):
    mesh, src = _patch(n)
    op = EllipticOperator(mesh)
    U = solve_homogeneous_U(op, src)
    dUdn = normal_derivative(U, op)
    w = BoundaryWeights.build(mesh, coils)
    h = hagenow_boundary(dUdn, currents if currents is not None else [], w)
    v = volume_integral_boundary(src, mesh, mesh.boundary_points, coils, currents)
    return mesh, U, dUdn, h, v


def test_zero_source_gives_zero():
    mesh, _ = _patch(16)
    op = EllipticOperator(mesh)
    U = solve_homogeneous_U(op, np.zeros(mesh.grid.shape))
    assert not U.any()
    assert not normal_derivative(U, op).any()
    w = BoundaryWeights.build(mesh, None)
    assert not hagenow_boundary(np.zeros(len(mesh.facets)), [], w).any()


def test_zero_source_one_coil_is_coil_flux():
    mesh, _ = _patch(16)
    coils = CoilSet([Coil("A", "point", 2.0, z=3.0, turns=100.0)])
    w = BoundaryWeights.build(mesh, coils)
    psi_b = hagenow_boundary(np.zeros(len(mesh.facets)), [1e3], w)
    np.testing.assert_allclose(psi_b, coil_flux(coils, [1e3], mesh.boundary_points),
                               rtol=1e-14)
    pts = np.array([[5.0, 0.0], [7.0, 1.0]])
    est = interior_estimate(np.zeros(mesh.grid.shape), np.zeros(len(mesh.facets)), pts, mesh,
                            coils, [1e3])
    np.testing.assert_allclose(est, coil_flux(coils, [1e3], pts), rtol=1e-14)


def test_hagenow_matches_volume_integral():
    errs = []
    for n in (32, 64):
        _, _, _, h, v = _boundary_pair(n)
        errs.append(np.max(np.abs(h - v)) / np.max(np.abs(v)))
    assert errs[1] < 2e-3
    assert math.log2(errs[0] / errs[1]) >= 1.0


def test_interior_estimate_reproduces_field():
    mesh, U, dUdn, h, v = _boundary_pair(48)
    op = EllipticOperator(mesh)
    _, src = _patch(48)
    psi = op.solve(src, v)
    pts = np.array([[5.0, -1.0], [6.0, 0.3], [7.2, 1.1]])
    est = interior_estimate(U, dUdn, pts, mesh)
    ref = mesh.grid.bilinear(psi, pts[:, 0], pts[:, 1])
    assert np.max(np.abs(est - ref)) < 0.01 * np.max(np.abs(psi))


@settings(max_examples=10, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_boundary_operators_linear(a, b):
    mesh, src = _patch(12)
    pts = mesh.boundary_points[::5]
    v1 = volume_integral_boundary(src, mesh, pts)
    v2 = volume_integral_boundary(src * mesh.grid.mesh()[0], mesh, pts)
    v = volume_integral_boundary(a * src + b * src * mesh.grid.mesh()[0], mesh, pts)
    np.testing.assert_allclose(v, a * v1 + b * v2, atol=1e-12 * (1 + np.abs(v).max()))
