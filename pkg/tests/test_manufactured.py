import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cutcellgs.geometry import _segments_intersect
from cutcellgs.manufactured import (ConvergenceRow, NonlinearCase, SolovievCase,
                                    convergence_study, error_norms, format_convergence,
                                    nonlinear_source, solve_linear_case, soloviev_boundary,
                                    soloviev_coefficients, write_convergence_csv)


def delta_star(f, r, z, h=1e-4):
    """Fourth-order finite-difference ``R d/dR (1/R df/dR) + d2f/dZ2``."""
    def d1(g, x, y):
        return (-g(x + 2 * h, y) + 8 * g(x + h, y) - 8 * g(x - h, y) + g(x - 2 * h, y)) / (12 * h)

    def d2(g, x, y, axis):
        s = (h, 0.0) if axis == 0 else (0.0, h)
        p = lambda k: g(x + k * s[0], y + k * s[1])  # noqa: E731
        return (-p(2) + 16 * p(1) - 30 * p(0) + 16 * p(-1) - p(-2)) / (12 * h * h)

    return d2(f, r, z, 0) - d1(f, r, z) / r + d2(f, r, z, 1)


def test_coefficients_solve_system():
    eps, kappa, delta = 0.32, 1.7, 0.33
    case = SolovievCase(eps, kappa, delta)
    assert abs(case.psi(1 + eps, 0.0)) < 1e-12
    assert abs(case.psi(1 - eps, 0.0)) < 1e-12
    assert abs(case.psi(1 - delta * eps, kappa * eps)) < 1e-12
    with pytest.raises(ValueError):
        soloviev_coefficients(1.2, 1.7, 0.33)


@given(st.floats(0.7, 1.3), st.floats(-0.5, 0.5))
def test_soloviev_residual(r, z):
    case = SolovievCase()
    assert delta_star(case.psi, r, z) == pytest.approx(r * r, abs=1e-6)


def test_soloviev_gradient(soloviev):
    r, z, h = 1.1, 0.2, 1e-6
    gr, gz = soloviev.grad(r, z)
    assert gr == pytest.approx((soloviev.psi(r + h, z) - soloviev.psi(r - h, z)) / (2 * h),
                               rel=1e-7)
    assert gz == pytest.approx((soloviev.psi(r, z + h) - soloviev.psi(r, z - h)) / (2 * h),
                               rel=1e-7)


def test_boundary_polygon(soloviev):
    poly = soloviev_boundary(soloviev, 64)
    v = poly.vertices
    assert np.max(np.abs(soloviev.psi(v[:, 0], v[:, 1]))) < 1e-10
    assert v[:, 0].max() == pytest.approx(1.32) and v[:, 0].min() == pytest.approx(0.68)
    on_axis = v[np.abs(v[:, 1]) < 1e-14, 0]
    np.testing.assert_allclose(sorted(on_axis), [0.68, 1.32])
    n = len(v)
    for i in range(n):
        for j in range(i + 2, n):
            if (j + 1) % n == i:
                continue
            assert not _segments_intersect(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n])
    with pytest.raises(ValueError):
        soloviev_boundary(soloviev, 8)


@given(st.floats(0.7, 1.3), st.floats(-0.5, 0.5))
def test_nonlinear_bracket_cancels(r, z):
    case = NonlinearCase()
    psi = case.psi(r, z)
    full = nonlinear_source(r, z, psi)
    linear = ((case.k_r**2 + case.k_z**2) * psi
              + case.k_r / r * math.cos(case.k_r * (r + case.r0)) * math.cos(case.k_z * z))
    assert full == linear


@given(st.floats(0.7, 1.3), st.floats(-0.5, 0.5))
def test_nonlinear_exact_solution(r, z):
    case = NonlinearCase()
    lhs = delta_star(case.psi, r, z)
    assert lhs == pytest.approx(case.source(r, z, case.psi(r, z)), abs=1e-6)


def test_nonlinear_kz_zero():
    r = np.array([0.9, 1.1])
    a = nonlinear_source(r, 0.0, 0.3, k_z=0.0)
    b = nonlinear_source(r, 0.4, 0.3, k_z=0.0)
    np.testing.assert_array_equal(a, b)


def test_error_norms_and_study(soloviev, tmp_path):
    rows = convergence_study(lambda nr, nz: solve_linear_case(soloviev, nr, nz, 400),
                             [(31, 41), (61, 81)])
    assert rows[1].l2 < rows[0].l2 and rows[1].linf < rows[0].linf
    assert 1.4 < rows[1].order_l2 < 2.7
    mesh, psi, exact = solve_linear_case(soloviev, 31, 41, 400)
    l1, l2, linf = error_norms(mesh, exact, exact)
    assert l1 == l2 == linf == 0.0
    write_convergence_csv(rows, tmp_path / "c.csv")
    text = (tmp_path / "c.csv").read_text().splitlines()
    assert text[0].startswith("#") and len(text) == 4
    assert "31x41" in format_convergence(rows)
    with pytest.raises(ValueError):
        convergence_study(lambda nr, nz: None, [(31, 41)])


def test_exact_boundary_data_option(soloviev):
    _, psi_w, exact = solve_linear_case(soloviev, 31, 41, 400, boundary_data="wall")
    mesh, psi_e, _ = solve_linear_case(soloviev, 31, 41, 400, boundary_data="exact")
    assert np.max(np.abs(psi_e - psi_w)[mesh.active]) < 1e-3
    with pytest.raises(ValueError):
        solve_linear_case(soloviev, 31, 41, 400, boundary_data="bogus")
    assert isinstance(ConvergenceRow(1, 1, 0, 0, 0).order_l2, float)
