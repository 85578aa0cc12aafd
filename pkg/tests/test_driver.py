import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cutcellgs.driver import (NonConvergence, Relaxation, SolverConfig, aitken_step,
                              inner_loop, picard_fixed_boundary, solve_fixed_boundary)
from cutcellgs.elliptic import EllipticOperator, centroid_interpolator
from cutcellgs.geometry import BoundaryPolygon, build_cut_cell_mesh
from cutcellgs.grid import CartesianGrid
from cutcellgs.manufactured import FreeBoundaryCase, NonlinearCase, SolovievCase

vec = st.lists(st.floats(-10, 10), min_size=3, max_size=3)


def test_aitken_hand_example():
    lam, alpha = aitken_step([1.0], [0.5], 0.3)
    assert lam == 0.0 and alpha == 1.0


def test_aitken_unclamped_value():
    lam, alpha = aitken_step([1.0, 0.0], [0.9, 0.1], 0.5, lambda_min=-10, lambda_max=0.99)
    diff = np.array([0.1, -0.1])
    expect = 0.5 + (0.5 - 1.0) * (diff @ np.array([0.9, 0.1])) / (diff @ diff)
    assert lam == pytest.approx(expect)
    assert alpha == pytest.approx(1 - expect)


def test_aitken_upper_clamp():
    # raw lambda above lambda_max is clamped to 0.95
    lam, alpha = aitken_step([1.0], [3.0], 0.2)  # raw = 0.2 + (-0.8)(-2*3)/4 = 1.4
    assert lam == 0.95 and alpha == pytest.approx(0.05)


def test_aitken_zero_denominator_keeps_lambda():
    lam, alpha = aitken_step([1.0, 2.0], [1.0, 2.0], 0.42)
    assert lam == 0.42 and alpha == pytest.approx(0.58)


@given(vec, vec, st.floats(0, 0.95))
def test_alpha_bounds(a, b, lam0):
    _, alpha = aitken_step(a, b, lam0, 0.1, 0.8)
    assert 0.2 - 1e-15 <= alpha <= 0.9 + 1e-15


def test_relaxation_first_alpha_and_fixed():
    r = Relaxation(SolverConfig())
    assert r.alpha(np.ones(3)) == pytest.approx(0.7)
    f = Relaxation(SolverConfig(aitken=False, fixed_alpha=0.5))
    assert f.alpha(np.ones(3)) == 0.5 and f.alpha(np.zeros(3)) == 0.5


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(lambda_min=0.5, lambda_max=0.4)
    with pytest.raises(ValueError):
        SolverConfig(eps_in=0.0)
    assert SolverConfig().with_overrides(lambda_max=0.7).lambda_max == 0.7


@pytest.fixture(scope="module")
def nonlinear():
    case = NonlinearCase()
    grid = case.grid(41, 53)
    mesh = build_cut_cell_mesh(grid, case.boundary(400))
    op = EllipticOperator(mesh)
    c = mesh.centroids
    P = centroid_interpolator(mesh)

    def src(psi):
        return case.source(c[..., 0], c[..., 1], (P @ psi.ravel()).reshape(psi.shape))

    bp = mesh.boundary_points
    return case, mesh, op, src, case.psi(bp[:, 0], bp[:, 1])


def test_relaxed_update_identity(nonlinear):
    case, mesh, op, src, psi_b = nonlinear
    psi = np.zeros(mesh.grid.shape)
    for _ in range(4):
        trial = op.solve(src(psi), psi_b)
        new, rec, _ = inner_loop(op, psi, psi_b, lambda p: (src(p), None), SolverConfig(),
                                 max_iter=1)
        a = rec[0].alpha
        m = mesh.active
        np.testing.assert_allclose(new[m], ((1 - a) * psi + a * trial)[m], rtol=1e-12,
                                   atol=1e-14)
        assert rec[0].residual == pytest.approx(np.max(np.abs(new - psi)[m]))
        psi = new


def test_aitken_beats_fixed_relaxation(nonlinear):
    case, mesh, op, src, psi_b = nonlinear
    z = np.zeros(mesh.grid.shape)
    _, ra = picard_fixed_boundary(op, src, psi_b, z, tol=4e-3)
    _, rf = picard_fixed_boundary(op, src, psi_b, z, tol=4e-3,
                                  config=SolverConfig(aitken=False, fixed_alpha=0.5))
    assert len(ra) < len(rf)
    assert ra[-1].residual < 4e-3
    alphas = [r.alpha for r in ra]
    assert alphas[0] == pytest.approx(0.7)
    assert all(0.05 - 1e-12 <= a <= 1.0 for a in alphas)


def test_deterministic_history(nonlinear):
    case, mesh, op, src, psi_b = nonlinear
    z = np.zeros(mesh.grid.shape)
    p1, r1 = picard_fixed_boundary(op, src, psi_b, z, tol=1e-6)
    p2, r2 = picard_fixed_boundary(op, src, psi_b, z, tol=1e-6)
    assert [repr(r) for r in r1] == [repr(r) for r in r2]
    np.testing.assert_array_equal(p1, p2)


def test_exact_initial_guess_is_fixed_point(nonlinear):
    case, mesh, op, src, psi_b = nonlinear
    R, Z = mesh.grid.mesh()
    from_zero, _ = picard_fixed_boundary(op, src, psi_b, np.zeros(R.shape), tol=1e-10,
                                         max_iter=200)
    from_exact, _ = picard_fixed_boundary(op, src, psi_b, case.psi(R, Z), tol=1e-10,
                                          max_iter=200)
    m = mesh.active
    assert np.max(np.abs(from_zero - from_exact)[m]) < 1e-8


def test_cap_raises_with_history(nonlinear):
    case, mesh, op, src, psi_b = nonlinear
    with pytest.raises(NonConvergence) as info:
        picard_fixed_boundary(op, src, psi_b, np.zeros(mesh.grid.shape), tol=1e-12,
                              max_iter=2)
    assert len(info.value.history) == 2


def test_linear_source_single_solve():
    case = SolovievCase()
    mesh = build_cut_cell_mesh(case.grid(31, 41), case.boundary(200))
    res = solve_fixed_boundary(mesh, 0.0, source=np.ones(mesh.grid.shape))
    assert len(res.records) == 1
    # the default start for a callable source is already the constant map's image
    res1 = solve_fixed_boundary(mesh, 0.0, source=lambda p: np.ones(mesh.grid.shape))
    assert len(res1.records) == 1
    # from zero the second Aitken step lands on the image exactly
    res2 = solve_fixed_boundary(mesh, 0.0, source=lambda p: np.ones(mesh.grid.shape),
                                psi0=np.zeros(mesh.grid.shape),
                                config=SolverConfig(eps_in=1e-12))
    assert res2.records[1].alpha == pytest.approx(1.0)
    assert len(res2.records) <= 3
    np.testing.assert_allclose(res2.psi, res.psi, atol=1e-13)


def test_zero_source_constant_dirichlet():
    case = SolovievCase()
    mesh = build_cut_cell_mesh(case.grid(31, 41), case.boundary(200))
    res = solve_fixed_boundary(mesh, 2.5, source=np.zeros(mesh.grid.shape))
    np.testing.assert_allclose(res.psi[mesh.active], 2.5, rtol=1e-12)


def test_fixed_boundary_equilibrium():
    wall = BoundaryPolygon(SolovievCase().boundary(200).vertices * 6.2)
    mesh = build_cut_cell_mesh(CartesianGrid(3.5, 8.9, -3.8, 3.8, 45, 61), wall)
    res = solve_fixed_boundary(mesh, 0.0, profiles=FreeBoundaryCase().profiles())
    n = res.normalization
    assert res.records[-1].residual < 4e-3
    assert n.limited and n.psi_x == pytest.approx(0.0, abs=1e-6)
    assert mesh.inside(*n.axis)[0]
    assert res.mask.sum() > 0.5 * mesh.active.sum()
