"""scikit-learn style wrappers around the solvers.

``fit`` runs a solve and stores fitted attributes with a trailing underscore;
``predict``/``transform`` evaluate the fitted state at new inputs.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .coils import ShapeTarget, objective, solve_currents
from .driver import SolverConfig, shape_error, solve_fixed_boundary, solve_free_boundary
from .physics import ProfileTable


def check_points(points, name="points") -> np.ndarray:
    """(n, 2) float array of finite ``(R, Z)`` pairs with ``R > 0``."""
    pts = check_array(points, dtype=float, ensure_min_features=2)
    if pts.shape[1] != 2:
        raise ValueError(f"{name} must have two columns (R, Z), got {pts.shape[1]}")
    if np.any(pts[:, 0] <= 0):
        raise ValueError(f"{name} need R > 0")
    return pts


def check_field(psi, mesh) -> np.ndarray:
    psi = np.asarray(psi, dtype=float)
    if psi.shape != mesh.grid.shape:
        raise ValueError(f"field shape {psi.shape} does not match grid {mesh.grid.shape}")
    if not np.all(np.isfinite(psi[mesh.valid])):
        raise ValueError("field has non-finite values on valid points")
    return psi


def _config(est) -> SolverConfig:
    return SolverConfig(eps_in=est.eps_in, n_max=est.n_max, aitken=est.aitken,
                        lambda_max=est.lambda_max, **getattr(est, "_extra_config", {}))


class CoilCurrentRegressor(RegressorMixin, BaseEstimator):
    """Regularized least squares ``min |A I - b|^2 + gamma |D I|^2``.

    ``X`` is the response matrix ``A`` (one row per control point), ``y`` the
    right-hand side ``b``. ``coef_`` holds the currents.
    """

    def __init__(self, gamma: float = 1e-15, reference=None):
        self.gamma = gamma
        self.reference = reference

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        if X.shape[0] <= X.shape[1]:
            raise ValueError(f"need more rows ({X.shape[0]}) than currents ({X.shape[1]})")
        self.coef_ = solve_currents(X, y, self.gamma, self.reference)
        self.objective_ = objective(X, y, self.coef_, self.gamma, self.reference)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        return X @ self.coef_


class ProfileInterpolator(TransformerMixin, BaseEstimator):
    """Barycentric interpolation of ``p`` and ``g`` tables in normalized flux.

    ``fit(X, y)`` takes equispaced nodes ``X`` in ``[0, 1]`` and ``y`` with
    columns ``(p, g)``; ``transform`` returns ``(p, g)`` at new points and
    ``predict`` the derivatives.
    """

    def __init__(self, d: int = 4):
        self.d = d

    def fit(self, X, y):
        x = check_array(X, dtype=float, ensure_2d=False).ravel()
        y = check_array(y, dtype=float)
        if y.shape != (len(x), 2):
            raise ValueError("y must have columns (p, g), one row per node")
        self.table_ = ProfileTable(x, y[:, 0], y[:, 1], self.d)
        return self

    def transform(self, X):
        check_is_fitted(self, "table_")
        x = check_array(X, dtype=float, ensure_2d=False).ravel()
        return np.column_stack(self.table_.evaluate(x))

    def predict(self, X):
        check_is_fitted(self, "table_")
        x = check_array(X, dtype=float, ensure_2d=False).ravel()
        return np.column_stack(self.table_.derivative(x))


class FixedBoundaryGS(BaseEstimator):
    """Fixed-boundary equilibrium on a mesh.

    ``fit(profiles)`` solves with ``psi = dirichlet`` on the wall; ``predict``
    interpolates the converged flux at ``(R, Z)`` points.
    """

    def __init__(self, mesh=None, dirichlet: float = 0.0, eps_in: float = 4e-3,
                 n_max: int = 50, aitken: bool = True, lambda_max: float = 0.95):
        self.mesh = mesh
        self.dirichlet = dirichlet
        self.eps_in = eps_in
        self.n_max = n_max
        self.aitken = aitken
        self.lambda_max = lambda_max

    def fit(self, profiles: ProfileTable, y=None, psi0=None):
        if self.mesh is None:
            raise ValueError("FixedBoundaryGS needs a mesh")
        if psi0 is not None:
            psi0 = check_field(psi0, self.mesh)
        res = solve_fixed_boundary(self.mesh, self.dirichlet, profiles=profiles, psi0=psi0,
                                   config=_config(self))
        self.psi_ = res.psi
        self.normalization_ = res.normalization
        self.records_ = res.records
        self.n_iter_ = len(res.records)
        return self

    def predict(self, X):
        check_is_fitted(self, "psi_")
        pts = check_points(X)
        return self.mesh.grid.bilinear(np.where(self.mesh.valid, self.psi_, 0.0),
                                       pts[:, 0], pts[:, 1])

    def transform(self, X):
        """Normalized flux at the points."""
        return self.normalization_.psibar(self.predict(X))


class FreeBoundaryGS(FixedBoundaryGS):
    """Free-boundary equilibrium: coil currents chosen to hold a target shape."""

    def __init__(self, mesh=None, coils=None, target=None, eps_in: float = 4e-3,
                 eps_out: float = 2e-2, n_max: int = 50, m_max: int = 50,
                 aitken: bool = True, lambda_max: float = 0.95, gamma: float = 1e-15,
                 initial_guess: str = "estimate"):
        self.mesh = mesh
        self.coils = coils
        self.target = target
        self.eps_in = eps_in
        self.eps_out = eps_out
        self.n_max = n_max
        self.m_max = m_max
        self.aitken = aitken
        self.lambda_max = lambda_max
        self.gamma = gamma
        self.initial_guess = initial_guess

    def fit(self, profiles: ProfileTable, y=None, psi0=None):
        if self.mesh is None or self.coils is None or self.target is None:
            raise ValueError("FreeBoundaryGS needs mesh, coils and target")
        if psi0 is None:
            raise ValueError("a free-boundary solve needs an initial field psi0")
        psi0 = check_field(psi0, self.mesh)
        target = self.target
        if not isinstance(target, ShapeTarget):
            target = ShapeTarget(check_points(target, "target"))
        self._extra_config = {"eps_out": self.eps_out, "m_max": self.m_max,
                              "gamma": self.gamma}
        res = solve_free_boundary(self.mesh, self.coils, profiles, target, psi0,
                                  config=_config(self), initial_guess=self.initial_guess)
        self.psi_ = res.psi
        self.normalization_ = res.normalization
        self.records_ = res.records
        self.coef_ = res.currents
        self.psi_b_ = res.psi_b
        self.n_iter_ = res.outer_iterations
        self.shape_error_ = shape_error(res, self.mesh, target.points)
        return self

    def score(self, X=None, y=None):
        """Negative shape error at the target control points."""
        check_is_fitted(self, "psi_")
        return -self.shape_error_
