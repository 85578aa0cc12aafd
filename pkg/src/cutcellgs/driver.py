"""Picard iteration with Aitken relaxation: fixed-boundary and free-boundary drivers."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy import ndimage

from .coils import ShapeTarget, build_constraint_rows, solve_currents
from .elliptic import EllipticOperator, centroid_interpolator
from .green import BoundaryWeights, CoilSet, field_estimate, hagenow_boundary
from .physics import (InvalidSolution, Normalization, ProfileTable, find_critical_points,
                      select_normalization, source_term)

logger = logging.getLogger(__name__)


class NonConvergence(RuntimeError):
    """An iteration exceeded its cap without meeting its tolerance."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []


@dataclass(frozen=True)
class SolverConfig:
    """Tolerances, caps and relaxation settings of the nonlinear solve."""

    eps_in: float = 4e-3
    eps_out: float = 2e-2
    n_max: int = 50
    m_max: int = 50
    lambda_min: float = 0.0
    lambda_max: float = 0.95
    lambda_init: float = 0.3
    aitken: bool = True
    fixed_alpha: float = 0.7
    rtol: float = 1e-5
    atol: float = 1e-5
    linear_solver: str = "direct"
    gamma: float = 1e-15
    n_sub: int = 20
    n_control: int = 21
    freeze_reference_currents: bool = False
    regularization: str = "normalized"
    n_jobs: int = 1

    def __post_init__(self):
        if not 0.0 <= self.lambda_min < self.lambda_max < 1.0:
            raise ValueError("need 0 <= lambda_min < lambda_max < 1")
        if not 0.0 <= self.lambda_init < 1.0:
            raise ValueError("lambda_init must lie in [0, 1)")
        if self.eps_in <= 0 or self.eps_out <= 0 or self.rtol <= 0 or self.atol <= 0:
            raise ValueError("tolerances must be positive")
        if self.n_max < 1 or self.m_max < 1:
            raise ValueError("iteration caps must be positive")
        if not 0.0 < self.fixed_alpha <= 1.0:
            raise ValueError("fixed_alpha must lie in (0, 1]")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.n_sub < 1:
            raise ValueError("n_sub must be positive")
        if self.regularization not in ("normalized", "plain"):
            raise ValueError("regularization must be 'normalized' or 'plain'")

    def with_overrides(self, **kw) -> "SolverConfig":
        return replace(self, **kw)


LIMITER_PRESET = {"lambda_min": 0.0, "lambda_max": 0.7}


@dataclass
class IterationRecord:
    loop: str
    outer: int
    iteration: int
    residual: float
    alpha: float
    psi_axis: float = float("nan")
    psi_x: float = float("nan")
    currents: tuple = ()


# ---------------------------------------------------------------------------
# Aitken relaxation
# ---------------------------------------------------------------------------


def aitken_step(d_prev, d_curr, lambda_prev, lambda_min=0.0, lambda_max=0.95):
    """One Aitken update. Returns ``(lambda_next, alpha)``.

    ``d_*`` are successive differences ``x^n - G(x^n)``. The returned lambda
    is clamped to ``[lambda_min, lambda_max]`` and ``alpha = 1 - lambda``. A
    zero denominator keeps the previous lambda.
    """
    d_prev = np.ravel(np.asarray(d_prev, dtype=float))
    d_curr = np.ravel(np.asarray(d_curr, dtype=float))
    diff = d_prev - d_curr
    den = float(diff @ diff)
    if den == 0.0:
        logger.debug("Aitken denominator vanished; keeping lambda")
        lam = lambda_prev
    else:
        lam = lambda_prev + (lambda_prev - 1.0) * float(diff @ d_curr) / den
    lam = min(max(lam, lambda_min), lambda_max)
    return lam, 1.0 - lam


class Relaxation:
    """Stateful under-relaxation: Aitken-adaptive or a fixed coefficient."""

    def __init__(self, config: SolverConfig):
        self.config = config
        self.reset()

    def reset(self):
        self.lam = None
        self.d_prev = None

    def alpha(self, d_curr) -> float:
        cfg = self.config
        if not cfg.aitken:
            return cfg.fixed_alpha
        if self.lam is None:
            lam = cfg.lambda_init
        else:
            lam, _ = aitken_step(self.d_prev, d_curr, self.lam, cfg.lambda_min, cfg.lambda_max)
        self.lam = lam
        self.d_prev = np.array(d_curr, dtype=float, copy=True)
        return 1.0 - lam


def _boundary_vector(op, psi_b) -> np.ndarray:
    nb = len(op.mesh.boundary_points)
    return np.array(np.broadcast_to(np.asarray(psi_b, dtype=float), (nb,)))


def inner_loop(op, psi0, psi_b, source_fn: Callable, config: SolverConfig | None = None,
               outer: int = 0, tol: float | None = None, max_iter: int | None = None,
               relaxation: Relaxation | None = None):
    """Relaxed Picard iteration with the boundary data held fixed.

    ``source_fn(psi)`` returns ``(source, normalization_or_None)``. Returns
    ``(psi, records, converged)``. Non-active entries (exterior points and
    Dirichlet frame nodes) are taken from each linear solve unrelaxed.
    """
    cfg = config or SolverConfig()
    tol = cfg.eps_in if tol is None else tol
    max_iter = cfg.n_max if max_iter is None else max_iter
    relax = relaxation or Relaxation(cfg)
    relax.reset()
    active = op.mesh.active
    b_bound = op.boundary_map @ _boundary_vector(op, psi_b)
    psi = np.array(psi0, dtype=float, copy=True)
    records = []
    for n in range(1, max_iter + 1):
        try:
            src, norm = source_fn(psi)
        except InvalidSolution as exc:
            exc.history = records
            raise
        trial = op.solve_rhs(op.rhs(src) + b_bound).reshape(psi.shape)
        d = (psi - trial)[active]
        alpha = relax.alpha(d)
        new = np.where(active, (1.0 - alpha) * psi + alpha * trial, trial)
        res = float(np.max(np.abs(new - psi)[active]))
        records.append(IterationRecord(
            "inner", outer, n, res, alpha,
            norm.psi_axis if norm is not None else float("nan"),
            norm.psi_x if norm is not None else float("nan"),
        ))
        psi = new
        if res < tol:
            return psi, records, True
    logger.warning("inner loop %d stopped at the cap of %d iterations (residual %.3e)",
                   outer, max_iter, records[-1].residual)
    return psi, records, False


def picard_fixed_boundary(op, source: Callable[[np.ndarray], np.ndarray], psi_b, psi0,
                          tol: float = 4e-3, max_iter: int = 50,
                          config: SolverConfig | None = None, raise_on_cap: bool = True):
    """Relaxed Picard iteration for ``Delta* psi = source(psi)`` with fixed boundary data.

    Returns ``(psi, records)``; the residual is the max-norm update over active
    points.
    """
    psi, records, ok = inner_loop(op, np.where(op.mesh.active, psi0, 0.0), psi_b,
                                  lambda p: (source(p), None), config, tol=tol,
                                  max_iter=max_iter)
    if not ok and raise_on_cap:
        raise NonConvergence(f"Picard iteration did not reach {tol:g} in {max_iter} steps",
                             records)
    return psi, records


# ---------------------------------------------------------------------------
# equilibrium helpers
# ---------------------------------------------------------------------------


def boundary_values(psi, mesh) -> np.ndarray:
    """Grid field sampled at the boundary points, extending valid values outward."""
    valid = mesh.valid
    if not valid.all():
        idx = ndimage.distance_transform_edt(~valid, return_distances=False,
                                             return_indices=True)
        psi = psi[tuple(idx)]
    bp = mesh.boundary_points
    return mesh.grid.bilinear(psi, bp[:, 0], bp[:, 1])


class EquilibriumSource:
    """``psi -> (S(psi), normalization)`` with critical points re-searched every call."""

    def __init__(self, mesh, profiles: ProfileTable, n_jobs: int = 1):
        self.mesh = mesh
        self.profiles = profiles
        self.n_jobs = n_jobs
        self.to_centroid = centroid_interpolator(mesh)
        self.psi_b = None
        self.last_mask = None

    def normalization(self, psi) -> Normalization:
        pts = find_critical_points(psi, self.mesh, n_jobs=self.n_jobs)
        pb = boundary_values(psi, self.mesh) if self.psi_b is None else self.psi_b
        return select_normalization(pts, pb, self.mesh.boundary_points)

    def __call__(self, psi):
        norm = self.normalization(psi)
        pc = (self.to_centroid @ psi.ravel()).reshape(psi.shape)
        src, mask = source_term(psi, norm, self.profiles, self.mesh, pc)
        if not mask.any():
            raise InvalidSolution("plasma region is empty")
        self.last_mask = mask
        return src, norm


@dataclass
class EquilibriumResult:
    psi: np.ndarray
    normalization: Normalization | None
    records: list
    mask: np.ndarray
    currents: np.ndarray | None = None
    psi_b: np.ndarray | None = None

    @property
    def outer_iterations(self) -> int:
        return sum(1 for r in self.records if r.loop == "outer" and r.outer > 0)

    def inner_iterations(self, outer: int = 1) -> int:
        return sum(1 for r in self.records if r.loop == "inner" and r.outer == outer)


# ---------------------------------------------------------------------------
# fixed boundary
# ---------------------------------------------------------------------------


def _amplitude_matched(op, psi1, psi_b, fn):
    """Rescale the homogeneous part of a guess to the equilibrium amplitude.

    Profile sources scale like ``1/(psi_x - psi_axis)``, so a guess ``k h``
    maps to ``T / k``; the consistent amplitude is ``k = sqrt(|T| / |h|)``.
    Without this, Picard starts far out on the ``a -> C/a`` branch and the
    first steps can lose the axis.
    """
    base = op.solve(0.0, psi_b)
    h = psi1 - base
    src, _ = fn(psi1)
    T = op.solve(src, 0.0)
    act = op.mesh.active
    hmax = float(np.max(np.abs(h[act])))
    tmax = float(np.max(np.abs(T[act])))
    if hmax == 0.0 or tmax == 0.0:
        return psi1
    k = np.sqrt(tmax / hmax)
    logger.debug("initial guess rescaled by %.4g", k)
    return base + k * h


def solve_fixed_boundary(mesh, dirichlet=0.0, source=None, profiles: ProfileTable | None = None,
                         psi0=None, config: SolverConfig | None = None, op=None):
    """Fixed-boundary solve.

    ``source`` may be an array (one linear solve) or a callable ``source(psi)``
    (Picard iteration); alternatively ``profiles`` gives the equilibrium
    source. ``dirichlet`` is a scalar, one value per boundary point, or a
    callable ``f(R, Z)``. Returns an :class:`EquilibriumResult`; the
    normalization is ``None`` unless profiles are used.
    """
    cfg = config or SolverConfig()
    if (source is None) == (profiles is None):
        raise ValueError("give exactly one of source and profiles")
    op = op or EllipticOperator(mesh, method=cfg.linear_solver, rtol=cfg.rtol, atol=cfg.atol)
    if callable(dirichlet):
        bp = mesh.boundary_points
        dirichlet = dirichlet(bp[:, 0], bp[:, 1])
    psi_b = _boundary_vector(op, dirichlet)
    if source is not None and not callable(source):
        psi = op.solve(source, psi_b)
        rec = IterationRecord("inner", 0, 1, 0.0, 1.0)
        return EquilibriumResult(psi, None, [rec], mesh.active.copy(), psi_b=psi_b)
    if profiles is not None:
        fn = EquilibriumSource(mesh, profiles, cfg.n_jobs)
        fn.psi_b = psi_b
    else:
        fn = lambda p: (source(p), None)  # noqa: E731
    if psi0 is None:
        # a source of one sign gives a single interior extremum to start from
        psi0 = op.solve(np.ones(mesh.grid.shape), psi_b)
        if profiles is not None:
            psi0 = _amplitude_matched(op, psi0, psi_b, fn)
    psi, records, ok = inner_loop(op, psi0, psi_b, fn, cfg)
    if not ok:
        raise NonConvergence(f"fixed-boundary iteration did not reach {cfg.eps_in:g} "
                             f"in {cfg.n_max} steps", records)
    if profiles is not None:
        _, norm = fn(psi)
        return EquilibriumResult(psi, norm, records, fn.last_mask, psi_b=psi_b)
    return EquilibriumResult(psi, None, records, mesh.active.copy(), psi_b=psi_b)


# ---------------------------------------------------------------------------
# free boundary
# ---------------------------------------------------------------------------


def solve_free_boundary(mesh, coils: CoilSet, profiles: ProfileTable, target: ShapeTarget,
                        psi_init, config: SolverConfig | None = None,
                        initial_guess: str = "estimate", op=None) -> EquilibriumResult:
    """Two-level Picard iteration: plasma field inside, boundary flux and coil currents outside.

    The initial field supplies the first normalization; from it the zero-
    boundary field ``U``, plain least-squares currents and the first boundary
    data follow. With ``initial_guess="estimate"`` the interior starting field
    is rebuilt from those quantities; ``"given"`` keeps ``psi_init``.
    """
    cfg = config or SolverConfig()
    if initial_guess not in ("estimate", "given"):
        raise ValueError("initial_guess must be 'estimate' or 'given'")
    coils.validate_outside(mesh)
    target.check(mesh, len(coils))
    op = op or EllipticOperator(mesh, method=cfg.linear_solver, rtol=cfg.rtol, atol=cfg.atol)
    fn = EquilibriumSource(mesh, profiles, cfg.n_jobs)
    wb = BoundaryWeights.build(mesh, coils, n_jobs=cfg.n_jobs)
    wc = BoundaryWeights.build(mesh, coils, points=target.points, n_jobs=cfg.n_jobs)
    history: list[IterationRecord] = []

    def coil_update(psi, psi_b, reference):
        fn.psi_b = psi_b
        src, norm = fn(psi)
        U = op.solve(src, 0.0)
        dUdn = op.normal_derivative(U, 0.0)
        A, b = build_constraint_rows(target.points, U, dUdn, mesh, coils, norm.psi_x,
                                     W_line=wc.W_line, response=wc.W_coil)
        if cfg.regularization == "plain":
            reference = None
        currents = solve_currents(A, b, cfg.gamma, reference=reference)
        return U, dUdn, currents, norm

    psi = np.where(mesh.valid, np.asarray(psi_init, dtype=float), 0.0)
    U, dUdn, currents, norm = coil_update(psi, None, None)
    psi_b = hagenow_boundary(dUdn, currents, wb)
    history.append(IterationRecord("outer", 0, 0, float("nan"), float("nan"), norm.psi_axis,
                                   norm.psi_x, tuple(currents)))
    if initial_guess == "estimate":
        est = field_estimate(U, dUdn, mesh, coils, currents, n_jobs=cfg.n_jobs)
        psi = np.where(mesh.valid, est, 0.0)

    try:
        return _outer_loop(op, fn, coil_update, wb, psi, psi_b, currents, cfg, history)
    except InvalidSolution as exc:
        exc.history = history + list(getattr(exc, "history", []))
        raise


def _outer_loop(op, fn, coil_update, wb, psi, psi_b, currents, cfg, history):
    reference = currents
    outer_relax = Relaxation(cfg)
    inner_relax = Relaxation(cfg)
    for m in range(1, cfg.m_max + 1):
        fn.psi_b = psi_b
        psi, recs, _ = inner_loop(op, psi, psi_b, fn, cfg, outer=m, relaxation=inner_relax)
        history.extend(recs)
        U, dUdn, currents, norm = coil_update(psi, psi_b, reference)
        if not cfg.freeze_reference_currents:
            reference = currents
        trial = hagenow_boundary(dUdn, currents, wb)
        alpha = outer_relax.alpha(psi_b - trial)
        new_b = (1.0 - alpha) * psi_b + alpha * trial
        res = float(np.max(np.abs(new_b - psi_b)))
        history.append(IterationRecord("outer", m, m, res, alpha, norm.psi_axis, norm.psi_x,
                                       tuple(currents)))
        logger.info("outer %d: residual %.3e alpha %.3f psi_axis %.5g psi_x %.5g",
                    m, res, alpha, norm.psi_axis, norm.psi_x)
        psi_b = new_b
        if res < cfg.eps_out:
            return EquilibriumResult(psi, norm, history, fn.last_mask, currents, psi_b)
    raise NonConvergence(f"outer loop did not reach {cfg.eps_out:g} in {cfg.m_max} steps",
                         history)


def shape_error(result: EquilibriumResult, mesh, points) -> float:
    """``max_k |psi(x_k) - psi_X| / |psi_o - psi_X|`` over control points."""
    pts = np.atleast_2d(points)
    vals = mesh.grid.bilinear(result.psi, pts[:, 0], pts[:, 1])
    n = result.normalization
    return float(np.max(np.abs(vals - n.psi_x)) / abs(n.psi_axis - n.psi_x))
