"""Command line front end: ``cutcellgs {solve-fixed,solve-free,converge,inspect-geometry}``.

Exit codes: 0 success, 2 configuration error, 3 nonconvergence,
4 invalid solution (not exactly one magnetic axis).
"""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path


from .driver import NonConvergence
from .geometry import GeometryError
from .io import ConfigError, parse_config
from .physics import InvalidSolution

logger = logging.getLogger("cutcellgs")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NONCONVERGENCE = 3
EXIT_INVALID = 4

SUBCOMMANDS = {
    "solve-fixed": "fixed",
    "solve-free": "free",
    "converge": "convergence",
    "inspect-geometry": "geometry",
}

# flag -> config key; every flag overrides the file
_FLAGS = {
    "output": "run.output",
    "wall": "domain.wall",
    "profiles": "profiles.file",
    "pressure_scale": "profiles.pressure_scale",
    "coils": "coils.file",
    "target": "target.points",
    "initial": "initial.field",
    "eps_in": "solver.eps_in",
    "eps_out": "solver.eps_out",
    "n_max": "solver.n_max",
    "m_max": "solver.m_max",
    "lambda_min": "solver.lambda_min",
    "lambda_max": "solver.lambda_max",
    "gamma": "solver.gamma",
    "n_jobs": "solver.n_jobs",
    "linear_solver": "solver.linear_solver",
    "ladder": "convergence.ladder",
    "case": "convergence.case",
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cutcellgs",
                                     description="Cut-cell Grad-Shafranov equilibrium solver")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", help="run configuration file")
        p.add_argument("-o", "--output", help="output directory")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override any config key (repeatable)")
        p.add_argument("--n-jobs", dest="n_jobs", type=int)
        if name in ("solve-fixed", "solve-free", "inspect-geometry"):
            p.add_argument("--wall")
        if name in ("solve-fixed", "solve-free"):
            p.add_argument("--profiles")
            p.add_argument("--pressure-scale", dest="pressure_scale", type=float)
            p.add_argument("--eps-in", dest="eps_in", type=float)
            p.add_argument("--n-max", dest="n_max", type=int)
            p.add_argument("--lambda-min", dest="lambda_min", type=float)
            p.add_argument("--lambda-max", dest="lambda_max", type=float)
            p.add_argument("--linear-solver", dest="linear_solver",
                           choices=["direct", "amg"])
            p.add_argument("--initial")
        if name == "solve-free":
            p.add_argument("--coils")
            p.add_argument("--target")
            p.add_argument("--eps-out", dest="eps_out", type=float)
            p.add_argument("--m-max", dest="m_max", type=int)
            p.add_argument("--gamma", type=float)
            p.add_argument("--no-aitken", action="store_true",
                           help="fixed relaxation instead of Aitken")
        if name == "converge":
            p.add_argument("--ladder", help="comma separated NRxNZ list")
            p.add_argument("--case", choices=["soloviev", "nonlinear"])
    return parser


def _overrides(args) -> dict:
    out = {}
    for flag, key in _FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            out[key] = str(value)
    if getattr(args, "no_aitken", False):
        out["solver.aitken"] = "false"
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


# ---------------------------------------------------------------------------
# runs
# ---------------------------------------------------------------------------


def _mesh(cfg):
    from .geometry import BoundaryPolygon, build_cut_cell_mesh, rectangular_mesh

    if cfg.wall is None:
        return rectangular_mesh(cfg.grid)
    return build_cut_cell_mesh(cfg.grid, BoundaryPolygon.from_file(cfg.wall))


def _profiles(cfg):
    from .physics import ProfileTable

    return ProfileTable.from_file(cfg.profiles, d=cfg.profile_order).scaled(cfg.pressure_scale)


def _coils(cfg):
    from .green import CoilSet, iter_like_coils

    if cfg.coils == "iter":
        return iter_like_coils(cfg.solver.n_sub)
    return CoilSet.from_file(cfg.coils, n_sub=cfg.solver.n_sub)


def _write_result(cfg, mesh, result, counts, coil_names=()):
    from .io import export_field, export_history, write_manifest

    out = Path(cfg.output)
    export_field(out / "psi.txt", cfg.grid, result.psi, result.mask, result.normalization)
    export_history(out / "history.csv", result.records, coil_names)
    n = result.normalization
    if n is not None:
        counts.update(psi_axis=repr(n.psi_axis), psi_x=repr(n.psi_x))
    counts["records"] = len(result.records)
    counts["active_points"] = int(mesh.active.sum())
    write_manifest(out / "manifest.txt", cfg, counts, "ok")


def run_fixed(cfg) -> int:
    from .driver import solve_fixed_boundary

    mesh = _mesh(cfg)
    psi0 = None
    if cfg.initial_field is not None:
        from .io import load_initial_field

        psi0 = load_initial_field(cfg.initial_field, cfg.grid, cfg.resample).values
    result = solve_fixed_boundary(mesh, cfg.dirichlet, profiles=_profiles(cfg), psi0=psi0,
                                  config=cfg.solver)
    _write_result(cfg, mesh, result, {"inner_iterations": len(result.records)})
    n = result.normalization
    print(f"fixed-boundary solve converged in {len(result.records)} iterations; "
          f"psi_axis={n.psi_axis:.6g} psi_x={n.psi_x:.6g}")
    return EXIT_OK


def run_free(cfg) -> int:
    from .coils import ShapeTarget
    from .driver import shape_error, solve_free_boundary
    from .io import load_initial_field
    from .physics import find_critical_points, select_normalization

    mesh = _mesh(cfg)
    coils = _coils(cfg)
    field = load_initial_field(cfg.initial_field, cfg.grid, cfg.resample)
    if cfg.target_points is not None:
        target = ShapeTarget.from_file(cfg.target_points)
    elif cfg.target_boundary is not None:
        from .geometry import BoundaryPolygon

        target = ShapeTarget.from_boundary(BoundaryPolygon.from_file(cfg.target_boundary),
                                           cfg.n_control)
    else:
        bp = mesh.boundary_points
        norm = select_normalization(find_critical_points(field.values, mesh),
                                    cfg.grid.bilinear(field.values, bp[:, 0], bp[:, 1]), bp)
        target = ShapeTarget.from_field(field.values, mesh, norm, cfg.n_control)
    result = solve_free_boundary(mesh, coils, _profiles(cfg), target, field.values,
                                 config=cfg.solver, initial_guess=cfg.initial_guess)
    err = shape_error(result, mesh, target.points)
    counts = {"outer_iterations": result.outer_iterations,
              "inner_iterations_first": result.inner_iterations(1),
              "shape_error": repr(err)}
    _write_result(cfg, mesh, result, counts, coils.names)
    out = Path(cfg.output)
    with open(out / "currents.txt", "w") as fh:
        fh.write("# coil current_per_turn[A]\n")
        for name, cur in zip(coils.names, result.currents):
            fh.write(f"{name} {float(cur)!r}\n")
    print(f"free-boundary solve converged in {result.outer_iterations} outer iterations; "
          f"shape error {err:.3e}")
    return EXIT_OK


def run_convergence(cfg) -> int:
    from .io import write_manifest
    from .manufactured import (NonlinearCase, SolovievCase, convergence_study,
                               format_convergence, solve_linear_case, solve_nonlinear_case,
                               write_convergence_csv, write_report)

    if len(cfg.ladder) < 2:
        raise ConfigError("[convergence] ladder needs at least two meshes")
    method = cfg.solver.linear_solver
    if cfg.case == "soloviev":
        case = SolovievCase()

        def solver(nr, nz):
            return solve_linear_case(case, nr, nz, cfg.boundary_nodes, method,
                                     cfg.boundary_data)
    else:
        case = NonlinearCase()

        def solver(nr, nz):
            return solve_nonlinear_case(case, nr, nz, cfg.boundary_nodes, method=method)

    rows = convergence_study(solver, cfg.ladder)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    write_convergence_csv(rows, out / "convergence.csv")
    write_report(rows, out / "convergence.txt")
    write_manifest(out / "manifest.txt", cfg, {"meshes": len(rows)}, "ok")
    print(format_convergence(rows))
    return EXIT_OK


def run_geometry(cfg) -> int:
    from .io import export_geometry, write_manifest

    mesh = _mesh(cfg)
    out = Path(cfg.output)
    export_geometry(out / "geometry.txt", mesh)
    summ = mesh.summary()
    write_manifest(out / "manifest.txt", cfg, summ, "ok")
    for k, v in summ.items():
        print(f"{k}: {v}")
    return EXIT_OK


RUNNERS = {"fixed": run_fixed, "free": run_free, "convergence": run_convergence,
           "geometry": run_geometry}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)
    mode = SUBCOMMANDS[args.command]
    cfg = None
    try:
        cfg = parse_config(args.config, mode=mode, overrides=_overrides(args))
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return RUNNERS[mode](cfg)
    except (ConfigError, GeometryError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonConvergence as exc:
        print(f"no convergence: {exc}", file=sys.stderr)
        _dump_failure(cfg, exc, "nonconvergence")
        return EXIT_NONCONVERGENCE
    except InvalidSolution as exc:
        print(f"invalid solution: {exc}", file=sys.stderr)
        _dump_failure(cfg, exc, "invalid")
        return EXIT_INVALID
    except ValueError as exc:
        # malformed input files surface as ValueError from the readers
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def _dump_failure(cfg, exc, status):
    if cfg is None:
        return
    from .io import export_history, write_manifest

    out = Path(cfg.output)
    history = getattr(exc, "history", None) or []
    try:
        export_history(out / "history.csv", history)
        write_manifest(out / "manifest.txt", cfg, {"records": len(history)}, status)
    except OSError as err:
        logger.warning("could not write failure diagnostics: %s", err)


if __name__ == "__main__":
    sys.exit(main())
