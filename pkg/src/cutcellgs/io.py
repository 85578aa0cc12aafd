"""Run configuration, field import/export and run manifests.

Every file is line-oriented text; ``#`` starts a comment.

Config files hold ``[section]`` headers and ``key = value`` lines::

    [grid]
    r_min = 3.55
    r_max = 8.88
    z_min = -3.84
    z_max = 4.92
    nr = 65
    nz = 105

    [solver]
    lambda_max = 0.7

Relative paths resolve against the config file's directory. See
``CONFIG_SCHEMA`` for every key, its type and its default.
"""

from __future__ import annotations

import csv
import hashlib
import logging
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .driver import SolverConfig
from .grid import CartesianGrid

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""

    def __init__(self, message, line: int | None = None, path=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)
        self.line = line


MODES = ("fixed", "free", "convergence", "geometry")

_SOLVER_TYPES = {f.name: f.type for f in fields(SolverConfig)}

# (type, default); default ``...`` marks a key required by the modes that use the section
CONFIG_SCHEMA: dict[str, dict[str, tuple[str, object]]] = {
    "run": {"mode": ("str", None), "output": ("outpath", "output")},
    "grid": {
        "r_min": ("float", ...), "r_max": ("float", ...), "z_min": ("float", ...),
        "z_max": ("float", ...), "nr": ("int", ...), "nz": ("int", ...),
    },
    "domain": {"wall": ("path", None), "dirichlet": ("float", 0.0)},
    "profiles": {"file": ("path", None), "pressure_scale": ("float", 1.0),
                 "order": ("int", 4)},
    "coils": {"file": ("coilpath", None)},
    "target": {"points": ("path", None), "boundary": ("path", None), "m": ("int", 21)},
    "initial": {"field": ("path", None), "resample": ("bool", True),
                "guess": ("str", "estimate")},
    "solver": {
        "eps_in": ("float", 4e-3), "eps_out": ("float", 2e-2), "n_max": ("int", 50),
        "m_max": ("int", 50), "lambda_min": ("float", 0.0), "lambda_max": ("float", 0.95),
        "lambda_init": ("float", 0.3), "aitken": ("bool", True),
        "fixed_alpha": ("float", 0.7), "rtol": ("float", 1e-5), "atol": ("float", 1e-5),
        "linear_solver": ("str", "direct"), "gamma": ("float", 1e-15),
        "n_sub": ("int", 20), "n_control": ("int", 21),
        "freeze_reference_currents": ("bool", False),
        "regularization": ("str", "normalized"), "n_jobs": ("int", 1),
        "limiter_preset": ("bool", False),
    },
    "convergence": {
        "case": ("str", "soloviev"), "ladder": ("str", "31x41,61x81,121x161,241x321"),
        "boundary_nodes": ("int", 2000), "boundary_data": ("str", "wall"),
    },
}


@dataclass
class RunConfig:
    mode: str
    grid: CartesianGrid | None
    solver: SolverConfig
    output: Path
    wall: Path | None = None
    dirichlet: float = 0.0
    profiles: Path | None = None
    pressure_scale: float = 1.0
    profile_order: int = 4
    coils: Path | str | None = None
    target_points: Path | None = None
    target_boundary: Path | None = None
    n_control: int = 21
    initial_field: Path | None = None
    resample: bool = True
    initial_guess: str = "estimate"
    case: str = "soloviev"
    ladder: list = field(default_factory=list)
    boundary_nodes: int = 2000
    boundary_data: str = "wall"
    source_text: str = ""

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.source_text.encode()).hexdigest()


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _convert(kind, raw, base: Path, line, path):
    try:
        if kind == "float":
            return float(raw)
        if kind == "int":
            v = float(raw)
            if v != int(v):
                raise ValueError
            return int(v)
        if kind == "bool":
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError
    except ValueError:
        raise ConfigError(f"malformed {kind} value {raw!r}", line, path) from None
    if kind in ("path", "coilpath"):
        if kind == "coilpath" and raw.lower() == "iter":
            return "iter"
        p = Path(raw)
        p = p if p.is_absolute() else base / p
        if not p.exists():
            raise ConfigError(f"file not found: {p}", line, path)
        return p
    if kind == "outpath":
        p = Path(raw)
        return p if p.is_absolute() else base / p
    return raw


def _read_sections(text: str, path=None):
    """``{section: {key: (raw value, line)}}``."""
    out: dict[str, dict[str, tuple[str, int]]] = {}
    section = None
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {raw.strip()!r}", n, path)
            section = line[1:-1].strip().lower()
            if section not in CONFIG_SCHEMA:
                raise ConfigError(f"unknown section [{section}]", n, path)
            out.setdefault(section, {})
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", n, path)
        if section is None:
            raise ConfigError("key outside of any section", n, path)
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.lower()
        if key not in CONFIG_SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]", n, path)
        if key in out[section]:
            raise ConfigError(f"duplicate key {key!r} in [{section}]", n, path)
        out[section][key] = (value, n)
    return out


def parse_ladder(text: str) -> list[tuple[int, int]]:
    out = []
    for item in text.split(","):
        item = item.strip().lower()
        if not item:
            continue
        try:
            a, b = item.split("x")
            out.append((int(a), int(b)))
        except ValueError:
            raise ValueError(f"malformed mesh size {item!r}; expected NRxNZ") from None
    return out


def parse_config(path, mode: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Read and validate a run configuration.

    ``overrides`` maps ``"section.key"`` to raw strings and wins over the file.
    ``mode`` (from the CLI subcommand) wins over ``[run] mode``.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    raw = _read_sections(text, path)
    for dotted, value in (overrides or {}).items():
        if "." not in dotted:
            raise ConfigError(f"override {dotted!r} must look like section.key")
        sec, key = dotted.lower().split(".", 1)
        if sec not in CONFIG_SCHEMA or key not in CONFIG_SCHEMA[sec]:
            raise ConfigError(f"unknown override key {dotted!r}")
        raw.setdefault(sec, {})[key] = (str(value), None)

    base = path.parent
    vals: dict[str, dict] = {}
    for sec, keys in CONFIG_SCHEMA.items():
        given = raw.get(sec, {})
        vals[sec] = {}
        for key, (kind, default) in keys.items():
            if key in given:
                value, line = given[key]
                vals[sec][key] = _convert(kind, value, base, line, path)
            else:
                vals[sec][key] = default

    mode = mode or vals["run"]["mode"]
    if mode is None:
        raise ConfigError("no run mode: give [run] mode or use a subcommand", path=path)
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {', '.join(MODES)}",
                          given.get("mode", (None, None))[1] if (given := raw.get("run", {}))
                          else None, path)

    grid = None
    if mode != "convergence":
        g = vals["grid"]
        missing = [k for k, v in g.items() if v is ...]
        if missing:
            raise ConfigError(f"missing [grid] keys: {', '.join(missing)}", path=path)
        try:
            grid = CartesianGrid(g["r_min"], g["r_max"], g["z_min"], g["z_max"], g["nr"],
                                 g["nz"])
        except ValueError as exc:
            line = raw.get("grid", {}).get("r_min", (None, None))[1]
            raise ConfigError(str(exc), line, path) from None

    s = dict(vals["solver"])
    preset = s.pop("limiter_preset")
    if preset:
        from .driver import LIMITER_PRESET

        for k, v in LIMITER_PRESET.items():
            if k not in raw.get("solver", {}):
                s[k] = v
    try:
        solver = SolverConfig(**s)
    except ValueError as exc:
        raise ConfigError(f"[solver] {exc}", path=path) from None

    if mode in ("fixed", "free") and vals["profiles"]["file"] is None:
        raise ConfigError(f"mode {mode!r} needs [profiles] file", path=path)
    if mode == "free":
        for sec, key in (("coils", "file"), ("initial", "field")):
            if vals[sec][key] is None:
                raise ConfigError(f"mode 'free' needs [{sec}] {key}", path=path)
    if vals["initial"]["guess"] not in ("estimate", "given"):
        raise ConfigError("[initial] guess must be 'estimate' or 'given'", path=path)
    conv = vals["convergence"]
    if conv["case"] not in ("soloviev", "nonlinear"):
        raise ConfigError("[convergence] case must be 'soloviev' or 'nonlinear'", path=path)
    if conv["boundary_data"] not in ("wall", "exact"):
        raise ConfigError("[convergence] boundary_data must be 'wall' or 'exact'", path=path)
    try:
        ladder = parse_ladder(conv["ladder"])
    except ValueError as exc:
        raise ConfigError(str(exc), path=path) from None

    return RunConfig(
        mode=mode, grid=grid, solver=solver, output=vals["run"]["output"],
        wall=vals["domain"]["wall"], dirichlet=vals["domain"]["dirichlet"],
        profiles=vals["profiles"]["file"], pressure_scale=vals["profiles"]["pressure_scale"],
        profile_order=vals["profiles"]["order"], coils=vals["coils"]["file"],
        target_points=vals["target"]["points"], target_boundary=vals["target"]["boundary"],
        n_control=vals["target"]["m"], initial_field=vals["initial"]["field"],
        resample=vals["initial"]["resample"], initial_guess=vals["initial"]["guess"],
        case=conv["case"], ladder=ladder, boundary_nodes=conv["boundary_nodes"],
        boundary_data=conv["boundary_data"],
        # overrides change the run, so they belong in the hashed text
        source_text=text + "".join(f"\n# override {k} = {v}"
                                   for k, v in sorted((overrides or {}).items())),
    )


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------


def _f(x) -> str:
    """Shortest text that reads back to the same double."""
    return repr(float(x))


def _grid_line(grid: CartesianGrid) -> str:
    return (f"# grid {_f(grid.r_min)} {_f(grid.r_max)} {_f(grid.z_min)} {_f(grid.z_max)} "
            f"{grid.nr} {grid.nz}")


def export_field(path, grid: CartesianGrid, psi, mask=None, normalization=None):
    """Write ``R Z psi mask psibar`` rows (one per grid point, R-major)."""
    psi = np.asarray(psi, dtype=float)
    if psi.shape != grid.shape:
        raise ValueError(f"field shape {psi.shape} does not match grid {grid.shape}")
    mask = np.ones(grid.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    R, Z = grid.mesh()
    lines = [_grid_line(grid)]
    if normalization is not None:
        n = normalization
        xp = n.xpoint if n.xpoint is not None else (float("nan"), float("nan"))
        lines.append(f"# psi_axis {_f(n.psi_axis)} at {_f(n.axis[0])} {_f(n.axis[1])}")
        lines.append(f"# psi_x {_f(n.psi_x)} at {_f(xp[0])} {_f(xp[1])} "
                     f"limited {int(n.limited)}")
        pbar = n.psibar(psi)
    else:
        pbar = np.full(grid.shape, np.nan)
    lines.append("# R Z psi mask psibar")
    for r, z, v, m, b in zip(R.ravel(), Z.ravel(), psi.ravel(), mask.ravel(), pbar.ravel()):
        lines.append(f"{_f(r)} {_f(z)} {_f(v)} {int(m)} {_f(b)}")
    path.write_text("\n".join(lines) + "\n")


def read_field(path):
    """``(grid, psi, mask)`` from a file written by :func:`export_field`."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"field file not found: {path}")
    grid = None
    rows = []
    for n, raw in enumerate(path.read_text().splitlines(), start=1):
        s = raw.strip()
        if s.startswith("# grid"):
            parts = s.split()[2:]
            try:
                grid = CartesianGrid(float(parts[0]), float(parts[1]), float(parts[2]),
                                     float(parts[3]), int(parts[4]), int(parts[5]))
            except (IndexError, ValueError) as exc:
                raise ValueError(f"{path}:{n}: malformed grid header ({exc})") from None
            continue
        s = s.split("#", 1)[0].strip()
        if not s:
            continue
        parts = s.split()
        if len(parts) < 3:
            raise ValueError(f"{path}:{n}: expected at least 'R Z psi'")
        try:
            rows.append([float(parts[2]), float(parts[3]) if len(parts) > 3 else 1.0])
        except ValueError:
            raise ValueError(f"{path}:{n}: malformed number") from None
    if grid is None:
        raise ValueError(f"{path}: missing '# grid' header")
    if len(rows) != grid.size:
        raise ValueError(f"{path}: {len(rows)} values for a {grid.nr}x{grid.nz} grid")
    data = np.array(rows)
    return grid, data[:, 0].reshape(grid.shape), data[:, 1].reshape(grid.shape) != 0


def _same_grid(a: CartesianGrid, b: CartesianGrid) -> bool:
    return (a.nr, a.nz) == (b.nr, b.nz) and np.allclose(
        [a.r_min, a.r_max, a.z_min, a.z_max], [b.r_min, b.r_max, b.z_min, b.z_max],
        rtol=0, atol=1e-12)


def load_initial_field(path, grid: CartesianGrid, resample: bool = True):
    """Field from ``path`` on ``grid``: passed through, or bilinearly resampled."""
    from .elliptic import FluxField

    src_grid, psi, mask = read_field(path)
    if _same_grid(src_grid, grid):
        return FluxField(grid, psi, mask)
    if not resample:
        raise ValueError(f"{path}: grid {src_grid.nr}x{src_grid.nz} differs from the run grid "
                         f"{grid.nr}x{grid.nz} and resampling is disabled")
    logger.info("resampling %s from %dx%d onto %dx%d", path, src_grid.nr, src_grid.nz,
                grid.nr, grid.nz)
    R, Z = grid.mesh()
    vals = src_grid.bilinear(psi, R.ravel(), Z.ravel()).reshape(grid.shape)
    return FluxField(grid, vals, np.ones(grid.shape, dtype=bool))


def difference_field(a, b):
    """Elementwise ``a - b`` of two fields on the same grid."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("fields live on different grids")
    return a - b


# ---------------------------------------------------------------------------
# histories, geometry, manifest
# ---------------------------------------------------------------------------


def export_history(path, records, coil_names=()):
    """One CSV row per iteration record; header only when there are none."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n_cur = max([len(r.currents) for r in records], default=len(coil_names))
    names = list(coil_names) or [f"I{k}" for k in range(n_cur)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["loop", "outer", "iteration", "residual", "alpha", "psi_axis", "psi_x"]
                   + [f"current_{n}" for n in names[:n_cur]])
        for r in records:
            cur = list(r.currents) + [""] * (n_cur - len(r.currents))
            w.writerow([r.loop, r.outer, r.iteration, _f(r.residual), _f(r.alpha),
                        _f(r.psi_axis), _f(r.psi_x)] + [_f(c) if c != "" else ""
                                                        for c in cur])


def read_history(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def export_geometry(path, mesh):
    """Per-point classification, volume fraction, apertures and centroids."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    g = mesh.grid
    summ = mesh.summary()
    lines = [_grid_line(g)]
    lines += [f"# {k} {v}" for k, v in summ.items()]
    lines.append("# kind: 0 exterior, 1 interior, 2 cut, 3 dirichlet")
    lines.append("# i j R Z kind volume_fraction a_west a_east a_south a_north "
                 "centroid_R centroid_Z")
    for i in range(g.nr):
        for j in range(g.nz):
            c = mesh.centroids[i, j]
            lines.append(
                f"{i} {j} {_f(g.r[i])} {_f(g.z[j])} {int(mesh.kind[i, j])} "
                f"{_f(mesh.volume_fraction[i, j])} {_f(mesh.ap_r[i, j])} "
                f"{_f(mesh.ap_r[i + 1, j])} "
                f"{_f(mesh.ap_z[i, j])} {_f(mesh.ap_z[i, j + 1])} {_f(c[0])} {_f(c[1])}"
            )
    path.write_text("\n".join(lines) + "\n")
    f = mesh.facets
    fl = ["# i j mid_R mid_Z normal_R normal_Z length"]
    for k in range(len(f.areas)):
        fl.append(f"{f.cells[k, 0]} {f.cells[k, 1]} {_f(f.midpoints[k, 0])} "
                  f"{_f(f.midpoints[k, 1])} {_f(f.normals_in[k, 0])} {_f(f.normals_in[k, 1])} "
                  f"{_f(f.areas[k])}")
    path.with_name(path.stem + "_facets.txt").write_text("\n".join(fl) + "\n")


def read_geometry_summary(path) -> dict:
    out = {}
    for raw in Path(path).read_text().splitlines():
        if not raw.startswith("# "):
            break
        parts = raw[2:].split()
        if len(parts) == 2:
            try:
                out[parts[0]] = int(parts[1])
            except ValueError:
                out[parts[0]] = parts[1]
    return out


def write_manifest(path, config: RunConfig | None, counts: dict, status: str):
    """``key = value`` record of what ran, with versions and a config hash."""
    import platform

    import scipy

    from . import __version__

    lines = [
        f"package_version = {__version__}",
        f"python = {platform.python_version()}",
        f"numpy = {np.__version__}",
        f"scipy = {scipy.__version__}",
        f"status = {status}",
    ]
    if config is not None:
        lines.insert(0, f"config_sha256 = {config.digest}")
        lines.insert(1, f"mode = {config.mode}")
    lines += [f"{k} = {v}" for k, v in counts.items()]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


def read_manifest(path) -> dict:
    out = {}
    for raw in Path(path).read_text().splitlines():
        s = raw.split("#", 1)[0].strip()
        if "=" in s:
            k, v = (t.strip() for t in s.split("=", 1))
            out[k] = v
    return out
