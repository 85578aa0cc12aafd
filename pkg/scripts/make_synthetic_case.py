"""Write the input files for the synthetic free-boundary run in ``configs/``.

Produces the initial field (65x105 grid on the ITER-like box), the
profile table and the shape control points:

    python scripts/make_synthetic_case.py configs/data
"""

import argparse
from pathlib import Path

from cutcellgs.geometry import write_points
from cutcellgs.io import export_field
from cutcellgs.manufactured import FreeBoundaryCase


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("outdir", nargs="?", default="configs/data")
    ap.add_argument("--nr", type=int, default=65)
    ap.add_argument("--nz", type=int, default=105)
    args = ap.parse_args()
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    case = FreeBoundaryCase(nr=args.nr, nz=args.nz)
    setup = case.build()
    export_field(out / "initial_field.txt", setup.mesh.grid, setup.psi_init)
    setup.profiles.to_file(out / "profiles.txt")
    write_points(out / "control_points.txt", setup.target.points, header="R Z")
    setup.coils.to_file(out / "coils.txt")
    print(f"wrote {out}; plasma current {setup.plasma_current / 1e6:.3f} MA")


if __name__ == "__main__":
    main()
