"""Command-line entry points: micro, macro, cell, compare and probe."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .config import parse_config, serialize_config
from .diagnostics import probe
from .drivers import RunAbortedError, compare_micro_macro, run_macro, run_micro, save_checkpoint, write_run_outputs
from .errors import InvalidArgumentError, SolverError
from .grid import CellGeometry, build_grid
from .homogenize import assemble_effective
from .io import read_raw, write_run_log

log = logging.getLogger("porous_sch")

EXIT_OK, EXIT_INVALID, EXIT_SOLVER = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; validation failures here exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _pair(text: str) -> tuple[float, float]:
    try:
        x, y = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected X,Y, got {text!r}") from None
    return x, y


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="porous-sch", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name, preset in (("micro", "micro"), ("macro", "macro")):
        p = sub.add_parser(name, help=f"run the {name}scale simulation")
        p.add_argument("--config", type=Path, help="flat section.key = value file")
        p.add_argument("--preset", default=preset, choices=["micro", "macro"])
        p.add_argument("--out", type=Path, default=Path("out"))

    p = sub.add_parser("cell", help="solve the periodic cell problems and report effective tensors")
    p.add_argument("--geometry", default="disk", choices=["disk", "slab", "empty"])
    p.add_argument("--radius", type=float, default=0.25)
    p.add_argument("--height", type=float, default=0.5)
    p.add_argument("--orientation", default="x", choices=["x", "y"])
    p.add_argument("--n", type=int, default=128)
    p.add_argument("--corrector", default="on", choices=["on", "off"])
    p.add_argument("--out", type=Path, default=Path("out"))

    p = sub.add_parser("compare", help="micro vs macro sweep over geometric scales")
    p.add_argument("--config", type=Path)
    p.add_argument("--eps", type=_floats, default=[0.2, 0.1, 0.05])
    p.add_argument("--cells-per-period", type=int, default=16)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", type=Path, default=Path("out"))

    p = sub.add_parser("probe", help="interpolate a raw snapshot at a point")
    p.add_argument("--snapshot", type=Path, required=True)
    p.add_argument("--point", type=_pair, required=True)
    p.add_argument("--extent", type=_pair, default=(1.2, 1.0), help="domain size LX,LY of the snapshot")
    return parser


def _cmd_micro(args, argv) -> int:
    cfg = parse_config(args.config, preset=args.preset)
    try:
        result = run_micro(cfg)
    except RunAbortedError as exc:
        args.out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(exc.last_state, args.out / "last_good.npz")
        raise
    write_run_outputs(result, cfg, args.out, " ".join(argv))
    print(f"{len(result.records)} records, {len(result.snapshots)} snapshots -> {args.out}")
    return EXIT_OK


def _cmd_macro(args, argv) -> int:
    cfg = parse_config(args.config, preset=args.preset)
    g = cfg.geometry
    eff = assemble_effective(g.cell_n, cfg.cell_geometry(), corrector=g.corrector, xi_source=g.xi_source)
    result = run_macro(cfg, eff)
    result.warnings.insert(0, f"theta={eff.theta!r} A_eff={eff.A_eff.tolist()} K={None if eff.K is None else eff.K.tolist()}")
    write_run_outputs(result, cfg, args.out, " ".join(argv))
    print(f"{len(result.records)} records, {len(result.snapshots)} snapshots -> {args.out}")
    return EXIT_OK


def _cell_report(eff) -> str:
    lines = [f"geometry = {eff.geometry.describe()}", f"cell_n = {eff.cell_n}", f"theta = {eff.theta!r}"]
    lines.append("A_eff = " + "; ".join(", ".join(repr(float(v)) for v in row) for row in eff.A_eff))
    if eff.K is None:
        lines.append("K = absent")
    else:
        lines.append("K = " + "; ".join(", ".join(repr(float(v)) for v in row) for row in eff.K))
    if eff.xi is not None:
        lines.append(f"xi_flux = {eff.xi.extras['flux']!r}")
    for key, val in sorted(eff.metrics.items()):
        lines.append(f"{key} = {val!r}")
    return "\n".join(lines) + "\n"


def _cmd_cell(args, argv) -> int:
    geom = CellGeometry(args.geometry, args.radius, args.height, args.orientation)
    eff = assemble_effective(args.n, geom, corrector=args.corrector)
    args.out.mkdir(parents=True, exist_ok=True)
    report = _cell_report(eff)
    (args.out / "cell_report.txt").write_text(report, encoding="utf-8")
    write_run_log(args.out / "run.log", " ".join(argv), None)
    print(report, end="")
    return EXIT_OK


def _cmd_compare(args, argv) -> int:
    cfg = parse_config(args.config)
    report = compare_micro_macro(cfg, args.eps, cells_per_period=args.cells_per_period, workers=args.workers)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "convergence.csv").write_text(report.to_text(), encoding="utf-8")
    notes = [f"{k} = {v}" for k, v in report.metadata.items()]
    write_run_log(args.out / "run.log", " ".join(argv), serialize_config(cfg), extra=notes)
    print(report.to_text(), end="")
    return EXIT_OK if not any(r.error for r in report.rows) else EXIT_SOLVER


def _cmd_probe(args, argv) -> int:
    c = np.asarray(read_raw(args.snapshot))
    ny, nx = c.shape
    grid = build_grid(nx, ny, *args.extent)
    pv = probe(grid, args.point, c)
    print(f"{pv.point[0]!r},{pv.point[1]!r},{pv.c!r}")
    return EXIT_OK


COMMANDS = {"micro": _cmd_micro, "macro": _cmd_macro, "cell": _cmd_cell, "compare": _cmd_compare, "probe": _cmd_probe}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args, argv)
    except RunAbortedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER if isinstance(exc.cause, SolverError) else EXIT_INVALID
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (InvalidArgumentError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
