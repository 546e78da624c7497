"""Run artifacts: diagnostics CSV, PGM/raw field snapshots and the run.log header."""

from __future__ import annotations

import math
import struct
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .diagnostics import DiagnosticsRecord, ProbeValue
from .errors import InvalidArgumentError, InvalidStateError

__all__ = [
    "CSV_HEADER",
    "format_number",
    "write_timeseries_csv",
    "read_timeseries_csv",
    "write_field_snapshot",
    "read_raw",
    "read_pgm",
    "write_run_log",
    "MODELING_DECISIONS",
]

RAW_MAGIC = b"SCHF"

MODELING_DECISIONS = (
    "quasi-steady Darcy: the unsteady term of the two-scale momentum equation is dropped at the macroscale",
    "xi flux repair: the xi cell problem uses a constant Gamma flux source*|Y_p|/|Gamma| so the Neumann problem is solvable",
    "corrector mode: A_eff from the periodic diffusion corrector (on) or theta*I (off), see geometry.corrector",
)


def csv_header(n_probes: int = 2) -> str:
    cols = ["t", "E_int", "E_kin", "mass", "length"]
    for k in range(1, n_probes + 1):
        cols += [f"p{k}_c", f"p{k}_u1", f"p{k}_u2"]
    return ",".join(cols)


CSV_HEADER = csv_header(2)


def format_number(x: float) -> str:
    """``d.dddddddddddde<exp>`` with a plain integer exponent, e.g. ``1.250000000000e-3``."""
    x = float(x)
    if not math.isfinite(x):
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    mant, exp = f"{x:.12e}".split("e")
    return f"{mant}e{int(exp)}"


def _row(rec: DiagnosticsRecord, n_probes: int) -> str:
    vals = [rec.t, rec.E_int, rec.E_kin, rec.mass, rec.length]
    for k in range(n_probes):
        pv = rec.probes[k] if k < len(rec.probes) else None
        vals += [pv.c, pv.u1, pv.u2] if pv is not None else [float("nan")] * 3
    return ",".join(format_number(v) for v in vals)


def write_timeseries_csv(records: Sequence[DiagnosticsRecord], path: str | Path, n_probes: int | None = None) -> Path:
    if not records:
        raise InvalidArgumentError("cannot write an empty diagnostics series")
    if n_probes is None:
        n_probes = max(2, max(len(r.probes) for r in records))
    lines = [csv_header(n_probes)] + [_row(r, n_probes) for r in records]
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def read_timeseries_csv(path: str | Path) -> list[DiagnosticsRecord]:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines:
        raise InvalidArgumentError(f"{path}: empty file")
    header = lines[0].split(",")
    n_probes = (len(header) - 5) // 3
    if header != csv_header(n_probes).split(","):
        raise InvalidArgumentError(f"{path}: unexpected header {lines[0]!r}")
    out = []
    for lineno, line in enumerate(lines[1:], start=2):
        vals = [float(v) for v in line.split(",")]
        if len(vals) != len(header):
            raise InvalidArgumentError(f"{path}: line {lineno} has {len(vals)} fields, expected {len(header)}")
        probes = [ProbeValue((math.nan, math.nan), *vals[5 + 3 * k: 8 + 3 * k]) for k in range(n_probes)]
        out.append(DiagnosticsRecord(*vals[:5], probes=probes))
    return out


def _pgm_bytes(f: np.ndarray) -> bytes:
    # round half up: floor(v * 255 + 0.5)
    vals = np.floor(np.clip(f, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    return vals[::-1].tobytes()


def write_field_snapshot(f: np.ndarray, path: str | Path, fmt: str = "raw") -> Path:
    """Write a scalar field as binary PGM (top row = largest x2) or SCHF raw float64."""
    f = np.asarray(f, dtype=float)
    if f.ndim != 2:
        raise InvalidArgumentError(f"snapshot needs a 2-D field, got shape {f.shape}")
    if not np.all(np.isfinite(f)):
        raise InvalidStateError("snapshot field contains non-finite values")
    ny, nx = f.shape
    path = Path(path)
    if fmt == "pgm":
        data = f"P5\n{nx} {ny}\n255\n".encode("ascii") + _pgm_bytes(f)
    elif fmt == "raw":
        data = RAW_MAGIC + struct.pack("<II", nx, ny) + f.astype("<f8").tobytes()
    else:
        raise InvalidArgumentError(f"unknown snapshot format {fmt!r}")
    path.write_bytes(data)
    return path


def read_raw(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != RAW_MAGIC or len(data) < 12:
        raise InvalidArgumentError(f"{path}: not an SCHF raw snapshot")
    nx, ny = struct.unpack("<II", data[4:12])
    body = data[12:]
    if len(body) != 8 * nx * ny:
        raise InvalidArgumentError(f"{path}: expected {8 * nx * ny} payload bytes, found {len(body)}")
    return np.frombuffer(body, dtype="<f8").reshape(ny, nx).astype(float)


def read_pgm(path: str | Path) -> np.ndarray:
    """Return the pixel array in storage order (first row = top of the image)."""
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P5":
        raise InvalidArgumentError(f"{path}: not a binary PGM")
    nx, ny = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(ny, nx)


def write_run_log(
    path: str | Path,
    command: str,
    config_text: str | None,
    extra: Iterable[str] = (),
    decisions: Iterable[str] = MODELING_DECISIONS,
) -> Path:
    lines = [f"porous_sch {__version__}", f"command: {command}", "", "[modeling decisions]"]
    lines += [f"- {d}" for d in decisions]
    if config_text is not None:
        lines += ["", "[resolved config]", config_text.rstrip("\n")]
    extra = list(extra)
    if extra:
        lines += ["", "[notes]"] + list(extra)
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path
