"""Run configuration: flat ``section.key = value`` text format with validated defaults.

Defaults reproduce the published setup: a 128 x 128 grid on [0, 1.2] x [0, 1],
dt = 5e-3 up to T = 25, lambda = 4e-2, eps = 5e-2, mu = 1e-2 and the two
probe points. The ``micro`` preset uses a = 12, b = 2 and the ``macro``
preset a = 10, b = 1.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .errors import InvalidArgumentError
from .grid import CellGeometry, build_grid
from .potential import PhysicalParams

__all__ = ["ConfigError", "SimConfig", "parse_config", "serialize_config", "PRESETS"]


class ConfigError(InvalidArgumentError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        self.key = key
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")


def _opt_float(s: str) -> float | None:
    return None if s.strip().lower() in ("", "auto", "none") else float(s)


def _float_list(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.split(",") if x.strip())


def _str_list(s: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in s.split(",") if x.strip())


def _points(s: str) -> tuple[tuple[float, float], ...]:
    out = []
    for item in s.split(";"):
        if not item.strip():
            continue
        xy = _float_list(item)
        if len(xy) != 2:
            raise ValueError(f"probe point needs two coordinates, got {item.strip()!r}")
        out.append((xy[0], xy[1]))
    return tuple(out)


def _fmt(value: Any) -> str:
    if value is None:
        return "auto"
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return "; ".join(f"{_fmt(p[0])}, {_fmt(p[1])}" for p in value)
        return ", ".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _f(default, conv: Callable[[str], Any] = float):
    return field(default=default, metadata={"conv": conv})


@dataclass(frozen=True)
class GridSection:
    nx: int = _f(128, int)
    ny: int = _f(128, int)
    lx: float = _f(1.2)
    ly: float = _f(1.0)


@dataclass(frozen=True)
class TimeSection:
    dt: float = _f(5e-3)
    t_end: float = _f(25.0)
    record_every: int = _f(1, int)
    snapshot_times: tuple[float, ...] = _f((0.025, 5.0, 10.0, 15.0, 20.0, 25.0), _float_list)


@dataclass(frozen=True)
class ParamsSection:
    a: float = _f(12.0)
    b: float = _f(2.0)
    lam: float = _f(4e-2)
    mu: float = _f(1e-2)
    eps_model: float = _f(5e-2)
    stab: float | None = _f(None, _opt_float)
    p_init: float = _f(0.05)


@dataclass(frozen=True)
class GeometrySection:
    shape: str = _f("disk", str)
    radius: float = _f(0.25)
    height: float = _f(0.5)
    orientation: str = _f("x", str)
    eps_geom: float | None = _f(None, _opt_float)
    cell_n: int = _f(128, int)
    corrector: str = _f("on", str)
    xi_source: float = _f(2.0)


_IC_ALIASES = {"paper-literal": "ramp"}


def _ic_mode(text: str) -> str:
    return _IC_ALIASES.get(text, text)


@dataclass(frozen=True)
class ICSection:
    mode: str = _f("mixed", _ic_mode)
    seed: int = _f(0, int)
    amplitude: float = _f(0.05)


@dataclass(frozen=True)
class SolverSection:
    cg_tol: float = _f(1e-10)
    proj_tol: float = _f(1e-12)
    compat_tol: float = _f(1e-10)


@dataclass(frozen=True)
class DiagnosticsSection:
    length_mode: str = _f("levelset", str)
    level: float = _f(0.5)


@dataclass(frozen=True)
class MacroSection:
    velocity: str = _f("darcy", str)


@dataclass(frozen=True)
class ProbesSection:
    points: tuple[tuple[float, float], ...] = _f(((0.2251, 0.1876), (0.0111, 0.0093)), _points)


@dataclass(frozen=True)
class OutputSection:
    dir: str = _f("out", str)
    formats: tuple[str, ...] = _f(("pgm", "raw"), _str_list)


SECTIONS = {
    "grid": GridSection,
    "time": TimeSection,
    "params": ParamsSection,
    "geometry": GeometrySection,
    "ic": ICSection,
    "solver": SolverSection,
    "diagnostics": DiagnosticsSection,
    "macro": MacroSection,
    "probes": ProbesSection,
    "output": OutputSection,
}
# the config key is ``params.lambda``; ``lambda`` is reserved in Python
KEY_ALIASES = {("params", "lambda"): "lam"}
FIELD_KEYS = {v: k for k, v in KEY_ALIASES.items()}

PRESETS = {
    "micro": {"params.a": "12", "params.b": "2"},
    "macro": {"params.a": "10", "params.b": "1"},
}


@dataclass(frozen=True)
class SimConfig:
    grid: GridSection = field(default_factory=GridSection)
    time: TimeSection = field(default_factory=TimeSection)
    params: ParamsSection = field(default_factory=ParamsSection)
    geometry: GeometrySection = field(default_factory=GeometrySection)
    ic: ICSection = field(default_factory=ICSection)
    solver: SolverSection = field(default_factory=SolverSection)
    diagnostics: DiagnosticsSection = field(default_factory=DiagnosticsSection)
    macro: MacroSection = field(default_factory=MacroSection)
    probes: ProbesSection = field(default_factory=ProbesSection)
    output: OutputSection = field(default_factory=OutputSection)

    def replace(self, **changes: Any) -> "SimConfig":
        """Return a copy with ``"section.key"``-style overrides applied (typed values)."""
        sections = {name: getattr(self, name) for name in SECTIONS}
        for dotted, value in changes.items():
            sec, key = dotted.split(".", 1)
            key = KEY_ALIASES.get((sec, key), key)
            sections[sec] = dataclasses.replace(sections[sec], **{key: value})
        cfg = SimConfig(**sections)
        cfg.validate()
        return cfg

    def physical_params(self) -> PhysicalParams:
        p = self.params
        return PhysicalParams(a=p.a, b=p.b, lam=p.lam, mu=p.mu, eps_model=p.eps_model, stab=p.stab)

    def cell_geometry(self) -> CellGeometry:
        g = self.geometry
        return CellGeometry(g.shape, g.radius, g.height, g.orientation)

    @property
    def eps_geom(self) -> float:
        return self.params.eps_model if self.geometry.eps_geom is None else self.geometry.eps_geom

    @property
    def n_steps(self) -> int:
        return int(round(self.time.t_end / self.time.dt))

    def validate(self) -> None:
        def check(ok: bool, key: str, msg: str):
            if not ok:
                raise ConfigError(f"{key}: {msg}", key=key)

        g, t, s = self.grid, self.time, self.solver
        check(g.nx >= 1, "grid.nx", "must be >= 1")
        check(g.ny >= 1, "grid.ny", "must be >= 1")
        check(g.lx > 0, "grid.lx", "must be positive")
        check(g.ly > 0, "grid.ly", "must be positive")
        check(t.dt > 0, "time.dt", "must be positive")
        check(t.t_end >= t.dt, "time.t_end", "must be >= time.dt")
        check(t.record_every >= 1, "time.record_every", "must be >= 1")
        for ts in t.snapshot_times:
            check(0.0 <= ts <= t.t_end, "time.snapshot_times", f"{ts} outside [0, t_end]")
        for name in ("cg_tol", "proj_tol", "compat_tol"):
            check(getattr(s, name) > 0, f"solver.{name}", "must be positive")
        for name in ("a", "b", "lam", "mu", "eps_model"):
            check(getattr(self.params, name) > 0, f"params.{FIELD_KEYS.get(name, ('', name))[1]}", "must be positive")
        check(self.params.stab is None or self.params.stab >= 0, "params.stab", "must be non-negative")
        check(self.geometry.eps_geom is None or self.geometry.eps_geom > 0, "geometry.eps_geom", "must be positive")
        check(self.geometry.corrector in ("on", "off"), "geometry.corrector", "must be 'on' or 'off'")
        check(self.geometry.cell_n >= 1, "geometry.cell_n", "must be >= 1")
        check(self.ic.mode in ("mixed", "ramp", "smooth"), "ic.mode", "must be mixed, ramp or smooth")
        check(self.diagnostics.length_mode in ("levelset", "energy_ratio"), "diagnostics.length_mode",
              "must be levelset or energy_ratio")
        check(self.macro.velocity in ("darcy", "off"), "macro.velocity", "must be darcy or off")
        for fmt in self.output.formats:
            check(fmt in ("pgm", "raw"), "output.formats", f"unknown format {fmt!r}")
        try:
            self.cell_geometry()
        except InvalidArgumentError as exc:
            raise ConfigError(f"geometry: {exc}", key="geometry.shape") from exc
        try:
            build_grid(g.nx, g.ny, g.lx, g.ly)
        except InvalidArgumentError as exc:
            raise ConfigError(str(exc), key="grid") from exc


def _known_keys() -> dict[str, tuple[str, str, Callable]]:
    keys = {}
    for sec, cls in SECTIONS.items():
        for f in dataclasses.fields(cls):
            alias = FIELD_KEYS.get(f.name)
            name = alias[1] if alias and alias[0] == sec else f.name
            keys[f"{sec}.{name}"] = (sec, f.name, f.metadata["conv"])
    return keys


def parse_config(source: str | Path | None = None, preset: str = "micro") -> SimConfig:
    """Parse a config file path or text. Unknown keys and malformed lines are errors."""
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}")
    if source is None:
        text = ""
    elif isinstance(source, Path) or ("\n" not in str(source) and "=" not in str(source) and str(source).strip()):
        try:
            text = Path(source).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {source}: {exc}") from exc
    else:
        text = str(source)
    keys = _known_keys()
    raw: dict[str, tuple[str, int | None]] = {k: (v, None) for k, v in PRESETS[preset].items()}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"expected 'section.key = value', got {stripped!r}", line=lineno)
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key not in keys:
            raise ConfigError(f"unknown key {key!r}", key=key, line=lineno)
        raw[key] = (value, lineno)
    sections: dict[str, dict[str, Any]] = {sec: {} for sec in SECTIONS}
    for key, (value, lineno) in raw.items():
        sec, fname, conv = keys[key]
        try:
            sections[sec][fname] = conv(value)
        except ValueError as exc:
            raise ConfigError(f"{key}: cannot parse {value!r} ({exc})", key=key, line=lineno) from exc
    cfg = SimConfig(**{sec: SECTIONS[sec](**vals) for sec, vals in sections.items()})
    cfg.validate()
    return cfg


def serialize_config(cfg: SimConfig) -> str:
    lines = []
    for sec in SECTIONS:
        obj = getattr(cfg, sec)
        for f in dataclasses.fields(obj):
            name = "lambda" if (sec, f.name) == ("params", "lam") else f.name
            lines.append(f"{sec}.{name} = {_fmt(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"
