"""Full runs: the microscale simulation, the homogenised macroscale simulation and the epsilon sweep."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cahn_hilliard import CHState, CHStepper
from .config import SimConfig, serialize_config
from .diagnostics import DiagnosticsRecord, interface_length, kinetic_energy_and_mass, probe, surface_tension
from .errors import InvalidArgumentError, SolverError
from .fields import (
    BoundarySpec,
    FactorizedInverse,
    conjugate_gradient,
    divergence,
    l2_norm,
    laplacian,
)
from .grid import Grid2D, PoreMask, build_grid, build_pore_mask
from .homogenize import EffectiveTensors, assemble_effective
from .io import write_field_snapshot, write_run_log, write_timeseries_csv
from .potential import bulk_force, total_free_energy
from .stokes import Projector, StokesState, StokesStepper, capillary_force

__all__ = [
    "MicroState",
    "MacroState",
    "RunResult",
    "RunAbortedError",
    "ConvergenceRow",
    "ConvergenceReport",
    "micro_setup",
    "initial_micro_state",
    "run_micro",
    "run_macro",
    "compare_micro_macro",
    "save_checkpoint",
    "load_checkpoint",
    "write_run_outputs",
]

log = logging.getLogger(__name__)


@dataclass
class MicroState:
    step: int
    t: float
    c: np.ndarray
    w: np.ndarray
    u: np.ndarray
    p: np.ndarray


@dataclass
class MacroState:
    step: int
    t: float
    c: np.ndarray
    w_bar: np.ndarray
    u_bar: np.ndarray
    p: np.ndarray


@dataclass
class RunResult:
    records: list[DiagnosticsRecord]
    final: MicroState | MacroState
    snapshots: dict[float, np.ndarray] = field(default_factory=dict)
    div_norms: list[float] = field(default_factory=list)
    budget: list[float] = field(default_factory=list)
    samples: dict[int, np.ndarray] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    info: dict = field(default_factory=dict)


class RunAbortedError(RuntimeError):
    """A time step failed; carries the step index and the last good state."""

    def __init__(self, step: int, last_state, cause: BaseException):
        self.step = step
        self.last_state = last_state
        self.cause = cause
        super().__init__(f"run aborted at step {step}: {type(cause).__name__}: {cause}")


@dataclass
class ConvergenceRow:
    epsilon: float
    l2_space_time: float
    final_error: float
    micro_grid: tuple[int, int] = (0, 0)
    error: str | None = None


@dataclass
class ConvergenceReport:
    rows: list[ConvergenceRow]
    metadata: dict = field(default_factory=dict)

    def completed(self) -> list[ConvergenceRow]:
        return [r for r in self.rows if r.error is None]

    def strictly_decreasing(self) -> bool:
        errs = [r.l2_space_time for r in self.completed()]
        return len(errs) == len(self.rows) and all(b < a for a, b in zip(errs, errs[1:]))

    def to_text(self) -> str:
        lines = ["epsilon,l2_space_time,final_error,micro_nx,micro_ny,status"]
        for r in self.rows:
            status = "ok" if r.error is None else f"failed: {r.error}"
            lines.append(
                f"{r.epsilon!r},{r.l2_space_time:.12e},{r.final_error:.12e},{r.micro_grid[0]},{r.micro_grid[1]},{status}"
            )
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- set-up


def micro_setup(config: SimConfig) -> tuple[Grid2D, PoreMask, BoundarySpec]:
    g = config.grid
    grid = build_grid(g.nx, g.ny, g.lx, g.ly)
    mask = build_pore_mask(grid, config.cell_geometry(), config.eps_geom)
    return grid, mask, BoundarySpec.from_mask(mask)


def _initial_c(config: SimConfig, grid: Grid2D) -> np.ndarray:
    ic = config.ic
    X1, _ = grid.centers()
    if ic.mode == "mixed":
        rng = np.random.default_rng(ic.seed)
        return 0.5 + ic.amplitude * rng.uniform(-1.0, 1.0, size=grid.shape)
    if ic.mode == "ramp":
        return X1 + 3.0
    if ic.mode == "smooth":
        return 0.5 + ic.amplitude * np.cos(np.pi * X1 / grid.lx)
    raise InvalidArgumentError(f"unknown initial condition {ic.mode!r}")


def _initial_w(c: np.ndarray, grid: Grid2D, config: SimConfig, bc: BoundarySpec, theta=1.0, diffuse=None):
    params = config.physical_params()
    diffuse = diffuse or (lambda f: laplacian(f, grid, bc))
    w = bulk_force(c, params.b) - (params.a / theta) * diffuse(c)
    w[~bc.active(grid.shape)] = 0.0
    return w


def initial_micro_state(config: SimConfig, grid: Grid2D, bc: BoundarySpec, projector: Projector) -> MicroState:
    act = bc.active(grid.shape)
    c = _initial_c(config, grid)
    w = _initial_w(c, grid, config, bc)
    if config.ic.mode == "smooth":
        u = np.zeros((2,) + grid.shape)
    else:
        u0 = np.where(act, 1.0, 0.0) * np.ones((2,) + grid.shape)
        u = projector(u0)[0]
    p = np.where(act, config.params.p_init, 0.0)
    return MicroState(0, 0.0, c, w, u, p)


def _snapshot_steps(config: SimConfig) -> dict[int, float]:
    dt = config.time.dt
    return {int(round(ts / dt)): ts for ts in config.time.snapshot_times}


def _length(c, grid, mask, config, e_int) -> float:
    if config.diagnostics.length_mode == "energy_ratio":
        p = config.params
        return e_int / surface_tension(p.a, p.b)
    return interface_length(c, grid, config.diagnostics.level, mask)


# ---------------------------------------------------------------- micro


def run_micro(
    config: SimConfig,
    initial_state: MicroState | None = None,
    *,
    sample_every: int | None = None,
) -> RunResult:
    """March the microscale system to ``config.time.t_end``.

    Per step: Cahn-Hilliard update with the current velocity (which also
    yields the new chemical potential), capillary force from the updated
    ``(c, w)``, then the Stokes predictor-projection. ``initial_state``
    resumes from a checkpoint; ``sample_every`` keeps every n-th ``c`` field.
    """
    grid, mask, bc = micro_setup(config)
    params = config.physical_params()
    dt = config.time.dt
    act = bc.active(grid.shape)
    solver = config.solver
    ch = CHStepper(grid, params, dt, bc, tol=solver.cg_tol)
    stokes = StokesStepper(grid, params, dt, bc, tol=solver.proj_tol, compat_tol=solver.compat_tol)
    state = initial_state or initial_micro_state(config, grid, bc, stokes.projector)
    result = RunResult(records=[], final=state)
    if not stokes.stable:
        msg = f"explicit viscous step unstable: dt*nu/h^2 = {stokes.diffusion_number:.3g} > 0.25"
        result.warnings.append(msg)
        log.warning(msg)
    snaps = _snapshot_steps(config)
    n_steps = config.n_steps
    every = config.time.record_every

    def observe(s: MicroState, div_norm: float):
        if s.step % every == 0 or s.step == n_steps:
            e_free = total_free_energy(s.c, grid, params, mask)
            e_kin, mass = kinetic_energy_and_mass(s.u, s.c, grid, mask)
            probes = [probe(grid, pt, s.c, s.u, mask) for pt in config.probes.points]
            result.records.append(
                DiagnosticsRecord(s.t, e_free, e_kin, mass, _length(s.c, grid, mask, config, e_free), probes)
            )
            result.div_norms.append(div_norm)
            result.budget.append(e_kin + params.lam * e_free)
        if s.step in snaps:
            result.snapshots[snaps[s.step]] = s.c.copy()
        if sample_every and (s.step % sample_every == 0 or s.step == n_steps):
            result.samples[s.step] = s.c.copy()

    if initial_state is None:
        observe(state, l2_norm(divergence(state.u, grid, stokes.dbc), grid, act))
    for k in range(state.step + 1, n_steps + 1):
        try:
            ch_new, _ = ch.step(CHState(state.t, state.c, state.w), state.u)
            force = capillary_force(ch_new.c, ch_new.w, grid, params, bc)
            st = stokes.step(StokesState(state.t, state.u, state.p), force)
        except (SolverError, ValueError, FloatingPointError) as exc:
            raise RunAbortedError(k, state, exc) from exc
        state = MicroState(k, k * dt, ch_new.c, ch_new.w, st.u, st.p)
        observe(state, st.report["div_norm"])
    result.final = state
    return result


# ---------------------------------------------------------------- macro


class DarcySolver:
    """Face-based Darcy flux ``u = -kappa K (grad p + g)`` with ``div u = 0`` and no flux through walls.

    Only the diagonal of ``K`` enters; faces carry ``K11`` (x1) and ``K22`` (x2).
    """

    def __init__(self, grid: Grid2D, K: np.ndarray, kappa: float, tol: float = 1e-12):
        self.grid = grid
        self.k1, self.k2 = float(K[0, 0]), float(K[1, 1])
        if min(self.k1, self.k2) <= 0.0:
            raise SolverError(f"permeability is singular (K11={self.k1:.3e}, K22={self.k2:.3e})", float("nan"), 0)
        self.kappa = kappa
        self.tol = tol
        self.bc = BoundarySpec()
        shape = grid.shape
        self.apply = lambda f: -laplacian(f, grid, self.bc, weights=(self.k1, self.k2))
        self.precond = FactorizedInverse(self.apply, shape, np.ones(shape, bool), 1, shift=1e-10, remove_mean=True)

    def _face_div(self, ge: np.ndarray, gn: np.ndarray) -> np.ndarray:
        """Divergence of east/north face fluxes (last face on each axis is a wall)."""
        gw = np.zeros_like(ge)
        gw[:, 1:] = ge[:, :-1]
        gs = np.zeros_like(gn)
        gs[1:, :] = gn[:-1, :]
        return (ge - gw) / self.grid.dx + (gn - gs) / self.grid.dy

    def solve(self, c: np.ndarray, w: np.ndarray, coupling: float, p0: np.ndarray | None = None):
        """Return ``(p, (ue, un), residual)`` for forcing ``g = coupling * c grad w``."""
        dx, dy = self.grid.dx, self.grid.dy
        ge = np.zeros_like(c)
        gn = np.zeros_like(c)
        ge[:, :-1] = coupling * 0.5 * (c[:, 1:] + c[:, :-1]) * (w[:, 1:] - w[:, :-1]) / dx
        gn[:-1, :] = coupling * 0.5 * (c[1:, :] + c[:-1, :]) * (w[1:, :] - w[:-1, :]) / dy
        rhs = self._face_div(self.k1 * ge, self.k2 * gn)
        rhs -= rhs.mean()
        # div(K grad p) = -div(K g)  <=>  (-L_K) p = div(K g)
        p, _ = conjugate_gradient(
            self.apply, rhs, p0, tol=0.0, atol=self.tol * max(np.linalg.norm(rhs), 1e-300), precond=self.precond
        )
        p -= p.mean()
        ue = np.zeros_like(c)
        un = np.zeros_like(c)
        ue[:, :-1] = -self.kappa * self.k1 * ((p[:, 1:] - p[:, :-1]) / dx + ge[:, :-1])
        un[:-1, :] = -self.kappa * self.k2 * ((p[1:, :] - p[:-1, :]) / dy + gn[:-1, :])
        residual = l2_norm(self._face_div(ue, un), self.grid)
        return p, (ue, un), residual


def _cell_velocity(ue: np.ndarray, un: np.ndarray) -> np.ndarray:
    u = np.zeros((2,) + ue.shape)
    u[0] = 0.5 * ue
    u[0][:, 1:] += 0.5 * ue[:, :-1]
    u[1] = 0.5 * un
    u[1][1:, :] += 0.5 * un[:-1, :]
    return u


def macro_diffusion(grid: Grid2D, eff: EffectiveTensors, bc: BoundarySpec | None = None):
    bc = bc or BoundarySpec()
    weights = (float(eff.A_eff[0, 0]), float(eff.A_eff[1, 1]))
    return lambda f: laplacian(f, grid, bc, weights=weights)


def run_macro(
    config: SimConfig,
    eff: EffectiveTensors,
    *,
    velocity: bool | None = None,
    sample_every: int | None = None,
) -> RunResult:
    """March the homogenised model on the unmasked grid.

    ``theta dc/dt + eps u.grad c = eps^2 div(A grad w)``,
    ``w = f(c) - (a/theta) div(A grad c)`` and the quasi-steady Darcy flux
    ``u = -(eps_geom^2 / (eps^2 mu)) K (grad p + eps lambda c grad w)``.
    ``velocity=False`` (or ``macro.velocity = off``) freezes ``u = 0``.
    """
    g = config.grid
    grid = build_grid(g.nx, g.ny, g.lx, g.ly)
    params = config.physical_params()
    dt = config.time.dt
    bc = BoundarySpec()
    theta = float(eff.theta)
    if theta <= 0.0:
        raise SolverError("porosity is zero; the macroscale system is singular", float("nan"), 0)
    result = RunResult(records=[], final=None)
    off_diag = abs(float(eff.A_eff[0, 1]))
    if off_diag > 1e-8 * max(abs(float(eff.A_eff[0, 0])), 1e-300):
        result.warnings.append(f"A_eff off-diagonal {off_diag:.3e} dropped by the axis-aligned macro stencil")
    diffuse = macro_diffusion(grid, eff, bc)
    ch = CHStepper(grid, params, dt, bc, tol=config.solver.cg_tol, theta=theta, diffusion=diffuse)
    if velocity is None:
        velocity = config.macro.velocity == "darcy"
    darcy = None
    if velocity and eff.K is not None:
        kappa = config.eps_geom**2 / (params.eps_model**2 * params.mu)
        darcy = DarcySolver(grid, eff.K, kappa, tol=config.solver.proj_tol)
        if abs(float(eff.K[0, 1])) > 1e-8 * float(eff.K[0, 0]):
            result.warnings.append(f"K off-diagonal {float(eff.K[0, 1]):.3e} dropped by the face-based Darcy solve")
    coupling = params.eps_model * params.lam
    c = _initial_c(config, grid)
    w = _initial_w(c, grid, config, bc, theta, diffuse)
    zero = np.zeros((2,) + grid.shape)
    state = MacroState(0, 0.0, c, w, zero, np.full(grid.shape, config.params.p_init))
    snaps = _snapshot_steps(config)
    n_steps = config.n_steps
    every = config.time.record_every
    darcy_res: list[float] = []

    def observe(s: MacroState, div_norm: float):
        if s.step % every == 0 or s.step == n_steps:
            e_free = ch.energy(s.c)
            e_kin, mass = kinetic_energy_and_mass(s.u_bar, s.c, grid, None, weight=theta)
            probes = [probe(grid, pt, s.c, s.u_bar) for pt in config.probes.points]
            result.records.append(
                DiagnosticsRecord(s.t, e_free, e_kin, mass, _length(s.c, grid, None, config, e_free), probes)
            )
            result.div_norms.append(div_norm)
            result.budget.append(e_kin + params.lam * e_free)
        if s.step in snaps:
            result.snapshots[snaps[s.step]] = s.c.copy()
        if sample_every and (s.step % sample_every == 0 or s.step == n_steps):
            result.samples[s.step] = s.c.copy()

    observe(state, 0.0)
    p_prev = None
    for k in range(1, n_steps + 1):
        try:
            faces = None
            u_bar, p, res = zero, state.p, 0.0
            if darcy is not None:
                p, faces, res = darcy.solve(state.c, state.w_bar, coupling, p_prev)
                p_prev = p
                u_bar = _cell_velocity(*faces)
                darcy_res.append(res)
            ch_new, _ = ch.step(CHState(state.t, state.c, state.w_bar), faces=faces)
        except (SolverError, ValueError, FloatingPointError) as exc:
            raise RunAbortedError(k, state, exc) from exc
        state = MacroState(k, k * dt, ch_new.c, ch_new.w, u_bar, p)
        observe(state, res)
    result.final = state
    result.info["darcy_residual_max"] = max(darcy_res) if darcy_res else 0.0
    result.info["theta"] = theta
    return result


# ---------------------------------------------------------------- checkpoints and output


def save_checkpoint(state: MicroState, path: str | Path) -> Path:
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez(fh, step=state.step, t=state.t, c=state.c, w=state.w, u=state.u, p=state.p)
    return path


def load_checkpoint(path: str | Path) -> MicroState:
    with np.load(path) as d:
        return MicroState(int(d["step"]), float(d["t"]), d["c"].copy(), d["w"].copy(), d["u"].copy(), d["p"].copy())


def write_run_outputs(result: RunResult, config: SimConfig, out_dir: str | Path, command: str) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_run_log(out / "run.log", command, serialize_config(config), extra=result.warnings)
    write_timeseries_csv(result.records, out / "timeseries.csv")
    for ts, c in sorted(result.snapshots.items()):
        for fmt in config.output.formats:
            write_field_snapshot(c, out / f"c_t{ts:g}.{fmt}", fmt)
    return out


# ---------------------------------------------------------------- epsilon sweep


def _cells(length: float, eps: float, what: str) -> int:
    n = length / eps
    if abs(n - round(n)) > 1e-9 * n:
        raise InvalidArgumentError(f"{what} = {length} is not a whole number of cells of size {eps}")
    return int(round(n))


def _block_mean(f: np.ndarray, ny: int, nx: int, weight: np.ndarray | None = None) -> np.ndarray:
    by, bx = f.shape[0] // ny, f.shape[1] // nx
    if weight is None:
        return f.reshape(ny, by, nx, bx).mean(axis=(1, 3))
    wsum = weight.reshape(ny, by, nx, bx).sum(axis=(1, 3))
    return (f * weight).reshape(ny, by, nx, bx).sum(axis=(1, 3)) / wsum


def _micro_for_eps(args):
    config, eps, cpp, sample_every = args
    nx = cpp * _cells(config.grid.lx, eps, "lx")
    ny = cpp * _cells(config.grid.ly, eps, "ly")
    cfg = config.replace(**{"grid.nx": nx, "grid.ny": ny, "geometry.eps_geom": eps})
    res = run_micro(cfg, sample_every=sample_every)
    grid, mask, _ = micro_setup(cfg)
    n_cx, n_cy = _cells(cfg.grid.lx, eps, "lx"), _cells(cfg.grid.ly, eps, "ly")
    w = mask.pore.astype(float)
    averaged = {k: _block_mean(c, n_cy, n_cx, w) for k, c in res.samples.items()}
    return (nx, ny), averaged


def compare_micro_macro(
    base_config: SimConfig,
    eps_list,
    *,
    cells_per_period: int = 16,
    macro_cells_per_min_eps: int = 8,
    n_samples: int = 50,
    workers: int = 1,
    eff: EffectiveTensors | None = None,
) -> ConvergenceReport:
    """Run the micro model for each ``eps`` and compare pore-averaged ``c`` with one macro run.

    ``eps`` is the geometric period; the model parameter ``eps_model`` stays
    fixed, so the macro flux factor ``eps^2`` vanishes in the limit and the
    macro run uses ``u = 0``. Both scales start from the smooth initial
    condition. Errors are L2 norms over the domain of the per-eps-cell
    difference: space-time (rectangle rule over the sample times) and final.
    """
    eps_list = [float(e) for e in eps_list]
    if not eps_list:
        raise InvalidArgumentError("eps_list is empty")
    if any(e <= 0 for e in eps_list) or any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise InvalidArgumentError(f"eps_list must be positive and strictly decreasing, got {eps_list}")
    if cells_per_period < 8:
        raise InvalidArgumentError("micro grid needs at least 8 cells per period")
    config = base_config.replace(**{"ic.mode": "smooth"})
    lx, ly = config.grid.lx, config.grid.ly
    eps_min = eps_list[-1]
    n_min_x, n_min_y = _cells(lx, eps_min, "lx"), _cells(ly, eps_min, "ly")
    for e in eps_list:
        if n_min_x % _cells(lx, e, "lx") or n_min_y % _cells(ly, e, "ly"):
            raise InvalidArgumentError(f"eps cell {e} does not nest in the finest eps cell {eps_min}")
    geom = config.cell_geometry()
    if eff is None:
        eff = assemble_effective(
            cells_per_period, geom, corrector=config.geometry.corrector,
            xi_source=config.geometry.xi_source, allow_coarse=True,
        )
    mnx, mny = macro_cells_per_min_eps * n_min_x, macro_cells_per_min_eps * n_min_y
    macro_cfg = config.replace(**{"grid.nx": mnx, "grid.ny": mny})
    sample_every = max(1, config.n_steps // n_samples)
    macro = run_macro(macro_cfg, eff, velocity=False, sample_every=sample_every)
    dt = config.time.dt
    meta = {
        "geometry": geom.describe(),
        "cells_per_period": cells_per_period,
        "macro_grid": (mnx, mny),
        "theta": eff.theta,
        "A_eff": eff.A_eff.tolist(),
        "eps_model": config.params.eps_model,
        "a": config.params.a,
        "b": config.params.b,
        "t_end": config.time.t_end,
        "sample_dt": sample_every * dt,
        "macro_norm": 0.0,
    }
    jobs = [(config, e, cells_per_period, sample_every) for e in eps_list]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_micro_for_eps, j) for j in jobs]
            outcomes = []
            for fut in futures:
                try:
                    outcomes.append(fut.result())
                except Exception as exc:  # noqa: BLE001 - recorded per eps
                    outcomes.append(exc)
    else:
        outcomes = []
        for j in jobs:
            try:
                outcomes.append(_micro_for_eps(j))
            except Exception as exc:  # noqa: BLE001 - recorded per eps
                outcomes.append(exc)
    rows = []
    steps = sorted(macro.samples)
    norm_sq = 0.0
    for e, out in zip(eps_list, outcomes):
        if isinstance(out, Exception):
            log.error("micro run for eps=%g failed: %s", e, out)
            rows.append(ConvergenceRow(e, math.nan, math.nan, error=f"{type(out).__name__}: {out}"))
            continue
        grid_xy, averaged = out
        n_cx, n_cy = _cells(lx, e, "lx"), _cells(ly, e, "ly")
        total = 0.0
        norm_sq = 0.0
        err_t = 0.0
        for k in steps:
            m = _block_mean(macro.samples[k], n_cy, n_cx)
            err_t = math.sqrt(float(np.sum((averaged[k] - m) ** 2)) * e * e)
            total += err_t**2 * sample_every * dt
            norm_sq += float(np.sum(m**2)) * e * e * sample_every * dt
        rows.append(ConvergenceRow(e, math.sqrt(total), err_t, grid_xy))
        meta["macro_norm"] = math.sqrt(norm_sq)
    return ConvergenceReport(rows, meta)
