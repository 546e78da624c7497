"""Acceptance gate: one test (and one PASS/FAIL line) per criterion."""

import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_RESULTS
from porous_sch.config import parse_config
from porous_sch.diagnostics import DiagnosticsRecord, ProbeValue
from porous_sch.drivers import compare_micro_macro, micro_setup, run_macro, run_micro, write_run_outputs
from porous_sch.errors import CompatibilityError
from porous_sch.fields import BoundarySpec, gradient, l2_norm, laplacian, solve_poisson_neumann
from porous_sch.grid import CellGeometry, build_grid
from porous_sch.homogenize import assemble_effective, cell_grid, solve_xi
from porous_sch.io import read_pgm, read_raw, read_timeseries_csv, write_field_snapshot, write_timeseries_csv
from porous_sch.potential import bulk_energy, bulk_force, bulk_force_deriv
from porous_sch.stokes import Projector, StokesState, StokesStepper

LX, LY = 1.2, 1.0
DISK = CellGeometry("disk", 0.25)


def report(criterion: int, title: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {title} -- {detail}"
    ACCEPTANCE_RESULTS.append(line)
    print(line)
    assert ok, line


# ---------------------------------------------------------------- 1


def _operator_errors(n):
    g = build_grid(n, n, LX, LY)
    X1, X2 = g.centers()
    bc = BoundarySpec()
    k = 2 * np.pi / LX
    grad_err = np.abs(gradient(np.sin(k * X1), g, bc)[0] - k * np.cos(k * X1))[1:-1, 1:-1].max()
    kx, ky = np.pi / LX, np.pi / LY
    f = np.cos(kx * X1) * np.cos(ky * X2)
    lap_err = np.abs(laplacian(f, g, bc) + (kx**2 + ky**2) * f).max()
    phi, _ = solve_poisson_neumann(-(kx**2 + ky**2) * f, g, bc, tol=1e-13)
    poisson_err = np.abs(phi - f).max()
    return g.dx, grad_err, lap_err, poisson_err


def test_criterion_1_operator_order():
    t0 = time.perf_counter()
    rows = [_operator_errors(n) for n in (64, 128, 256)]
    h = np.array([r[0] for r in rows])
    grad = np.array([r[1] for r in rows])
    lap = np.array([r[2] for r in rows])
    pois = np.array([r[3] for r in rows])
    ratios = list(grad[:-1] / grad[1:]) + list(lap[:-1] / lap[1:])
    order = np.polyfit(np.log(h), np.log(pois), 1)[0]
    C = (pois / h**2).max()
    elapsed = time.perf_counter() - t0
    ok = all(3.2 <= r <= 4.8 for r in ratios) and order >= 1.9 and np.all(pois <= C * h**2) and elapsed < 60
    report(1, "operator order", ok,
           f"ratios {', '.join(f'{r:.3f}' for r in ratios)}; Poisson order {order:.3f}; {elapsed:.1f}s")


# ---------------------------------------------------------------- 2


def test_criterion_2_potential_identities():
    rng = np.random.default_rng(2024)
    xs = rng.uniform(-1.0, 2.0, 100)
    h = 1e-5
    worst = 0.0
    for b in (1.0, 2.0):
        fd = (bulk_energy(xs + h, b) - bulk_energy(xs - h, b)) / (2 * h)
        fd2 = (bulk_force(xs + h, b) - bulk_force(xs - h, b)) / (2 * h)
        worst = max(worst, np.max(np.abs(fd - bulk_force(xs, b)) / np.maximum(np.abs(bulk_force(xs, b)), 1e-2)))
        worst = max(worst, np.max(np.abs(fd2 - bulk_force_deriv(xs, b)) / np.maximum(np.abs(bulk_force_deriv(xs, b)), 1e-2)))
    exact_half = all(bulk_energy(0.5, b) == b for b in (1.0, 2.0, 3.0))
    roots = max(abs(bulk_force(x, b)) for x in (0.0, 0.5, 1.0) for b in (1.0, 2.0))
    ok = worst <= 1e-6 and exact_half and roots <= 1e-14
    report(2, "potential identities", ok, f"max FD rel err {worst:.2e}; F(0.5)=b exact {exact_half}; max |f(root)| {roots:.1e}")


# ---------------------------------------------------------------- 3 and 4


@pytest.fixture(scope="module")
def default_micro_run():
    cfg = parse_config("")  # published micro preset, mixed IC, seed 0
    t0 = time.perf_counter()
    res = run_micro(cfg)
    return cfg, res, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_3_conservation_and_stability(default_micro_run):
    cfg, res, elapsed = default_micro_run
    assert cfg.n_steps == 5000
    mass = np.array([r.mass for r in res.records])
    drift = np.abs(mass - mass[0]).max() / abs(mass[0])
    div_max = max(res.div_norms)
    e = np.array([r.E_int for r in res.records])
    start = cfg.n_steps // 100
    rises = np.diff(e[start:])
    # non-increasing up to floating-point round-off of the energy sum
    worst_rise = float(rises.max() / np.abs(e[start:]).max())
    t = np.array([r.t for r in res.records])
    length = np.array([r.length for r in res.records])
    l_half = length[np.argmin(np.abs(t - 0.5))]
    l_end = length[-1]
    ok = drift <= 1e-8 and div_max <= 1e-8 and worst_rise <= 1e-12 and l_end < l_half and len(res.records) == 5001
    report(3, "conservation and stability", ok,
           f"mass drift {drift:.2e}; max div {div_max:.2e}; worst rel energy rise {worst_rise:.1e}; "
           f"length(0.5)={l_half:.4f} length(25)={l_end:.4f}; {elapsed:.0f}s")


@pytest.mark.slow
def test_criterion_4_steady_state_probes(default_micro_run):
    cfg, res, _ = default_micro_run
    c = np.array([[p.c for p in r.probes] for r in res.records])
    tail = c[int(0.9 * (len(c) - 1)):]
    rel = np.abs(tail - tail[-1]).max(axis=0) / np.abs(tail[-1])
    ok = bool(np.all(rel <= 1e-3))
    report(4, "steady state at probes", ok, f"relative change over last 10%: {rel[0]:.2e}, {rel[1]:.2e}")


# ---------------------------------------------------------------- 5


def test_criterion_5_cell_oracles():
    t0 = time.perf_counter()
    empty = assemble_effective(128, CellGeometry("empty"))
    slab = assemble_effective(128, CellGeometry("slab", height=0.5))
    disk = assemble_effective(128, DISK)
    elapsed = time.perf_counter() - t0
    a_err = np.abs(empty.A_eff - np.eye(2)).max()
    k_slab = slab.K[0, 0]
    k_rel = abs(k_slab - 0.5**3 / 12) / (0.5**3 / 12)
    theta_ref = 1 - math.pi / 16
    theta_rel = abs(disk.theta - theta_ref) / theta_ref

    def aniso(T):
        return max(abs(T[0, 1]) / T[0, 0], abs(T[0, 0] - T[1, 1]) / T[0, 0])

    ok = (
        a_err <= 1e-10 and empty.theta == 1.0 and slab.theta == 0.5 and k_rel <= 0.05
        and theta_rel <= 0.01 and aniso(disk.A_eff) <= 0.01 and aniso(disk.K) <= 0.01 and elapsed < 300
    )
    report(5, "cell-problem oracles", ok,
           f"empty |A-I| {a_err:.1e}; slab theta {slab.theta}, K11 {k_slab:.6f} ({k_rel:.2%}); "
           f"disk theta {disk.theta:.5f} ({theta_rel:.2%}), A aniso {aniso(disk.A_eff):.1e}, "
           f"K aniso {aniso(disk.K):.1e}; {elapsed:.1f}s")


# ---------------------------------------------------------------- 6


def test_criterion_6_xi_consistency():
    xi = solve_xi(cell_grid(128), DISK)
    f = np.where(xi.pore, xi.field, 0.0)
    sym = max(np.abs(f - f[:, ::-1]).max(), np.abs(f - f[::-1, :]).max(), np.abs(f - f.T).max())
    identity = xi.extras["divergence_identity_defect"]
    try:
        solve_xi(cell_grid(32), CellGeometry("empty"))
        empty_ok = False
    except CompatibilityError as exc:
        empty_ok = "no internal boundary" in str(exc)
    ok = identity <= 1e-8 and sym <= 1e-6 and empty_ok
    report(6, "xi consistency", ok, f"divergence identity defect {identity:.1e}; symmetry defect {sym:.1e}; empty errors {empty_ok}")


# ---------------------------------------------------------------- 7


@pytest.mark.slow
def test_criterion_7_homogenization_convergence():
    cfg = parse_config("time.t_end = 5\ntime.snapshot_times = 5\nic.amplitude = 0.2\n")
    t0 = time.perf_counter()
    rep = compare_micro_macro(cfg, [0.2, 0.1, 0.05], cells_per_period=16)
    elapsed = time.perf_counter() - t0
    errs = [r.l2_space_time for r in rep.rows]
    ok = rep.strictly_decreasing()
    report(7, "homogenization convergence", ok,
           "space-time L2 errors " + ", ".join(f"eps={r.epsilon:g}: {r.l2_space_time:.3e}" for r in rep.rows)
           + f"; {elapsed:.0f}s")
    assert all(math.isfinite(e) for e in errs)


# ---------------------------------------------------------------- 8


def test_criterion_8_projection():
    cfg = parse_config("")
    grid, mask, bc = micro_setup(cfg)
    proj_tol = cfg.solver.proj_tol
    stepper = StokesStepper(grid, cfg.physical_params(), cfg.time.dt, bc, tol=proj_tol)
    X1, X2 = grid.centers()
    force = gradient(np.sin(4 * X1) * np.cos(3 * X2) + X1 * X2, grid, bc)
    force[:, mask.solid] = 0.0
    new = stepper.step(StokesState(0.0, np.zeros((2,) + grid.shape), np.zeros(grid.shape)), force)
    u_norm = l2_norm(new.u, grid)
    projector = Projector(grid, bc, proj_tol)
    u = np.random.default_rng(8).standard_normal((2,) + grid.shape)
    u[:, mask.solid] = 0.0
    pu = projector(u)[0]
    ppu = projector(pu)[0]
    idem = l2_norm(ppu - pu, grid) / max(1.0, l2_norm(pu, grid))
    ok = u_norm <= 10 * proj_tol and idem <= proj_tol
    report(8, "projection properties", ok, f"|u| after gradient forcing {u_norm:.1e}; idempotence defect {idem:.1e}")


# ---------------------------------------------------------------- 9


def test_criterion_9_determinism_and_formats(tmp_path):
    text = "grid.nx = 48\ngrid.ny = 40\ntime.t_end = 0.1\ntime.snapshot_times = 0, 0.1\ngeometry.eps_geom = 0.2\n"
    micro = parse_config(text)
    macro = parse_config(text, preset="macro")
    eff = assemble_effective(32, DISK)
    same = True
    for kind, run in (("micro", lambda: run_micro(micro)), ("macro", lambda: run_macro(macro, eff))):
        cfg = micro if kind == "micro" else macro
        a = write_run_outputs(run(), cfg, tmp_path / f"{kind}_a", kind)
        b = write_run_outputs(run(), cfg, tmp_path / f"{kind}_b", kind)
        for name in ("timeseries.csv", "c_t0.1.raw", "c_t0.1.pgm"):
            same &= (a / name).read_bytes() == (b / name).read_bytes()
    # byte layouts
    pgm = write_field_snapshot(np.full((2, 2), 0.5), tmp_path / "h.pgm", "pgm").read_bytes()
    pgm_ok = pgm == b"P5\n2 2\n255\n" + bytes([128] * 4)
    clamp = read_pgm(write_field_snapshot(np.array([[-1.0, 2.0]]), tmp_path / "c.pgm", "pgm"))
    pgm_ok &= clamp.tolist() == [[0, 255]]
    f = np.random.default_rng(9).standard_normal((5, 7))
    raw_path = write_field_snapshot(f, tmp_path / "f.raw", "raw")
    raw_ok = raw_path.read_bytes()[:12] == b"SCHF" + (7).to_bytes(4, "little") + (5).to_bytes(4, "little")
    raw_ok &= read_raw(raw_path).tobytes() == f.tobytes()
    zero = [DiagnosticsRecord(0.0, 0.0, 0.0, 0.0, 0.0, [ProbeValue((0, 0), 0.0, 0.0, 0.0)] * 2)]
    csv = write_timeseries_csv(zero, tmp_path / "z.csv").read_text(encoding="utf-8")
    csv_ok = csv == "t,E_int,E_kin,mass,length,p1_c,p1_u1,p1_u2,p2_c,p2_u1,p2_u2\n" + ",".join(["0.000000000000e0"] * 11) + "\n"
    series = tmp_path / "micro_a" / "timeseries.csv"
    again = write_timeseries_csv(read_timeseries_csv(series), tmp_path / "again.csv")
    csv_ok &= again.read_bytes() == series.read_bytes()
    ok = same and pgm_ok and raw_ok and csv_ok
    report(9, "determinism and formats", ok, f"bit-identical reruns {same}; PGM {pgm_ok}; raw {raw_ok}; CSV {csv_ok}")
