"""Scalar functionals of a state: energies, mass, interface length and point probes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .errors import InvalidArgumentError
from .fields import BoundarySpec
from .grid import Grid2D, PoreMask
from .potential import PhysicalParams, bulk_energy, total_free_energy

__all__ = [
    "DiagnosticsRecord",
    "ProbeValue",
    "interfacial_energy",
    "interface_length",
    "surface_tension",
    "kinetic_energy_and_mass",
    "probe",
]


@dataclass
class ProbeValue:
    point: tuple[float, float]
    c: float
    u1: float
    u2: float
    solid: bool = False


@dataclass
class DiagnosticsRecord:
    t: float
    E_int: float
    E_kin: float
    mass: float
    length: float
    probes: list[ProbeValue] = field(default_factory=list)


def interfacial_energy(c: np.ndarray, grid: Grid2D, params: PhysicalParams, mask: PoreMask | None = None) -> float:
    return total_free_energy(c, grid, params, mask)


def surface_tension(a: float, b: float) -> float:
    """Energy per unit length of a flat equilibrium interface.

    Along the 1-D profile ``a c'^2 = 2 F(c)``, so the excess energy is
    ``integral_0^1 sqrt(2 a F(c)) dc``.
    """
    val, _ = quad(lambda s: math.sqrt(2.0 * a * float(bulk_energy(s, b))), 0.0, 1.0)
    return val


def interface_length(
    c: np.ndarray,
    grid: Grid2D,
    level: float = 0.5,
    mask: PoreMask | None = None,
) -> float:
    """Length of the ``level`` iso-line by marching squares on cell-centre values.

    Squares with a solid corner are skipped. Saddle squares are split using
    the mean of the four corners, which keeps the result invariant under
    ``c -> 1 - c`` with ``level -> 1 - level``.
    """
    v = np.asarray(c, dtype=float) - level
    if v.shape[0] < 2 or v.shape[1] < 2:
        return 0.0
    # corners: 0 = (j, i), 1 = (j, i+1), 2 = (j+1, i+1), 3 = (j+1, i)
    corners = [v[:-1, :-1], v[:-1, 1:], v[1:, 1:], v[1:, :-1]]
    above = [q > 0 for q in corners]
    ok = np.ones_like(above[0])
    if mask is not None:
        p = mask.pore
        ok = p[:-1, :-1] & p[:-1, 1:] & p[1:, 1:] & p[1:, :-1]
    dx, dy = grid.dx, grid.dy
    # corner positions in the square's local frame
    pos = [(0.0, 0.0), (dx, 0.0), (dx, dy), (0.0, dy)]

    def crossing(k):
        a, b = corners[k], corners[(k + 1) % 4]
        denom = np.where(a == b, 1.0, a - b)
        s = np.where(a == b, 0.5, a / denom)
        (x0, y0), (x1, y1) = pos[k], pos[(k + 1) % 4]
        return x0 + s * (x1 - x0), y0 + s * (y1 - y0)

    cut = [above[k] != above[(k + 1) % 4] for k in range(4)]
    pts = [crossing(k) for k in range(4)]
    n_cut = sum(c_.astype(int) for c_ in cut)

    def seg(k, m):
        return np.hypot(pts[k][0] - pts[m][0], pts[k][1] - pts[m][1])

    total = 0.0
    two = (n_cut == 2) & ok
    if two.any():
        # the two cut edges of a non-saddle square
        edges = np.stack(cut).astype(int)
        first = np.argmax(edges, axis=0)
        second = 3 - np.argmax(edges[::-1], axis=0)
        lengths = np.zeros(v[:-1, :-1].shape)
        for k in range(4):
            for m in range(k + 1, 4):
                sel = two & (first == k) & (second == m)
                lengths[sel] = seg(k, m)[sel]
        total += float(lengths.sum())
    four = (n_cut == 4) & ok
    if four.any():
        centre_above = (corners[0] + corners[1] + corners[2] + corners[3]) / 4.0 > 0
        # the centre joins the corners on its own side: if it agrees with
        # corner 0 the segments cut off corners 1 and 3, otherwise 0 and 2
        joined = centre_above == above[0]
        l_a = seg(0, 1) + seg(2, 3)  # isolates corners 1 and 3
        l_b = seg(3, 0) + seg(1, 2)  # isolates corners 0 and 2
        total += float(np.where(joined, l_a, l_b)[four].sum())
    return total


def kinetic_energy_and_mass(
    u: np.ndarray | None, c: np.ndarray, grid: Grid2D, mask: PoreMask | None = None, weight: float = 1.0
) -> tuple[float, float]:
    """``(1/2 sum |u|^2 dA, weight * sum c dA)`` over pore cells."""
    act = BoundarySpec.from_mask(mask).active(grid.shape)
    dA = grid.cell_area
    e_kin = 0.0 if u is None else 0.5 * float(np.sum(u[:, act] ** 2)) * dA
    return e_kin, weight * float(np.sum(c[act])) * dA


def probe(
    grid: Grid2D,
    point: tuple[float, float],
    c: np.ndarray,
    u: np.ndarray | None = None,
    mask: PoreMask | None = None,
) -> ProbeValue:
    """Bilinear interpolation from the four surrounding cell centres.

    Coordinates within half a cell of the boundary clamp to the nearest
    centre line. A probe whose nearest cell is solid returns NaN values
    flagged ``solid=True``.
    """
    x, y = float(point[0]), float(point[1])
    if not (0.0 <= x <= grid.lx and 0.0 <= y <= grid.ly):
        raise InvalidArgumentError(f"probe point ({x}, {y}) lies outside [0, {grid.lx}] x [0, {grid.ly}]")
    if mask is not None:
        i = min(int(x / grid.dx), grid.nx - 1)
        j = min(int(y / grid.dy), grid.ny - 1)
        if not mask.pore[j, i]:
            nan = float("nan")
            return ProbeValue((x, y), nan, nan, nan, solid=True)
    fx = np.clip(x / grid.dx - 0.5, 0.0, grid.nx - 1)
    fy = np.clip(y / grid.dy - 0.5, 0.0, grid.ny - 1)
    i0 = min(int(math.floor(fx)), max(grid.nx - 2, 0))
    j0 = min(int(math.floor(fy)), max(grid.ny - 2, 0))
    i1, j1 = min(i0 + 1, grid.nx - 1), min(j0 + 1, grid.ny - 1)
    sx, sy = fx - i0, fy - j0

    def interp(f):
        return float(
            (1 - sx) * (1 - sy) * f[j0, i0] + sx * (1 - sy) * f[j0, i1] + (1 - sx) * sy * f[j1, i0] + sx * sy * f[j1, i1]
        )

    u1 = u2 = 0.0
    if u is not None:
        u1, u2 = interp(u[0]), interp(u[1])
    return ProbeValue((x, y), interp(c), u1, u2)
