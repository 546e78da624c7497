"""Uniform cell-centred grids and the eps-periodic perforation mask.

Arrays living on a :class:`Grid2D` have shape ``(ny, nx)``: axis 0 is the
x2 direction and axis 1 is x1, so ``f[j, i]`` is the value at the centre
``((i + 1/2) dx, (j + 1/2) dy)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, ResolutionError

__all__ = [
    "Grid2D",
    "CellGeometry",
    "PoreMask",
    "build_grid",
    "build_pore_mask",
    "porosity",
]


@dataclass(frozen=True)
class Grid2D:
    nx: int
    ny: int
    lx: float
    ly: float

    @property
    def dx(self) -> float:
        return self.lx / self.nx

    @property
    def dy(self) -> float:
        return self.ly / self.ny

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(X1, X2)`` arrays of cell-centre coordinates, shape ``(ny, nx)``."""
        x1 = (np.arange(self.nx) + 0.5) * self.dx
        x2 = (np.arange(self.ny) + 0.5) * self.dy
        return np.meshgrid(x1, x2)


def build_grid(nx: int, ny: int, lx: float, ly: float) -> Grid2D:
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise InvalidArgumentError(f"cell counts must be positive integers, got nx={nx}, ny={ny}")
    if not (lx > 0 and ly > 0):
        raise InvalidArgumentError(f"domain extents must be positive, got lx={lx}, ly={ly}")
    return Grid2D(int(nx), int(ny), float(lx), float(ly))


@dataclass(frozen=True)
class CellGeometry:
    """Solid inclusion inside the unit reference cell.

    ``disk`` is a solid disk of the given radius centred at (1/2, 1/2).
    ``slab`` is a straight pore channel of width ``height`` centred in the
    cell; ``orientation='x'`` runs the channel along y1 (solid bands are
    normal to y2), ``'y'`` runs it along y2.
    """

    shape: str = "disk"
    radius: float = 0.25
    height: float = 0.5
    orientation: str = "x"

    def __post_init__(self):
        if self.shape not in ("empty", "disk", "slab"):
            raise InvalidArgumentError(f"unknown cell geometry {self.shape!r}")
        if self.shape == "disk" and not (0.0 <= self.radius < 0.5):
            raise InvalidArgumentError(f"disk radius must lie in [0, 0.5), got {self.radius}")
        if self.shape == "slab":
            if not (0.0 <= self.height < 1.0):
                raise InvalidArgumentError(f"slab height must lie in [0, 1), got {self.height}")
            if self.orientation not in ("x", "y"):
                raise InvalidArgumentError(f"slab orientation must be 'x' or 'y', got {self.orientation!r}")

    def is_solid(self, y1: np.ndarray, y2: np.ndarray) -> np.ndarray:
        """Indicator of Y_s for reference-cell coordinates in [0, 1)."""
        y1 = np.asarray(y1, dtype=float)
        y2 = np.asarray(y2, dtype=float)
        if self.shape == "empty":
            return np.zeros(np.broadcast(y1, y2).shape, dtype=bool)
        if self.shape == "disk":
            return (y1 - 0.5) ** 2 + (y2 - 0.5) ** 2 < self.radius**2
        across = y2 if self.orientation == "x" else y1
        return np.abs(across - 0.5) >= 0.5 * self.height

    def describe(self) -> str:
        if self.shape == "disk":
            return f"disk(radius={self.radius:g})"
        if self.shape == "slab":
            return f"slab(height={self.height:g}, orientation={self.orientation})"
        return "empty"


@dataclass(frozen=True, eq=False)
class PoreMask:
    grid: Grid2D
    epsilon_geom: float
    geometry: CellGeometry
    pore: np.ndarray = field(repr=False)

    @property
    def solid(self) -> np.ndarray:
        return ~self.pore

    @property
    def n_pore(self) -> int:
        return int(self.pore.sum())

    @property
    def pore_area(self) -> float:
        return self.n_pore * self.grid.cell_area


def build_pore_mask(grid: Grid2D, geom: CellGeometry, epsilon: float) -> PoreMask:
    """Classify every cell centre as pore or solid by folding it into the reference cell."""
    if not epsilon > 0:
        raise InvalidArgumentError(f"epsilon must be positive, got {epsilon}")
    min_eps = 2.0 * max(grid.dx, grid.dy)
    if geom.shape != "empty" and epsilon < min_eps * (1 - 1e-12):
        raise ResolutionError(epsilon, min_eps)
    x1, x2 = grid.centers()
    y1 = np.mod(x1 / epsilon, 1.0)
    y2 = np.mod(x2 / epsilon, 1.0)
    pore = ~geom.is_solid(y1, y2)
    pore.setflags(write=False)
    return PoreMask(grid, float(epsilon), geom, pore)


def porosity(mask: PoreMask) -> float:
    return mask.n_pore / mask.pore.size
