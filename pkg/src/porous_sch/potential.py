"""Quartic double-well free energy and the functionals built on it."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidArgumentError
from .fields import BoundarySpec, laplacian
from .grid import Grid2D, PoreMask

__all__ = [
    "PhysicalParams",
    "bulk_energy",
    "bulk_force",
    "bulk_force_deriv",
    "chemical_potential",
    "gradient_energy",
    "total_free_energy",
]


@dataclass(frozen=True)
class PhysicalParams:
    """Model constants.

    ``stab`` is the linear stabilisation constant of the Cahn-Hilliard
    scheme; ``None`` selects the default ``64 * b``.
    """

    a: float = 12.0
    b: float = 2.0
    lam: float = 4e-2
    mu: float = 1e-2
    eps_model: float = 5e-2
    rho: float = 1.0
    stab: float | None = None

    def __post_init__(self):
        for name in ("a", "b", "lam", "mu", "eps_model"):
            if not getattr(self, name) > 0:
                raise InvalidArgumentError(f"params.{name} must be positive, got {getattr(self, name)}")
        if self.rho != 1.0:
            raise InvalidArgumentError("params.rho is fixed to 1")
        if self.stab is not None and self.stab < 0:
            raise InvalidArgumentError(f"params.stab must be non-negative, got {self.stab}")

    @property
    def s(self) -> float:
        return 64.0 * self.b if self.stab is None else self.stab

    def with_(self, **kw) -> "PhysicalParams":
        return replace(self, **kw)


def bulk_energy(x, b: float):
    x = np.asarray(x, dtype=float)
    return 16.0 * b * x**2 * (x - 1.0) ** 2


def bulk_force(x, b: float):
    x = np.asarray(x, dtype=float)
    return 32.0 * b * (2.0 * x**3 - 3.0 * x**2 + x)


def bulk_force_deriv(x, b: float):
    x = np.asarray(x, dtype=float)
    return 32.0 * b * (6.0 * x**2 - 6.0 * x + 1.0)


def chemical_potential(c: np.ndarray, grid: Grid2D, params: PhysicalParams, bc: BoundarySpec | None = None):
    """``f(c) - a * lap(c)``; zero on solid cells."""
    bc = bc or BoundarySpec()
    w = bulk_force(c, params.b) - params.a * laplacian(c, grid, bc)
    if bc.pore is not None:
        w[~bc.pore] = 0.0
    return w


def gradient_energy(c: np.ndarray, grid: Grid2D, bc: BoundarySpec | None = None) -> float:
    """``1/2 sum |grad c|^2 dx dy`` with the gradient taken on open cell faces.

    Equals ``-1/2 sum c * laplacian(c) dx dy`` exactly for Neumann ghosts,
    which is the quadratic form the Cahn-Hilliard scheme dissipates.
    """
    bc = (bc or BoundarySpec()).with_kind("neumann_zero")
    return -0.5 * float(np.sum(c * laplacian(c, grid, bc))) * grid.cell_area


def total_free_energy(
    c: np.ndarray,
    grid: Grid2D,
    params: PhysicalParams,
    mask: PoreMask | None = None,
    bc: BoundarySpec | None = None,
) -> float:
    """Sum over pore cells of ``a/2 |grad c|^2 + F(c)``, times the cell area."""
    if bc is None:
        bc = BoundarySpec.from_mask(mask)
    act = bc.active(c.shape)
    cc = np.where(act, c, 0.0)
    bulk = float(np.sum(bulk_energy(c[act], params.b))) * grid.cell_area
    return params.a * gradient_energy(cc, grid, bc) + bulk
