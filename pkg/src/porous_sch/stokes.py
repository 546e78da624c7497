"""Unsteady Stokes step with capillary forcing: explicit viscous predictor and Chorin projection."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, InvalidStateError
from .fields import (
    DIRICHLET,
    NEUMANN,
    BoundarySpec,
    FactorizedInverse,
    divergence,
    gradient,
    l2_norm,
    laplacian,
    projection_laplacian,
    solve_poisson_neumann,
)
from .grid import Grid2D, PoreMask
from .potential import PhysicalParams

__all__ = [
    "StokesState",
    "Projector",
    "StokesStepper",
    "capillary_force",
    "stokes_step",
    "project_div_free",
    "kinetic_energy",
]


@dataclass
class StokesState:
    t: float
    u: np.ndarray
    p: np.ndarray
    report: dict = field(default_factory=dict)


def capillary_force(
    c: np.ndarray, w: np.ndarray, grid: Grid2D, params: PhysicalParams, bc: BoundarySpec | None = None
) -> np.ndarray:
    """``-eps * lambda * c * grad w`` with Neumann ghosts for ``w``."""
    bc = (bc or BoundarySpec()).with_kind(NEUMANN)
    return -params.eps_model * params.lam * c * gradient(w, grid, bc)


def kinetic_energy(u: np.ndarray, grid: Grid2D, active: np.ndarray | None = None) -> float:
    return 0.5 * l2_norm(u, grid, active) ** 2


class Projector:
    """Discrete Helmholtz projection onto divergence-free fields with no-flux walls.

    The Poisson operator is ``divergence(gradient(.))`` so the returned field
    is divergence-free to the solver tolerance, not just to truncation error.
    """

    def __init__(self, grid: Grid2D, bc: BoundarySpec | None = None, tol: float = 1e-12, compat_tol: float = 1e-10):
        self.grid = grid
        bc = bc or BoundarySpec()
        self.nbc = bc.with_kind(NEUMANN)
        self.dbc = bc.with_kind(DIRICHLET)
        self.active = self.nbc.active(grid.shape)
        self.tol = tol
        self.compat_tol = compat_tol
        self._precond = FactorizedInverse(
            lambda f: -projection_laplacian(f, grid, self.nbc),
            grid.shape,
            self.active,
            reach=2,
            periodic=bc.periodic,
            shift=1e-10,
            remove_mean=True,
        )

    def potential(self, div: np.ndarray) -> tuple[np.ndarray, dict]:
        return solve_poisson_neumann(
            div, self.grid, self.nbc, self.tol, compat_tol=self.compat_tol,
            operator="projection", precond=self._precond,
        )

    def __call__(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray, dict]:
        """Return ``(u - grad phi, phi, info)``."""
        div = divergence(u, self.grid, self.dbc)
        phi, info = self.potential(div)
        out = u - gradient(phi, self.grid, self.nbc)
        out[:, ~self.active] = 0.0
        return out, phi, info


def project_div_free(u: np.ndarray, grid: Grid2D, mask: PoreMask | None = None, tol: float = 1e-12) -> np.ndarray:
    pu = np.where(BoundarySpec.from_mask(mask).active(grid.shape), u, 0.0)
    return Projector(grid, BoundarySpec.from_mask(mask), tol)(pu)[0]


class StokesStepper:
    def __init__(
        self,
        grid: Grid2D,
        params: PhysicalParams,
        dt: float,
        bc: BoundarySpec | None = None,
        tol: float = 1e-12,
        compat_tol: float = 1e-10,
    ):
        if not dt > 0:
            raise InvalidArgumentError(f"dt must be positive, got {dt}")
        self.grid = grid
        self.params = params
        self.dt = float(dt)
        bc = bc or BoundarySpec()
        self.dbc = bc.with_kind(DIRICHLET)
        self.active = self.dbc.active(grid.shape)
        self.nu = params.mu * params.eps_model**2
        self.projector = Projector(grid, bc, tol, compat_tol)
        h2 = min(grid.dx, grid.dy) ** 2
        self.diffusion_number = self.dt * self.nu / h2
        self.stable = self.dt <= h2 / (4.0 * self.nu)

    def step(self, state: StokesState, force: np.ndarray | None = None) -> StokesState:
        u = state.u
        if not np.all(np.isfinite(u)):
            raise InvalidStateError("u contains non-finite values")
        ustar = u.copy()
        ustar[0] += self.dt * self.nu * laplacian(u[0], self.grid, self.dbc)
        ustar[1] += self.dt * self.nu * laplacian(u[1], self.grid, self.dbc)
        if force is not None:
            ustar += self.dt * force
        ustar[:, ~self.active] = 0.0
        div = divergence(ustar, self.grid, self.dbc) / self.dt
        phi, info = self.projector.potential(div)
        u_new = ustar - self.dt * gradient(phi, self.grid, self.projector.nbc)
        u_new[:, ~self.active] = 0.0
        report = {
            "cg_iterations": info["iterations"],
            "div_norm": l2_norm(divergence(u_new, self.grid, self.dbc), self.grid, self.active),
            "diffusion_number": self.diffusion_number,
            "warnings": [],
        }
        if not self.stable:
            msg = (
                f"explicit viscous step exceeds stability bound: dt={self.dt:g} > "
                f"h^2/(4 mu eps^2)={min(self.grid.dx, self.grid.dy) ** 2 / (4 * self.nu):g}"
            )
            report["warnings"].append(msg)
        return StokesState(state.t + self.dt, u_new, phi, report)


def stokes_step(
    state: StokesState,
    force: np.ndarray | None,
    grid: Grid2D,
    params: PhysicalParams,
    mask: PoreMask | None,
    dt: float,
    tol: float = 1e-12,
) -> StokesState:
    """One predictor-projection step; builds a fresh :class:`StokesStepper`."""
    stepper = StokesStepper(grid, params, dt, BoundarySpec.from_mask(mask), tol)
    new = stepper.step(state, force)
    for msg in new.report["warnings"]:
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return new
