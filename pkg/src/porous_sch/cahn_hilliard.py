"""Linearly implicit, stabilised time stepping of the advective Cahn-Hilliard equation.

One step solves

    theta (c+ - c)/dt + eps u . grad c = eps^2 D w+
    w+ = f(c) - (a/theta) D c+ + s (c+ - c)

for ``c+`` as a single SPD system. ``D`` is the compact Neumann Laplacian on
the pore cells for the microscale model (``theta = 1``) and the
effective-diffusion operator on the macroscale.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvalidArgumentError, InvalidStateError
from .fields import BoundarySpec, FactorizedInverse, advect_faces, advect_upwind, conjugate_gradient, laplacian
from .grid import Grid2D, PoreMask
from .potential import PhysicalParams, bulk_energy, bulk_force

__all__ = ["CHState", "CHStepper", "ch_step", "weak_residual"]


@dataclass
class CHState:
    t: float
    c: np.ndarray
    w: np.ndarray


def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise InvalidStateError(f"{name} contains non-finite values")


class CHStepper:
    """Caches the factorised step operator for a fixed grid, mask and dt."""

    def __init__(
        self,
        grid: Grid2D,
        params: PhysicalParams,
        dt: float,
        bc: BoundarySpec | None = None,
        *,
        tol: float = 1e-10,
        theta: float = 1.0,
        diffusion: Callable[[np.ndarray], np.ndarray] | None = None,
        diffusion_reach: int = 1,
    ):
        if not dt > 0:
            raise InvalidArgumentError(f"dt must be positive, got {dt}")
        self.grid = grid
        self.params = params
        self.dt = float(dt)
        self.tol = tol
        self.theta = float(theta)
        self.bc = (bc or BoundarySpec()).with_kind("neumann_zero")
        self.active = self.bc.active(grid.shape)
        self.n_active = int(self.active.sum())
        self.diffuse = diffusion or (lambda f: laplacian(f, grid, self.bc))
        eps = params.eps_model
        self._k = self.dt * eps * eps
        self._precond = FactorizedInverse(
            self.apply, grid.shape, self.active, 2 * diffusion_reach, periodic=self.bc.periodic
        )

    def apply(self, x: np.ndarray) -> np.ndarray:
        p = self.params
        dx_ = self.diffuse(x)
        out = self.theta * x + self._k * ((p.a / self.theta) * self.diffuse(dx_) - p.s * dx_)
        out[~self.active] = 0.0
        return out

    def chemical_potential(self, c_new: np.ndarray, c_old: np.ndarray) -> np.ndarray:
        p = self.params
        w = bulk_force(c_old, p.b) - (p.a / self.theta) * self.diffuse(c_new) + p.s * (c_new - c_old)
        w[~self.active] = 0.0
        return w

    def energy(self, c: np.ndarray) -> float:
        """The free energy this scheme dissipates when ``u = 0``."""
        act = self.active
        cc = np.where(act, c, 0.0)
        grad_part = -0.5 * self.params.a * float(np.sum(cc * self.diffuse(cc)))
        bulk = self.theta * float(np.sum(bulk_energy(c[act], self.params.b)))
        return (grad_part + bulk) * self.grid.cell_area

    def step(
        self,
        state: CHState,
        u: np.ndarray | None = None,
        *,
        faces: tuple[np.ndarray, np.ndarray] | None = None,
    ) -> tuple[CHState, dict]:
        """Advance one step with cell velocities ``u`` or east/north face velocities ``faces``."""
        _check_finite("c", state.c)
        if u is not None:
            _check_finite("u", u)
        p = self.params
        act = self.active
        c = state.c
        b = self.theta * c + self._k * self.diffuse(bulk_force(c, p.b) - p.s * c)
        if u is not None:
            b -= self.dt * p.eps_model * advect_upwind(c, u, self.grid, self.bc)
        elif faces is not None:
            b -= self.dt * p.eps_model * advect_faces(c, faces[0], faces[1], self.grid, self.bc)
        b[~act] = 0.0
        x0 = np.where(act, c, 0.0)
        x, info = conjugate_gradient(self.apply, b, x0, tol=self.tol, precond=self._precond)
        # A maps constants to theta * constants and preserves zero-sum fields,
        # so the exact solution carries sum(b) / theta.
        x[act] += (b[act].sum() - self.theta * x[act].sum()) / (self.theta * self.n_active)
        c_new = np.where(act, x, c)
        w_new = np.where(act, self.chemical_potential(c_new, c), state.w)
        _check_finite("c+", c_new)
        return CHState(state.t + self.dt, c_new, w_new), info


def ch_step(
    state: CHState,
    u: np.ndarray | None,
    grid: Grid2D,
    params: PhysicalParams,
    mask: PoreMask | None,
    dt: float,
    tol: float = 1e-10,
) -> CHState:
    """Advance one step; builds a fresh :class:`CHStepper` (use the class in loops)."""
    stepper = CHStepper(grid, params, dt, BoundarySpec.from_mask(mask), tol=tol)
    return stepper.step(state, u)[0]


def weak_residual(
    state: CHState,
    u: np.ndarray | None,
    prev: CHState,
    test: np.ndarray,
    grid: Grid2D,
    params: PhysicalParams,
    mask: PoreMask | None,
    dt: float,
    mode: str = "a",
) -> float:
    """Discrete weak-form residual of the Cahn-Hilliard pair for one test field.

    ``mode='a'``: <(c - c_prev)/dt, phi> + eps^2 <grad w, grad phi> + eps <u . grad c_prev, phi>.
    ``mode='b'``: <w, psi> - a <grad c, grad psi> - <f(c), psi>.
    Gradient pairings use the face form ``<grad f, grad g> = -<f, lap g>``;
    all sums run over pore cells and carry the cell area.
    """
    for name, arr in (("c", state.c), ("prev.c", prev.c), ("test", test)):
        if arr.shape != grid.shape:
            raise InvalidArgumentError(f"{name} has shape {arr.shape}, grid expects {grid.shape}")
    bc = BoundarySpec.from_mask(mask)
    act = bc.active(grid.shape)
    phi = np.where(act, test, 0.0)
    dA = grid.cell_area
    if mode == "a":
        eps = params.eps_model
        r = (state.c - prev.c) / dt
        r = r - eps * eps * laplacian(np.where(act, state.w, 0.0), grid, bc)
        if u is not None:
            r = r + eps * advect_upwind(prev.c, u, grid, bc)
        return float(np.sum(np.where(act, r, 0.0) * phi)) * dA
    if mode == "b":
        r = state.w + params.a * laplacian(state.c, grid, bc) - bulk_force(state.c, params.b)
        return float(np.sum(np.where(act, r, 0.0) * phi)) * dA
    raise InvalidArgumentError(f"unknown weak-form mode {mode!r}")
