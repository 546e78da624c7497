"""Periodic cell problems on the unit reference cell and the effective tensors they define.

All cell problems are discretised with the same stencils as the microscale
solver (periodic outer boundary, solid cells masked out), so tensors
computed on the cell grid of a micro simulation are its exact discrete
homogenised coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CompatibilityError, InvalidArgumentError, SolverError
from .fields import (
    DIRICHLET,
    NEUMANN,
    BoundarySpec,
    FactorizedInverse,
    conjugate_gradient,
    divergence,
    laplacian,
    solve_poisson_neumann,
)
from .grid import CellGeometry, Grid2D, build_grid, build_pore_mask, porosity
from .stokes import Projector

__all__ = [
    "CellSolution",
    "EffectiveTensors",
    "cell_grid",
    "solve_corrector",
    "effective_diffusion",
    "solve_xi",
    "solve_permeability",
    "assemble_effective",
]

MIN_CELL_N = 32


@dataclass
class CellSolution:
    field: np.ndarray
    residual: float
    geometry: CellGeometry
    grid: Grid2D
    pore: np.ndarray = field(repr=False)
    extras: dict = field(default_factory=dict)


@dataclass
class EffectiveTensors:
    theta: float
    A_eff: np.ndarray
    K: np.ndarray | None
    xi: CellSolution | None = None
    geometry: CellGeometry | None = None
    cell_n: int = 0
    metrics: dict = field(default_factory=dict)


def cell_grid(n: int) -> Grid2D:
    return build_grid(n, n, 1.0, 1.0)


def _cell_bc(grid: Grid2D, geom: CellGeometry) -> BoundarySpec:
    mask = build_pore_mask(grid, geom, 1.0)
    if mask.n_pore == 0:
        raise InvalidArgumentError(f"{geom.describe()} leaves no pore space on the cell grid")
    return BoundarySpec(NEUMANN, mask.pore, periodic=True)


def _open_faces(pore: np.ndarray, axis: int) -> np.ndarray:
    """Faces between each cell and its +1 neighbour along ``axis`` that join two pore cells."""
    return pore & np.roll(pore, -1, axis=axis)


def solve_corrector(grid: Grid2D, geom: CellGeometry, j: int, tol: float = 1e-12) -> CellSolution:
    """Diffusion corrector: lap(chi_j + y_j) = 0 in Y_p, zero normal flux of chi_j + y_j on Gamma.

    ``j`` is 0 for y1 and 1 for y2. The flux of ``y_j`` through every face
    is the constant ``1/h``; only faces touching solid cells break the balance.
    """
    if j not in (0, 1):
        raise InvalidArgumentError(f"axis must be 0 or 1, got {j}")
    bc = _cell_bc(grid, geom)
    pore = bc.pore
    axis = 1 if j == 0 else 0
    h = grid.dx if j == 0 else grid.dy
    east = _open_faces(pore, axis)
    west = np.roll(east, 1, axis=axis)
    rhs = np.where(pore, -(east.astype(float) - west.astype(float)) / h, 0.0)
    precond = FactorizedInverse(
        lambda f: -laplacian(f, grid, bc), grid.shape, pore, 1, periodic=True, shift=1e-10, remove_mean=True
    )
    chi, info = solve_poisson_neumann(rhs, grid, bc, tol, precond=precond)
    res = np.abs(laplacian(chi, grid, bc) - rhs)[pore].max() if rhs.any() else 0.0
    return CellSolution(chi, float(res), geom, grid, pore, {"axis": j, "iterations": info["iterations"]})


def effective_diffusion(chi_1: CellSolution, chi_2: CellSolution) -> tuple[np.ndarray, float]:
    """Return the symmetrised effective-diffusion tensor and its raw asymmetry.

    ``A[i, j] = (1/|Y|) sum over open faces normal to y_i of (delta_ij + D_i chi_j) h1 h2``,
    the face form of the pore-mean of ``delta_ij + d chi_j / d y_i``.
    """
    grid = chi_1.grid
    pore = chi_1.pore
    n = pore.size
    A = np.zeros((2, 2))
    for i, (axis, h) in enumerate(((1, grid.dx), (0, grid.dy))):
        open_i = _open_faces(pore, axis)
        for j, chi in enumerate((chi_1.field, chi_2.field)):
            grad = (np.roll(chi, -1, axis=axis) - chi) / h
            A[i, j] = np.sum(np.where(open_i, (1.0 if i == j else 0.0) + grad, 0.0)) / n
    asym = abs(A[0, 1] - A[1, 0])
    return 0.5 * (A + A.T), float(asym)


def solve_xi(grid: Grid2D, geom: CellGeometry, tol: float = 1e-12, source: float = 2.0) -> CellSolution:
    """Flux-repaired trace form of the xi cell problem.

    Solves ``lap xi = source`` in Y_p, periodic in y, with the constant
    outward flux ``d_n xi = source |Y_p| / |Gamma|`` on Gamma so the Neumann
    problem is solvable. ``source=2`` is the trace of the identity Hessian in
    2-D; ``source=1`` is the normalisation implied by the time separation.
    """
    if geom.shape == "empty":
        raise CompatibilityError("no internal boundary to balance the source")
    bc = _cell_bc(grid, geom)
    pore = bc.pore
    h = grid.dx
    if not np.isclose(grid.dx, grid.dy):
        raise InvalidArgumentError("xi cell problem needs a square cell grid")
    blocked = np.zeros(grid.shape)
    for axis in (0, 1):
        for step in (1, -1):
            blocked += pore & ~np.roll(pore, -step, axis=axis)
    blocked[~pore] = 0.0
    gamma_len = float(blocked.sum()) * h
    if gamma_len == 0.0:
        raise CompatibilityError("no internal boundary to balance the source")
    pore_area = float(pore.sum()) * grid.cell_area
    flux = source * pore_area / gamma_len
    rhs = np.where(pore, source - flux * blocked / h, 0.0)
    precond = FactorizedInverse(
        lambda f: -laplacian(f, grid, bc), grid.shape, pore, 1, periodic=True, shift=1e-10, remove_mean=True
    )
    xi, info = solve_poisson_neumann(rhs, grid, bc, tol, precond=precond)
    lap_total = laplacian(xi, grid, bc) + flux * blocked / h
    identity_defect = abs(float(np.sum(lap_total[pore])) * grid.cell_area - flux * gamma_len)
    residual = float(np.abs(lap_total - source)[pore].max())
    extras = {
        "flux": flux,
        "gamma_length": gamma_len,
        "divergence_identity_defect": identity_defect,
        "hessian_defect": _hessian_defect(xi, grid, pore, source / 2.0),
        "source": source,
        "iterations": info["iterations"],
    }
    return CellSolution(xi, residual, geom, grid, pore, extras)


def _hessian_defect(xi: np.ndarray, grid: Grid2D, pore: np.ndarray, diag: float) -> float:
    """RMS of ``Hess xi - diag * I`` over cells whose 3x3 neighbourhood is all pore."""
    full = pore.copy()
    for sj in (-1, 0, 1):
        for si in (-1, 0, 1):
            full &= np.roll(np.roll(pore, sj, 0), si, 1)
    if not full.any():
        return float("nan")
    h = grid.dx

    def sh(a, dj, di):
        return np.roll(np.roll(a, -dj, 0), -di, 1)

    hxx = (sh(xi, 0, 1) - 2 * xi + sh(xi, 0, -1)) / h**2
    hyy = (sh(xi, 1, 0) - 2 * xi + sh(xi, -1, 0)) / h**2
    hxy = (sh(xi, 1, 1) - sh(xi, 1, -1) - sh(xi, -1, 1) + sh(xi, -1, -1)) / (4 * h**2)
    d2 = (hxx - diag) ** 2 + (hyy - diag) ** 2 + 2 * hxy**2
    return float(np.sqrt(d2[full].mean()))


def solve_permeability(grid: Grid2D, geom: CellGeometry, j: int, tol: float = 1e-10) -> CellSolution:
    """Steady cell Stokes flow ``-lap u + grad pi = e_j``, div u = 0, u = 0 on Gamma, periodic.

    The steady state of the explicit pseudo-time Stokes step is the zero of
    ``P(lap u + e_j)`` on the divergence-free subspace (``P`` the discrete
    projection). That symmetric system is solved by CG preconditioned with
    ``P (-lap)^-1 P``; the stopping test is the pseudo-time increment
    ``||P(lap u + e_j)|| <= tol ||e_j||``.
    """
    if geom.shape == "empty":
        raise InvalidArgumentError("steady cell flow unbounded without no-slip obstacle")
    if j not in (0, 1):
        raise InvalidArgumentError(f"axis must be 0 or 1, got {j}")
    bc = _cell_bc(grid, geom)
    pore = bc.pore
    dbc = bc.with_kind(DIRICHLET)
    proj = Projector(grid, bc, tol=1e-13)
    lap_inv = FactorizedInverse(lambda f: -laplacian(f, grid, dbc), grid.shape, pore, 1, periodic=True)

    def P(v):
        return proj(v)[0]

    def vec_lap(v):
        return np.stack([laplacian(v[0], grid, dbc), laplacian(v[1], grid, dbc)])

    def apply(v):
        return -P(vec_lap(v))

    def precond(r):
        return P(np.stack([lap_inv(r[0]), lap_inv(r[1])]))

    e = np.zeros((2,) + grid.shape)
    e[j][pore] = 1.0
    b = P(e)
    enorm = float(np.linalg.norm(e))
    u, info = conjugate_gradient(apply, b, tol=0.0, atol=tol * enorm, precond=precond, maxiter=5000)
    u = P(u)
    incr = P(vec_lap(u) + e)
    residual = float(np.linalg.norm(incr) / enorm)
    # pressure from lap u + e = grad pi
    g = vec_lap(u) + e
    pi, _ = proj.potential(divergence(g, grid, dbc))
    return CellSolution(u, residual, geom, grid, pore, {"axis": j, "pressure": pi, "iterations": info["iterations"]})


def assemble_effective(
    cell_n: int,
    geom: CellGeometry,
    tol: float = 1e-10,
    *,
    corrector: str = "on",
    xi_source: float = 2.0,
    allow_coarse: bool = False,
) -> EffectiveTensors:
    """Porosity, effective diffusion, permeability and xi for one cell geometry.

    ``corrector='off'`` reproduces the literal linear-corrector reading,
    ``A_eff = theta I``. ``allow_coarse`` lifts the ``cell_n >= 32`` floor
    so tensors can be matched to a coarse micro grid.
    """
    if cell_n < MIN_CELL_N and not allow_coarse:
        raise InvalidArgumentError(f"cell_n must be >= {MIN_CELL_N}, got {cell_n}")
    if corrector not in ("on", "off"):
        raise InvalidArgumentError(f"corrector must be 'on' or 'off', got {corrector!r}")
    grid = cell_grid(cell_n)
    theta = porosity(build_pore_mask(grid, geom, 1.0))
    metrics: dict = {}
    if corrector == "on":
        chi = [solve_corrector(grid, geom, j, min(tol, 1e-12)) for j in (0, 1)]
        A, asym = effective_diffusion(*chi)
        metrics["A_asymmetry"] = asym
    else:
        A = theta * np.eye(2)
        metrics["A_asymmetry"] = 0.0
    K = None
    xi = None
    if geom.shape != "empty":
        K = np.zeros((2, 2))
        for j in (0, 1):
            sol = solve_permeability(grid, geom, j, tol)
            K[:, j] = sol.field.reshape(2, -1).sum(axis=1) * grid.cell_area
        metrics["K_asymmetry"] = float(abs(K[0, 1] - K[1, 0]))
        K = 0.5 * (K + K.T)
        xi = solve_xi(grid, geom, min(tol, 1e-12), xi_source)
        metrics["xi_hessian_defect"] = xi.extras["hessian_defect"]
    return EffectiveTensors(theta, A, K, xi, geom, cell_n, metrics)
