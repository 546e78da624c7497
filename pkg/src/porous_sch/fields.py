"""Cell-centred finite-difference operators on (optionally perforated) grids.

Boundary handling is done with ghost values. When the neighbour of a cell
lies outside the domain (non-periodic case) or inside a solid cell, its
value is replaced by ``+f`` for ``neumann_zero`` and by ``-f`` for
``dirichlet_zero``. Solid cells always produce 0.

Two Laplacians exist:

* :func:`laplacian` is the compact 5-point stencil. It is used for every
  diffusion term.
* :func:`projection_laplacian` is ``divergence(gradient(.))`` with the
  gradient taken under Neumann ghosts and the divergence under Dirichlet
  ghosts. That divergence is exactly minus the adjoint of the gradient, so
  this operator is symmetric and the pressure projection leaves a velocity
  that is discretely divergence-free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import CompatibilityError, InvalidArgumentError, SolverError
from .grid import Grid2D, PoreMask

__all__ = [
    "BoundarySpec",
    "gradient",
    "divergence",
    "laplacian",
    "projection_laplacian",
    "advect_upwind",
    "advect_faces",
    "face_velocities",
    "l2_norm",
    "pore_mean",
    "conjugate_gradient",
    "assemble_by_probing",
    "FactorizedInverse",
    "solve_poisson_neumann",
    "max_cg_iterations",
]

NEUMANN = "neumann_zero"
DIRICHLET = "dirichlet_zero"


@dataclass(eq=False)
class BoundarySpec:
    """Ghost-cell rule plus optional solid mask and outer periodicity."""

    kind: str = NEUMANN
    pore: np.ndarray | None = None
    periodic: bool = False
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.kind not in (NEUMANN, DIRICHLET):
            raise InvalidArgumentError(f"unknown boundary kind {self.kind!r}")

    @classmethod
    def from_mask(cls, mask: PoreMask | None, kind: str = NEUMANN, periodic: bool = False):
        return cls(kind, None if mask is None else mask.pore, periodic)

    @property
    def sign(self) -> float:
        return 1.0 if self.kind == NEUMANN else -1.0

    def with_kind(self, kind: str) -> "BoundarySpec":
        if kind == self.kind:
            return self
        other = BoundarySpec(kind, self.pore, self.periodic)
        other._cache = self._cache  # validity masks do not depend on kind
        return other

    def active(self, shape) -> np.ndarray:
        key = ("active", shape)
        if key not in self._cache:
            self._cache[key] = np.ones(shape, bool) if self.pore is None else np.asarray(self.pore, bool)
        return self._cache[key]

    def neighbor_valid(self, shape, axis: int, step: int) -> np.ndarray:
        key = (shape, axis, step)
        if key not in self._cache:
            act = self.active(shape)
            if self.periodic:
                valid = np.roll(act, -step, axis=axis).copy()
            else:
                valid = np.zeros(shape, bool)
                src = [slice(None)] * 2
                dst = [slice(None)] * 2
                if step > 0:
                    dst[axis], src[axis] = slice(None, -step), slice(step, None)
                else:
                    dst[axis], src[axis] = slice(-step, None), slice(None, step)
                valid[tuple(dst)] = act[tuple(src)]
            valid &= act
            self._cache[key] = valid
        return self._cache[key]


def _neighbor(f: np.ndarray, axis: int, step: int, bc: BoundarySpec) -> np.ndarray:
    """Value of the neighbour at ``index + step`` along ``axis`` with the ghost rule applied."""
    nb = _shift_from(f, axis, step, bc.periodic)
    valid = bc.neighbor_valid(f.shape, axis, step)
    return np.where(valid, nb, bc.sign * f)


def _shift_from(f: np.ndarray, axis: int, step: int, periodic: bool) -> np.ndarray:
    """Raw neighbour values ``f[index + step]``; zero outside a non-periodic domain."""
    if periodic:
        return np.roll(f, -step, axis=axis)
    out = np.zeros_like(f)
    src = [slice(None)] * 2
    dst = [slice(None)] * 2
    if step > 0:
        dst[axis], src[axis] = slice(None, -step), slice(step, None)
    else:
        dst[axis], src[axis] = slice(-step, None), slice(None, step)
    out[tuple(dst)] = f[tuple(src)]
    return out


def _zero_solid(out: np.ndarray, bc: BoundarySpec) -> np.ndarray:
    if bc.pore is not None:
        out[..., ~bc.active(out.shape[-2:])] = 0.0
    return out


def gradient(f: np.ndarray, grid: Grid2D, bc: BoundarySpec) -> np.ndarray:
    """Central-difference gradient, returned with shape ``(2, ny, nx)``."""
    g = np.empty((2,) + f.shape)
    g[0] = (_neighbor(f, 1, 1, bc) - _neighbor(f, 1, -1, bc)) / (2.0 * grid.dx)
    g[1] = (_neighbor(f, 0, 1, bc) - _neighbor(f, 0, -1, bc)) / (2.0 * grid.dy)
    return _zero_solid(g, bc)


def divergence(v: np.ndarray, grid: Grid2D, bc: BoundarySpec) -> np.ndarray:
    d = (_neighbor(v[0], 1, 1, bc) - _neighbor(v[0], 1, -1, bc)) / (2.0 * grid.dx)
    d += (_neighbor(v[1], 0, 1, bc) - _neighbor(v[1], 0, -1, bc)) / (2.0 * grid.dy)
    return _zero_solid(d, bc)


def laplacian(
    f: np.ndarray, grid: Grid2D, bc: BoundarySpec, weights: tuple[float, float] = (1.0, 1.0)
) -> np.ndarray:
    """Compact 5-point Laplacian; ``weights`` scales the x1 and x2 second differences."""
    out = weights[0] * (_neighbor(f, 1, 1, bc) - 2.0 * f + _neighbor(f, 1, -1, bc)) / grid.dx**2
    out += weights[1] * (_neighbor(f, 0, 1, bc) - 2.0 * f + _neighbor(f, 0, -1, bc)) / grid.dy**2
    return _zero_solid(out, bc)


def projection_laplacian(f: np.ndarray, grid: Grid2D, bc: BoundarySpec) -> np.ndarray:
    return divergence(gradient(f, grid, bc.with_kind(NEUMANN)), grid, bc.with_kind(DIRICHLET))


def face_velocities(u: np.ndarray, bc: BoundarySpec) -> tuple[np.ndarray, np.ndarray]:
    """East and north face velocities by averaging; zero on walls and solid faces."""
    dbc = bc.with_kind(DIRICHLET)
    ue = 0.5 * (u[0] + _neighbor(u[0], 1, 1, dbc))
    un = 0.5 * (u[1] + _neighbor(u[1], 0, 1, dbc))
    return ue, un


def advect_upwind(c: np.ndarray, u: np.ndarray, grid: Grid2D, bc: BoundarySpec | None = None) -> np.ndarray:
    """First-order upwind ``u . grad c`` using face-averaged velocities.

    The upwind side is selected per face by the sign of the face velocity.
    Written in this form the sum over cells equals ``-sum(c * divergence(u))``,
    so a discretely divergence-free ``u`` transports no mass.
    """
    bc = bc or BoundarySpec()
    ue, un = face_velocities(u, bc)
    return advect_faces(c, ue, un, grid, bc)


def advect_faces(
    c: np.ndarray, ue: np.ndarray, un: np.ndarray, grid: Grid2D, bc: BoundarySpec | None = None
) -> np.ndarray:
    """Upwind ``u . grad c`` from east/north face velocities (zero on closed faces)."""
    bc = bc or BoundarySpec()
    nbc = bc.with_kind(NEUMANN)
    uw = np.where(bc.neighbor_valid(c.shape, 1, -1), _shift_from(ue, 1, -1, bc.periodic), 0.0)
    us = np.where(bc.neighbor_valid(c.shape, 0, -1), _shift_from(un, 0, -1, bc.periodic), 0.0)
    out = np.maximum(uw, 0.0) * (c - _neighbor(c, 1, -1, nbc)) / grid.dx
    out += np.minimum(ue, 0.0) * (_neighbor(c, 1, 1, nbc) - c) / grid.dx
    out += np.maximum(us, 0.0) * (c - _neighbor(c, 0, -1, nbc)) / grid.dy
    out += np.minimum(un, 0.0) * (_neighbor(c, 0, 1, nbc) - c) / grid.dy
    return _zero_solid(out, bc)


def l2_norm(f: np.ndarray, grid: Grid2D, active: np.ndarray | None = None) -> float:
    """Discrete L2 norm, ``sqrt(sum f**2 dx dy)`` over active cells (all components)."""
    if active is not None:
        f = f[..., active]
    return math.sqrt(float(np.sum(f * f)) * grid.cell_area)


def pore_mean(f: np.ndarray, active: np.ndarray | None = None) -> float:
    return float(f.mean() if active is None else f[active].mean())


def max_cg_iterations(n_cells: int) -> int:
    return max(2000, math.ceil(10.0 * math.sqrt(n_cells)))


def conjugate_gradient(
    apply: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    x0: np.ndarray | None = None,
    *,
    tol: float = 1e-8,
    atol: float = 0.0,
    maxiter: int | None = None,
    precond: Callable[[np.ndarray], np.ndarray] | None = None,
) -> tuple[np.ndarray, dict]:
    """Preconditioned CG for a symmetric positive (semi)definite operator.

    Stops when ``||b - A x|| <= max(tol * ||b||, atol)`` (Euclidean norms over
    the array). Raises :class:`SolverError` if ``maxiter`` is exhausted.
    """
    maxiter = maxiter or max_cg_iterations(b.size)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - apply(x) if x0 is not None else b.copy()
    bnorm = math.sqrt(float(np.vdot(b, b)))
    target = max(tol * bnorm, atol)
    rnorm = math.sqrt(float(np.vdot(r, r)))
    if rnorm <= target:
        return x, {"iterations": 0, "residual": rnorm, "rhs_norm": bnorm}
    z = precond(r) if precond else r
    p = z.copy()
    rz = float(np.vdot(r, z))
    for it in range(1, maxiter + 1):
        ap = apply(p)
        pap = float(np.vdot(p, ap))
        if pap <= 0.0:
            raise SolverError("operator is not positive definite on the search direction", rnorm, it)
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        rnorm = math.sqrt(float(np.vdot(r, r)))
        if rnorm <= target:
            return x, {"iterations": it, "residual": rnorm, "rhs_norm": bnorm}
        z = precond(r) if precond else r
        rz_new = float(np.vdot(r, z))
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError("conjugate gradient did not converge", rnorm, maxiter)


def _probe_stride(n: int, reach: int, periodic: bool) -> int:
    s = 2 * reach + 1
    if not periodic or n <= s:
        return min(s, n) if periodic else s
    for cand in range(s, n + 1):
        if n % cand == 0:
            return cand
    return n


def assemble_by_probing(
    apply: Callable[[np.ndarray], np.ndarray],
    shape: tuple[int, int],
    reach: int,
    periodic: bool = False,
) -> sp.csr_matrix:
    """Recover the sparse matrix of a local linear stencil operator.

    Columns whose distance (in both axes) exceeds ``reach`` must not interact.
    Cells are coloured so that every stencil window contains each colour at
    most once, then one operator application per colour gives a column batch.
    """
    ny, nx = shape
    sy, sx = _probe_stride(ny, reach, periodic), _probe_stride(nx, reach, periodic)
    jj, ii = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    rows, cols, vals = [], [], []
    for cy in range(sy):
        for cx in range(sx):
            e = np.zeros(shape)
            e[cy::sy, cx::sx] = 1.0
            out = apply(e)
            dj = np.mod(cy - jj, sy)
            dj = np.where(dj > reach, dj - sy, dj)
            di = np.mod(cx - ii, sx)
            di = np.where(di > reach, di - sx, di)
            tj, ti = jj + dj, ii + di
            keep = (np.abs(dj) <= reach) & (np.abs(di) <= reach) & (out != 0.0)
            if periodic:
                tj, ti = np.mod(tj, ny), np.mod(ti, nx)
            else:
                keep &= (tj >= 0) & (tj < ny) & (ti >= 0) & (ti < nx)
            rows.append((jj * nx + ii)[keep])
            cols.append((tj * nx + ti)[keep])
            vals.append(out[keep])
    n = nx * ny
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )


class FactorizedInverse:
    """Sparse LU of a stencil operator restricted to the active cells.

    Used as a CG preconditioner for the operator ``apply``. ``shift`` (relative
    to the mean diagonal) regularizes a constant null space, which
    ``remove_mean`` then projects out of the result again.
    """

    def __init__(
        self,
        apply: Callable[[np.ndarray], np.ndarray],
        shape: tuple[int, int],
        active: np.ndarray,
        reach: int,
        periodic: bool = False,
        shift: float = 0.0,
        remove_mean: bool = False,
    ):
        self.shape = shape
        self.active = np.asarray(active, bool)
        self.remove_mean = remove_mean
        idx = np.flatnonzero(self.active.ravel())
        mat = assemble_by_probing(apply, shape, reach, periodic)
        mat = mat[idx][:, idx].tocsc()
        if shift:
            scale = float(np.abs(mat.diagonal()).mean())
            mat = mat + shift * scale * sp.identity(mat.shape[0], format="csc")
        self.matrix = mat
        self._lu = spla.splu(mat)
        self._idx = idx

    def __call__(self, r: np.ndarray) -> np.ndarray:
        z = np.zeros(r.size)
        z[self._idx] = self._lu.solve(r.ravel()[self._idx])
        if self.remove_mean:
            z[self._idx] -= z[self._idx].mean()
        return z.reshape(r.shape)


def solve_poisson_neumann(
    rhs: np.ndarray,
    grid: Grid2D,
    bc: BoundarySpec | None = None,
    tol: float = 1e-8,
    *,
    compat_tol: float = 1e-10,
    operator: str = "compact",
    precond: Callable[[np.ndarray], np.ndarray] | None = None,
    x0: np.ndarray | None = None,
    maxiter: int | None = None,
) -> tuple[np.ndarray, dict]:
    """Solve ``L phi = rhs`` with homogeneous Neumann conditions; ``phi`` has zero mean.

    ``operator='compact'`` uses :func:`laplacian`, ``'projection'`` uses
    :func:`projection_laplacian`. The compatibility check is relative:
    ``|mean(rhs)| <= compat_tol * max(1, rms(rhs))`` over active cells.
    """
    bc = (bc or BoundarySpec()).with_kind(NEUMANN)
    act = bc.active(rhs.shape)
    vals = rhs[act]
    mean = float(vals.mean()) if vals.size else 0.0
    rms = float(np.sqrt(np.mean(vals**2))) if vals.size else 0.0
    if abs(mean) > compat_tol * max(1.0, rms):
        raise CompatibilityError(f"Neumann source is not mean-zero: mean={mean:.6e}")
    b = np.where(act, rhs - mean, 0.0)
    if operator == "compact":
        op = laplacian
    elif operator == "projection":
        op = projection_laplacian
    else:
        raise InvalidArgumentError(f"unknown Poisson operator {operator!r}")

    def neg(x):
        return -op(x, grid, bc)

    phi, info = conjugate_gradient(
        neg, -b, x0=x0, tol=tol, maxiter=maxiter or max_cg_iterations(grid.nx * grid.ny), precond=precond
    )
    phi[act] -= phi[act].mean()
    phi[~act] = 0.0
    info["compat_mean"] = mean
    return phi, info
