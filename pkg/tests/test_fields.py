import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from porous_sch.errors import CompatibilityError, SolverError
from porous_sch.fields import (
    DIRICHLET,
    NEUMANN,
    BoundarySpec,
    FactorizedInverse,
    advect_upwind,
    assemble_by_probing,
    conjugate_gradient,
    divergence,
    gradient,
    laplacian,
    max_cg_iterations,
    projection_laplacian,
    solve_poisson_neumann,
)
from porous_sch.grid import CellGeometry, build_grid, build_pore_mask

LX, LY = 1.2, 1.0


@pytest.fixture
def grid():
    return build_grid(32, 24, LX, LY)


@pytest.fixture
def disk_bc(grid):
    return BoundarySpec.from_mask(build_pore_mask(grid, CellGeometry("disk", 0.25), 0.2))


def interior(shape, k=1):
    m = np.zeros(shape, bool)
    m[k:-k, k:-k] = True
    return m


def test_gradient_of_constant(grid):
    g = gradient(np.full(grid.shape, 7.0), grid, BoundarySpec())
    assert np.all(g == 0.0)


def test_gradient_of_linear_interior(grid):
    X1, _ = grid.centers()
    g = gradient(X1, grid, BoundarySpec())
    np.testing.assert_allclose(g[0][:, 1:-1], 1.0, rtol=0, atol=1e-12)
    np.testing.assert_allclose(g[1], 0.0, atol=1e-12)


def test_divergence_examples(grid):
    X1, _ = grid.centers()
    bc = BoundarySpec(DIRICHLET)
    d = divergence(np.ones((2,) + grid.shape), grid, bc)
    assert np.all(d[interior(grid.shape)] == 0.0)
    d = divergence(np.stack([X1, np.zeros_like(X1)]), grid, bc)
    np.testing.assert_allclose(d[interior(grid.shape)], 1.0, atol=1e-12)


def test_div_grad_is_projection_laplacian(grid, disk_bc):
    f = np.random.default_rng(0).standard_normal(grid.shape)
    np.testing.assert_allclose(
        divergence(gradient(f, grid, disk_bc), grid, disk_bc.with_kind(DIRICHLET)),
        projection_laplacian(f, grid, disk_bc),
        atol=1e-10,
    )


def test_laplacian_of_linear_is_zero(grid):
    X1, X2 = grid.centers()
    lap = laplacian(2 * X1 - 3 * X2, grid, BoundarySpec())
    np.testing.assert_allclose(lap[interior(grid.shape)], 0.0, atol=1e-9)


def test_laplacian_constant_with_mask(grid, disk_bc):
    lap = laplacian(np.full(grid.shape, 3.0), grid, disk_bc)
    assert np.all(lap == 0.0)


@pytest.mark.parametrize("n", [32, 64])
def test_laplacian_cos_eigenfunction(n):
    g = build_grid(n, n, LX, LY)
    X1, _ = g.centers()
    f = np.cos(np.pi * X1 / LX)
    err = np.abs(laplacian(f, g, BoundarySpec()) + (np.pi / LX) ** 2 * f).max()
    assert err < 2.0 * (np.pi / LX) ** 4 * g.dx**2


def test_advection_examples(grid):
    X1, _ = grid.centers()
    u = np.zeros((2,) + grid.shape)
    assert np.all(advect_upwind(X1, u, grid) == 0.0)
    u[0] = 1.0
    assert np.allclose(advect_upwind(np.full(grid.shape, 2.0), u, grid), 0.0)
    a = advect_upwind(X1, u, grid)
    np.testing.assert_allclose(a[:, 1:-1], 1.0, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_summation_by_parts(seed):
    g = build_grid(20, 16, LX, LY)
    bc = BoundarySpec.from_mask(build_pore_mask(g, CellGeometry("disk", 0.25), 0.3))
    f = np.random.default_rng(seed).standard_normal(g.shape)
    act = bc.active(g.shape)
    assert abs(np.sum(laplacian(f, g, bc)[act])) < 1e-9 * np.abs(f).sum() / g.dx**2


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.booleans())
def test_divergence_is_minus_gradient_adjoint(seed, periodic):
    g = build_grid(12, 10, 1.0, 1.0)
    mask = build_pore_mask(g, CellGeometry("disk", 0.25), 0.5)
    bc = BoundarySpec(NEUMANN, mask.pore, periodic=periodic)
    rng = np.random.default_rng(seed)
    f = rng.standard_normal(g.shape)
    v = rng.standard_normal((2,) + g.shape)
    act = bc.active(g.shape)
    v[:, ~act] = 0.0
    f[~act] = 0.0
    lhs = np.sum(gradient(f, g, bc) * v)
    rhs = -np.sum(f * divergence(v, g, bc.with_kind(DIRICHLET)))
    assert abs(lhs - rhs) < 1e-10 * (1 + abs(lhs))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1), st.booleans())
def test_advection_conserves_mass_for_projected_velocity(seed, masked):
    from porous_sch.stokes import Projector

    g = build_grid(24, 20, LX, LY)
    bc = BoundarySpec.from_mask(build_pore_mask(g, CellGeometry("disk", 0.25), 0.2)) if masked else BoundarySpec()
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((2,) + g.shape)
    u[:, ~bc.active(g.shape)] = 0.0
    u = Projector(g, bc)(u)[0]
    c = rng.uniform(0, 1, g.shape)
    total = np.sum(advect_upwind(c, u, g, bc)[bc.active(g.shape)])
    assert abs(total) < 1e-8


def test_poisson_zero_rhs(grid):
    phi, info = solve_poisson_neumann(np.zeros(grid.shape), grid)
    assert np.all(phi == 0.0)


def test_poisson_cos_solution():
    errs = []
    for n in (32, 64):
        g = build_grid(n, n, LX, LY)
        X1, _ = g.centers()
        exact = np.cos(np.pi * X1 / LX)
        phi, _ = solve_poisson_neumann(-((np.pi / LX) ** 2) * exact, g, tol=1e-12)
        errs.append(np.abs(phi - exact).max())
    assert errs[1] < 0.3 * errs[0]
    assert errs[1] < 1e-3


def test_poisson_incompatible_reports_mean(grid):
    with pytest.raises(CompatibilityError, match="mean=1.0"):
        solve_poisson_neumann(np.ones(grid.shape), grid)


def test_poisson_mean_zero_and_idempotent(grid, disk_bc):
    rng = np.random.default_rng(3)
    rhs = rng.standard_normal(grid.shape)
    act = disk_bc.active(grid.shape)
    rhs[act] -= rhs[act].mean()
    phi, _ = solve_poisson_neumann(rhs, grid, disk_bc, tol=1e-12)
    assert abs(phi[act].mean()) < 1e-12
    phi2, _ = solve_poisson_neumann(laplacian(phi, grid, disk_bc), grid, disk_bc, tol=1e-12)
    np.testing.assert_allclose(phi2, phi, atol=1e-8 * np.abs(phi).max())


def test_cg_iteration_cap():
    assert max_cg_iterations(128 * 128) == 2000
    assert max_cg_iterations(1000 * 1000) == 10000


def test_cg_raises_with_residual():
    A = np.diag(np.linspace(1, 1e6, 400))
    b = np.ones(400)
    with pytest.raises(SolverError) as exc:
        conjugate_gradient(lambda x: A @ x, b, tol=1e-14, maxiter=3)
    assert exc.value.iterations == 3
    assert exc.value.residual > 0


def test_cg_matches_dense_solve():
    rng = np.random.default_rng(1)
    M = rng.standard_normal((30, 30))
    A = M @ M.T + 30 * np.eye(30)
    b = rng.standard_normal(30)
    x, info = conjugate_gradient(lambda v: A @ v, b, tol=1e-12)
    np.testing.assert_allclose(x, np.linalg.solve(A, b), rtol=1e-9)


@pytest.mark.parametrize("periodic", [False, True])
def test_probing_recovers_operator(periodic):
    g = build_grid(10, 8, 1.0, 1.0)
    bc = BoundarySpec(NEUMANN, build_pore_mask(g, CellGeometry("disk", 0.25), 0.5).pore, periodic=periodic)

    def apply(f):
        return projection_laplacian(f, g, bc)

    M = assemble_by_probing(apply, g.shape, 2, periodic).toarray()
    f = np.random.default_rng(0).standard_normal(g.shape)
    np.testing.assert_allclose(M @ f.ravel(), apply(f).ravel(), atol=1e-9)
    np.testing.assert_allclose(M, M.T, atol=1e-9)


def test_factorized_inverse_is_exact():
    g = build_grid(16, 12, 1.0, 1.0)
    bc = BoundarySpec(DIRICHLET)
    op = lambda f: -laplacian(f, g, bc)  # noqa: E731
    inv = FactorizedInverse(op, g.shape, np.ones(g.shape, bool), 1)
    r = np.random.default_rng(0).standard_normal(g.shape)
    np.testing.assert_allclose(op(inv(r)), r, atol=1e-9)
