import numpy as np
import pytest
from hypothesis import given, strategies as st

from porous_sch.errors import InvalidArgumentError
from porous_sch.fields import BoundarySpec
from porous_sch.grid import CellGeometry, build_grid, build_pore_mask
from porous_sch.potential import (
    PhysicalParams,
    bulk_energy,
    bulk_force,
    bulk_force_deriv,
    chemical_potential,
    total_free_energy,
)


def test_bulk_energy_values():
    assert bulk_energy(0.0, 2.0) == 0.0
    assert bulk_energy(1.0, 2.0) == 0.0
    assert bulk_energy(0.5, 2.0) == 2.0
    assert bulk_energy(0.5, 1.0) == 1.0


def test_bulk_force_values():
    for x in (0.0, 0.5, 1.0):
        assert abs(bulk_force(x, 2.0)) <= 1e-14
    assert bulk_force(0.25, 2.0) == pytest.approx(6.0, rel=1e-15)


def test_bulk_force_deriv_values():
    assert bulk_force_deriv(0.0, 1.0) == 32.0
    assert bulk_force_deriv(0.5, 1.0) == -16.0
    xs = np.linspace(-10, 10, 20001)
    assert bulk_force_deriv(xs, 1.5).min() >= -16 * 1.5 - 1e-12


def test_force_matches_energy_difference_quotient():
    rng = np.random.default_rng(42)
    xs = rng.uniform(-1, 2, 100)
    h = 1e-5
    for b in (1.0, 2.0):
        fd = (bulk_energy(xs + h, b) - bulk_energy(xs - h, b)) / (2 * h)
        np.testing.assert_allclose(fd, bulk_force(xs, b), rtol=1e-6, atol=1e-8)
        fd2 = (bulk_force(xs + h, b) - bulk_force(xs - h, b)) / (2 * h)
        np.testing.assert_allclose(fd2, bulk_force_deriv(xs, b), rtol=1e-6, atol=1e-8)


@given(st.floats(-50, 50), st.floats(0.01, 10))
def test_energy_nonnegative(x, b):
    assert bulk_energy(x, b) >= 0.0


def test_params_validation_and_stab():
    p = PhysicalParams()
    assert p.s == 128.0
    assert PhysicalParams(b=1).s == 64.0
    assert PhysicalParams(stab=5.0).s == 5.0
    with pytest.raises(InvalidArgumentError):
        PhysicalParams(a=0)
    with pytest.raises(InvalidArgumentError):
        PhysicalParams(mu=-1)


def test_chemical_potential_constants():
    g = build_grid(16, 16, 1.2, 1.0)
    p = PhysicalParams(a=7.0, b=2.0)
    assert np.all(chemical_potential(np.zeros(g.shape), g, p, BoundarySpec()) == 0.0)
    assert np.all(chemical_potential(np.full(g.shape, 0.5), g, p, BoundarySpec()) == 0.0)
    np.testing.assert_allclose(chemical_potential(np.full(g.shape, 0.25), g, p, BoundarySpec()), 6.0, rtol=1e-15)


def test_total_free_energy_constants():
    g = build_grid(128, 128, 1.2, 1.0)
    p = PhysicalParams(b=2.0)
    assert total_free_energy(np.zeros(g.shape), g, p) == 0.0
    assert total_free_energy(np.full(g.shape, 0.5), g, p) == pytest.approx(2.4, rel=1e-12)


def test_total_free_energy_masked_counts_pore_only():
    g = build_grid(64, 64, 1.0, 1.0)
    mask = build_pore_mask(g, CellGeometry("disk", 0.25), 0.5)
    e = total_free_energy(np.full(g.shape, 0.5), g, PhysicalParams(b=2.0), mask)
    assert e == pytest.approx(2.0 * mask.pore_area, rel=1e-12)


def test_energy_translation_invariant_under_periodic_shift():
    g = build_grid(64, 64, 1.0, 1.0)
    X1, X2 = g.centers()
    c = 0.5 + 0.4 * np.sin(2 * np.pi * X1) * np.cos(2 * np.pi * X2)
    p = PhysicalParams()
    bc = BoundarySpec(periodic=True)
    e0 = total_free_energy(c, g, p, bc=bc)
    for shift in (1, 7, 32):
        e1 = total_free_energy(np.roll(c, shift, axis=1), g, p, bc=bc)
        assert abs(e1 - e0) <= 1e-12 * abs(e0)
