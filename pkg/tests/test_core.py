import math

import numpy as np
import pytest

from ionbath.constants import HBAR, KB, TWOPI, joule_to_uk, uk_to_joule
from ionbath.core import (
    LI6,
    YB171,
    BudgetRow,
    EnergyBudget,
    InteractionModel,
    Species,
    atom_ion_potential,
    collision_energy,
    default_energy_budget,
    default_model,
    langevin_rate,
    reduced_mass,
)
from ionbath.errors import DomainError


def test_reduced_mass_accepts_species_and_floats():
    mu = reduced_mass(YB171, LI6)
    assert mu == reduced_mass(YB171.mass, LI6.mass)
    assert mu < LI6.mass
    with pytest.raises(DomainError):
        reduced_mass(1.0, -1.0)


def test_species_rejects_nonpositive_mass():
    with pytest.raises(DomainError):
        Species(mass=0.0, charge=0.0, label="bad")


def test_characteristic_scales():
    m = default_model()
    mu = m.mu
    assert math.isclose(m.r4, math.sqrt(mu * m.c4) / HBAR, rel_tol=1e-14)
    assert math.isclose(m.e_s, HBAR**2 / (2.0 * mu * m.r4**2), rel_tol=1e-14)
    assert math.isclose(m.k_langevin, TWOPI * math.sqrt(m.c4 / mu), rel_tol=1e-14)
    # frozen reference numbers for the bundled pair
    assert math.isclose(m.r4, 6.9747e-8, rel_tol=1e-4)
    assert math.isclose(joule_to_uk(m.e_s), 8.5805, rel_tol=1e-4)
    assert math.isclose(m.k_langevin, 4.7897e-15, rel_tol=1e-4)


def test_potential_landscape():
    m = default_model()
    # zero crossing at sqrt(2 c6), minimum at sqrt(3 c6)
    assert math.isclose(m.r_zero, math.sqrt(2.0 * m.c6), rel_tol=1e-14)
    assert math.isclose(m.r_min, math.sqrt(3.0 * m.c6), rel_tol=1e-14)
    assert abs(atom_ion_potential(m.r_zero, m)) < 1e-40
    v_min = atom_ion_potential(m.r_min, m)
    assert v_min < 0.0
    eps = 1e-6 * m.r_min
    assert atom_ion_potential(m.r_min - eps, m) > v_min
    assert atom_ion_potential(m.r_min + eps, m) > v_min
    # asymptotics: pure induced-dipole tail at 100 R4
    r = 100.0 * m.r4
    assert math.isclose(atom_ion_potential(r, m), -m.c4 / (2.0 * r**4), rel_tol=1e-6)


def test_potential_array_and_domain():
    m = default_model()
    r = np.array([1e-9, 2e-9, 5e-9])
    v = atom_ion_potential(r, m)
    assert v.shape == (3,)
    with pytest.raises(DomainError):
        atom_ion_potential(0.0, m)
    with pytest.raises(DomainError):
        atom_ion_potential(np.array([1e-9, -1e-9]), m)


def test_zero_c4_disables_derived_scales():
    free = InteractionModel(c4=0.0, c6=0.0)
    with pytest.raises(DomainError):
        free.r4
    with pytest.raises(DomainError):
        free.k_langevin
    with pytest.raises(DomainError):
        InteractionModel(c4=-1e-57)


def test_capture_radius():
    m = default_model()
    e = uk_to_joule(10.0)
    assert math.isclose(m.capture_radius(e), (2.0 * m.c4 / e) ** 0.25, rel_tol=1e-14)
    with pytest.raises(DomainError):
        m.capture_radius(0.0)


def test_langevin_rate_with_density():
    m = default_model()
    assert langevin_rate(m) == m.k_langevin
    rho = 2.4e16
    assert math.isclose(langevin_rate(m, rho), rho * m.k_langevin, rel_tol=1e-14)
    with pytest.raises(DomainError):
        langevin_rate(m, -1.0)


def test_collision_energy_weights():
    m = default_model()
    mu = m.mu
    e_i, e_a = uk_to_joule(100.0), uk_to_joule(10.0)
    expect = (mu / m.ion.mass) * e_i + (mu / m.atom.mass) * e_a
    assert math.isclose(collision_energy(e_i, e_a, m), expect, rel_tol=1e-14)
    # the atom carries most of its kinetic energy into the collision frame
    assert mu / m.atom.mass > 0.9
    assert mu / m.ion.mass < 0.1
    with pytest.raises(DomainError):
        collision_energy(-1.0, 0.0, m)


# --- energy ledger ------------------------------------------------------------------

def test_budget_row_validation():
    with pytest.raises(DomainError):
        BudgetRow("bad", 1.0, 0.1, carrier="electron")


def test_default_budget_totals():
    """The bundled ledger sums to the published ion and collision energies."""
    budget = default_energy_budget()
    tot = budget.totals()
    uk = 1e-6 * KB
    assert math.isclose(tot.ion_kinetic / uk, 193.0, abs_tol=1e-9)
    assert math.isclose(tot.ion_kinetic_err / uk, 42.2966, abs_tol=1e-3)
    assert math.isclose(tot.collision / uk, 9.8934, abs_tol=1e-3)
    assert math.isclose(tot.collision_err / uk, 2.0174, abs_tol=1e-3)
    assert math.isclose(tot.ratio_to_es, 1.1530, abs_tol=1e-3)


def test_budget_correlation_groups():
    # two rows in one group add errors linearly: 2+2 -> 4, not sqrt(8)
    m = default_model()
    uk = 1e-6 * KB
    b = EnergyBudget(model=m)
    b.add(BudgetRow("a", 10 * uk, 2 * uk, group="g"))
    b.add(BudgetRow("b", 10 * uk, 2 * uk, group="g"))
    assert math.isclose(b.totals().ion_kinetic_err / uk, 4.0, rel_tol=1e-12)
    # ungrouped rows combine in quadrature
    b2 = EnergyBudget(model=m)
    b2.add(BudgetRow("a", 10 * uk, 2 * uk))
    b2.add(BudgetRow("b", 10 * uk, 2 * uk))
    assert math.isclose(b2.totals().ion_kinetic_err / uk, math.sqrt(8.0), rel_tol=1e-12)


def test_budget_bounds_carry_no_error():
    m = default_model()
    uk = 1e-6 * KB
    b = EnergyBudget(model=m)
    b.add(BudgetRow("limit", 10 * uk, 5 * uk, bound=True))
    tot = b.totals()
    assert math.isclose(tot.ion_kinetic / uk, 10.0, rel_tol=1e-12)
    assert tot.ion_kinetic_err == 0.0


def test_budget_collision_conversion():
    # collision error = weighted ion error + weighted atom error, linearly
    m = default_model()
    uk = 1e-6 * KB
    b = EnergyBudget(model=m)
    b.add(BudgetRow("ion part", 100 * uk, 10 * uk))
    b.add(BudgetRow("atom part", 3 * uk, 1 * uk, carrier="atom"))
    tot = b.totals()
    w_i = m.mu / m.ion.mass
    w_a = m.mu / m.atom.mass
    assert math.isclose(tot.collision / uk, 100 * w_i + 3 * w_a, rel_tol=1e-12)
    assert math.isclose(tot.collision_err / uk, 10 * w_i + 1 * w_a, rel_tol=1e-12)
    rows = b.collision_rows()
    assert rows[0][0] == "ion part"
    assert math.isclose(rows[1][1] / uk, 3 * w_a, rel_tol=1e-12)
