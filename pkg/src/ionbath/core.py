"""Species data, the ion-atom interaction model, and energy bookkeeping.

The interaction between the ion and a ground-state atom is
``V(r) = C4 * (-1/(2 r^4) + C6 / r^6)``, an attractive induced-dipole tail
with a repulsive core standing in for the short-range wall.  Everything in
SI units; the characteristic length ``R4 = sqrt(mu C4) / hbar`` and energy
``E_s = hbar^2 / (2 mu R4^2)`` set the s-wave scattering scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .constants import AMU, E_CHARGE, HBAR, KB, TWOPI
from .errors import DomainError

__all__ = [
    "Species",
    "LI6",
    "YB171",
    "InteractionModel",
    "default_model",
    "reduced_mass",
    "atom_ion_potential",
    "langevin_rate",
    "collision_energy",
    "BudgetRow",
    "EnergyBudget",
    "BudgetTotals",
    "default_energy_budget",
]


@dataclass(frozen=True)
class Species:
    """A point particle: mass in kg, charge in C, display label."""

    mass: float
    charge: float
    label: str

    def __post_init__(self):
        if self.mass <= 0.0:
            raise DomainError(f"non-positive mass for species {self.label!r}")


LI6 = Species(mass=6.015_122_887_4 * AMU, charge=0.0, label="6Li")
YB171 = Species(mass=170.936_330_2 * AMU, charge=E_CHARGE, label="171Yb+")


def reduced_mass(a: Species | float, b: Species | float) -> float:
    """Reduced mass of two bodies, accepting Species or raw masses in kg."""
    ma = a.mass if isinstance(a, Species) else float(a)
    mb = b.mass if isinstance(b, Species) else float(b)
    if ma <= 0.0 or mb <= 0.0:
        raise DomainError("masses must be positive")
    return ma * mb / (ma + mb)


@dataclass(frozen=True)
class InteractionModel:
    """Ion-atom pair potential parameters plus the derived scattering scales.

    c4 : J m^4, induced-dipole strength (positive, enters as -c4/(2 r^4))
    c6 : m^2, core parameter; the potential crosses zero at sqrt(2 c6)
         and has its minimum at sqrt(3 c6)
    ion, atom : species; the reduced mass is derived from them
    """

    c4: float = 5.607e-57
    c6: float = 5e-19
    ion: Species = YB171
    atom: Species = LI6

    def __post_init__(self):
        # zero is allowed so reference problems (free particle, hard sphere)
        # can reuse the channel machinery; the derived scales then raise
        if self.c4 < 0.0 or self.c6 < 0.0:
            raise DomainError("c4 and c6 must be non-negative")

    @property
    def mu(self) -> float:
        """Reduced mass in kg."""
        return reduced_mass(self.ion, self.atom)

    @property
    def r4(self) -> float:
        """Characteristic length of the r^-4 tail, sqrt(mu c4)/hbar."""
        if self.c4 == 0.0:
            raise DomainError("r4 undefined without a polarization tail")
        return math.sqrt(self.mu * self.c4) / HBAR

    @property
    def e_s(self) -> float:
        """s-wave energy scale hbar^2 / (2 mu R4^2) in J."""
        return HBAR**2 / (2.0 * self.mu * self.r4**2)

    @property
    def k_langevin(self) -> float:
        """Capture rate coefficient 2 pi sqrt(c4 / mu) in m^3/s."""
        if self.c4 == 0.0:
            raise DomainError("Langevin rate undefined without a polarization tail")
        return TWOPI * math.sqrt(self.c4 / self.mu)

    @property
    def r_zero(self) -> float:
        """Radius where the pair potential crosses zero."""
        return math.sqrt(2.0 * self.c6)

    @property
    def r_min(self) -> float:
        """Radius of the potential minimum."""
        return math.sqrt(3.0 * self.c6)

    def capture_radius(self, e_col: float) -> float:
        """Critical impact parameter (2 c4 / E)^(1/4) for capture at energy E."""
        if e_col <= 0.0:
            raise DomainError("collision energy must be positive")
        return (2.0 * self.c4 / e_col) ** 0.25


def default_model() -> InteractionModel:
    """The bundled 171Yb+ / 6Li model."""
    return InteractionModel()


def atom_ion_potential(r, model: InteractionModel | None = None):
    """Pair potential V(r) = c4 (-1/(2 r^4) + c6/r^6) in J; r in m.

    Accepts scalars or arrays.  Raises DomainError for any r <= 0.
    """
    model = model or default_model()
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr <= 0.0):
        raise DomainError("pair separation must be positive")
    v = model.c4 * (-0.5 / r_arr**4 + model.c6 / r_arr**6)
    return float(v) if np.isscalar(r) else v


def langevin_rate(model: InteractionModel | None = None, density: float | None = None):
    """Capture rate coefficient in m^3/s, or a rate in 1/s when a density is given."""
    model = model or default_model()
    k = model.k_langevin
    if density is None:
        return k
    if density < 0.0:
        raise DomainError("density must be non-negative")
    return k * density


def collision_energy(
    e_ion: float, e_atom: float, model: InteractionModel | None = None
) -> float:
    """Two-body collision energy from the lab-frame kinetic energies.

    E_col = (mu/m_ion) E_ion + (mu/m_atom) E_atom.  Inputs in J, output in J.
    Negative inputs are rejected.
    """
    if e_ion < 0.0 or e_atom < 0.0:
        raise DomainError("kinetic energies must be non-negative")
    model = model or default_model()
    mu = model.mu
    return (mu / model.ion.mass) * e_ion + (mu / model.atom.mass) * e_atom


# --------------------------------------------------------------------------
# Energy budget ledger
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BudgetRow:
    """One line of the kinetic-energy ledger.

    value, err : J (kinetic energy in the lab frame and its 1-sigma error)
    carrier    : "ion" or "atom"; selects the reduced-mass weight
    group      : rows sharing a group label derive from one measurement and
                 their errors add linearly before groups combine in quadrature
    bound      : True if the value is an upper limit (error excluded from totals)
    """

    label: str
    value: float
    err: float
    carrier: str = "ion"
    group: str | None = None
    bound: bool = False

    def __post_init__(self):
        if self.carrier not in ("ion", "atom"):
            raise DomainError(f"unknown carrier {self.carrier!r}")
        if self.value < 0.0 or self.err < 0.0:
            raise DomainError("budget entries must be non-negative")


@dataclass(frozen=True)
class BudgetTotals:
    """Totals of an energy budget, all in J."""

    ion_kinetic: float
    ion_kinetic_err: float
    collision: float
    collision_err: float
    ratio_to_es: float
    ratio_err: float


@dataclass
class EnergyBudget:
    """A list of kinetic-energy contributions plus the combination rules.

    Ion-row errors combine in quadrature over correlation groups (linear
    within a group).  The collision total converts each carrier with its
    reduced-mass weight; its uncertainty adds the weighted ion and atom
    contributions linearly, a conservative choice appropriate when several
    rows are instrument bounds rather than independent Gaussian errors.
    """

    rows: list[BudgetRow] = field(default_factory=list)
    model: InteractionModel = field(default_factory=default_model)

    def add(self, row: BudgetRow) -> None:
        self.rows.append(row)

    def _weight(self, carrier: str) -> float:
        mu = self.model.mu
        mass = self.model.ion.mass if carrier == "ion" else self.model.atom.mass
        return mu / mass

    def _grouped_quadrature(self, rows: list[BudgetRow], weighted: bool) -> float:
        groups: dict[str, float] = {}
        singles = 0.0
        for row in rows:
            w = self._weight(row.carrier) if weighted else 1.0
            err = 0.0 if row.bound else w * row.err
            if row.group is None:
                singles += err * err
            else:
                groups[row.group] = groups.get(row.group, 0.0) + err
        return math.sqrt(singles + sum(g * g for g in groups.values()))

    def totals(self) -> BudgetTotals:
        ion_rows = [r for r in self.rows if r.carrier == "ion"]
        atom_rows = [r for r in self.rows if r.carrier == "atom"]
        ion_kin = sum(r.value for r in ion_rows)
        ion_err = self._grouped_quadrature(ion_rows, weighted=False)

        w_i = self._weight("ion")
        col = sum(self._weight(r.carrier) * r.value for r in self.rows)
        ion_col_err = w_i * ion_err
        atom_col_err = self._grouped_quadrature(atom_rows, weighted=True)
        col_err = ion_col_err + atom_col_err

        e_s = self.model.e_s
        return BudgetTotals(
            ion_kinetic=ion_kin,
            ion_kinetic_err=ion_err,
            collision=col,
            collision_err=col_err,
            ratio_to_es=col / e_s,
            ratio_err=col_err / e_s,
        )

    def collision_rows(self) -> list[tuple[str, float, float]]:
        """Per-row (label, collision energy, error) in J."""
        out = []
        for r in self.rows:
            w = self._weight(r.carrier)
            out.append((r.label, w * r.value, 0.0 if r.bound else w * r.err))
        return out


def default_energy_budget(model: InteractionModel | None = None) -> EnergyBudget:
    """The bundled single-ion energy ledger (values in microkelvin, stored in J).

    The two radial entries (secular motion and the in-phase micromotion that
    rides on it) derive from the same radial temperature measurement, so they
    share a correlation group.
    """
    model = model or default_model()
    uk = 1e-6 * KB
    budget = EnergyBudget(model=model)
    budget.add(
        BudgetRow("radial secular (2 modes)", 2 * 21 * uk, 2 * 9 * uk, group="radial_nbar")
    )
    budget.add(
        BudgetRow(
            "intrinsic micromotion (2 modes)", 2 * 21 * uk, 2 * 9 * uk, group="radial_nbar"
        )
    )
    budget.add(BudgetRow("axial secular", 65 * uk, 18 * uk))
    budget.add(BudgetRow("excess micromotion", 44 * uk, 13 * uk))
    budget.add(BudgetRow("atom thermal (3/2 kT)", 1.5 * 2.3 * uk, 1.5 * 0.4 * uk, carrier="atom"))
    return budget
