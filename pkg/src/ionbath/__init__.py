"""Numerical laboratory for a single trapped ion in an ultracold atomic bath.

Subpackages cover the buffer-gas cooling molecular dynamics (`mdsim`), trap
and micromotion dynamics (`trapdyn`), sideband/Doppler/micromotion
thermometry (`thermometry`), coupled-channel scattering (`scatter`), the
secular energy budget (`core`), and spin-exchange rate fitting against
micromotion-broadened energy distributions (`spinx`).
"""

from .constants import KB, HBAR, E_CHARGE, AMU, H_PLANCK
from .core import (
    Species,
    LI6,
    YB171,
    InteractionModel,
    default_model,
    reduced_mass,
    atom_ion_potential,
    langevin_rate,
    collision_energy,
    BudgetRow,
    EnergyBudget,
    default_energy_budget,
)
from .errors import (
    IonbathError,
    ConfigError,
    DataFormatError,
    NumericsError,
    DomainError,
    IntegrationError,
    PropagationError,
    FitError,
    DegenerateFitError,
)
from .trapdyn import TrapParams, default_trap, mathieu_beta, integrate

__version__ = "0.1.0"

__all__ = [
    "KB",
    "HBAR",
    "E_CHARGE",
    "AMU",
    "H_PLANCK",
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
    "default_energy_budget",
    "TrapParams",
    "default_trap",
    "mathieu_beta",
    "integrate",
    "IonbathError",
    "ConfigError",
    "DataFormatError",
    "NumericsError",
    "DomainError",
    "IntegrationError",
    "PropagationError",
    "FitError",
    "DegenerateFitError",
    "__version__",
]
