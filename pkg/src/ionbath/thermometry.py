"""Ion-energy diagnostics.

Carrier Rabi oscillations damped by thermal motion give the radial mean
occupation; Doppler-broadened lineshapes give the axial temperature; the
carrier/micromotion-sideband Rabi ratio gives the RF modulation index, from
which excess-micromotion energies and the compensation budget follow.
"""

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq, curve_fit
from scipy.special import eval_laguerre, j0, j1

from .constants import E_CHARGE, HBAR, KB, TWOPI
from .core import YB171
from .errors import ConfigError, DegenerateFitError, DomainError, FitError

__all__ = [
    "PROBE_WAVELENGTH",
    "RabiConfig",
    "RabiFit",
    "DopplerFit",
    "BudgetEntry",
    "MMBudget",
    "mode_temperature",
    "nbar_from_temperature",
    "lamb_dicke",
    "rabi_signal",
    "fit_nbar",
    "doppler_width",
    "doppler_fit",
    "beta_from_ratio",
    "emm_from_beta",
    "emm_from_dc_field",
    "field_from_displacement_energy",
    "scale_quadrature",
    "mm_budget",
    "TABLE_BUDGETS",
]

# E2 clock-transition probe used for all Rabi and Doppler diagnostics
PROBE_WAVELENGTH = 411e-9

# per-mode occupation cutoff: geometric tail weight kept below this
_TAIL_WEIGHT = 1e-6
_NMAX_CAP = 4000


def mode_temperature(nbar, omega):
    """T = hbar*omega*(nbar + 1/2)/kB for a single harmonic mode."""
    if omega <= 0:
        raise DomainError("mode frequency must be positive")
    return HBAR * omega * (nbar + 0.5) / KB


def nbar_from_temperature(temperature, omega):
    """Inverse of mode_temperature (classical limit, not the Bose formula)."""
    if omega <= 0:
        raise DomainError("mode frequency must be positive")
    nbar = KB * temperature / (HBAR * omega) - 0.5
    if nbar < 0:
        raise DomainError("temperature below the zero-point energy of the mode")
    return nbar


def lamb_dicke(omega, k_proj, mass=YB171.mass):
    """eta = k_proj * sqrt(hbar / (2 m omega))."""
    if omega <= 0:
        raise DomainError("mode frequency must be positive")
    return k_proj * math.sqrt(HBAR / (2.0 * mass * omega))


@dataclass(frozen=True)
class RabiConfig:
    """Geometry and calibration of the carrier Rabi thermometry probe.

    etas and mode_freqs list the motional modes the probe couples to.  The
    radial beam runs at 45 degrees to both transverse axes, so each radial
    mode sees the full-k Lamb-Dicke parameter divided by sqrt(2) and the
    axial mode is not addressed.
    """

    omega0: float  # rad/s, ground-state Rabi frequency
    mode_freqs: tuple  # rad/s
    etas: tuple
    ceiling: float = 0.83  # contrast limit of the readout
    power: float = None  # W, optional, for cross-power normalization

    def __post_init__(self):
        if not 0.0 < self.ceiling <= 1.0:
            raise ConfigError("contrast ceiling must be in (0, 1]")
        if len(self.mode_freqs) != len(self.etas):
            raise ConfigError("mode_freqs and etas must have equal length")
        if any(w <= 0 for w in self.mode_freqs):
            raise ConfigError("mode frequencies must be positive")
        if any(e < 0 for e in self.etas):
            raise ConfigError("Lamb-Dicke parameters must be non-negative")

    @classmethod
    def radial_beam(
        cls,
        omega0,
        omega_rad,
        mass=YB171.mass,
        wavelength=PROBE_WAVELENGTH,
        ceiling=0.83,
        power=None,
    ):
        k = TWOPI / wavelength
        eta = lamb_dicke(omega_rad, k / math.sqrt(2.0), mass)
        return cls(
            omega0=omega0,
            mode_freqs=(omega_rad, omega_rad),
            etas=(eta, eta),
            ceiling=ceiling,
            power=power,
        )


def _nmax_for(nbar):
    if nbar <= 0:
        return 0
    q = nbar / (1.0 + nbar)
    n = int(math.ceil(math.log(_TAIL_WEIGHT) / math.log(q))) + 1
    if n > _NMAX_CAP:
        raise ConfigError(
            f"nbar = {nbar:g} needs {n} occupation terms; cutoff cap is {_NMAX_CAP}"
        )
    return max(n, 8)


def _mode_factors(nbar, eta):
    """(weights, carrier matrix elements) over n = 0..N for one mode."""
    n_max = _nmax_for(nbar)
    n = np.arange(n_max + 1)
    if nbar > 0:
        q = nbar / (1.0 + nbar)
        w = np.exp(n * math.log(q)) / (1.0 + nbar)
    else:
        w = np.zeros(n_max + 1)
        w[0] = 1.0
    w /= w.sum()
    d = math.exp(-0.5 * eta * eta) * eval_laguerre(n, eta * eta)
    return w, d


def rabi_signal(t_pulse, nbar, cfg):
    """Thermally averaged carrier excitation probability.

    P(t) = ceiling * sum_n P(n) sin^2(Omega_n t / 2) with
    Omega_n = Omega0 * prod_i exp(-eta_i^2/2) L_{n_i}(eta_i^2) and a thermal
    weight P(n) = nbar^n / (1+nbar)^(n+1) per coupled mode (equal nbar in
    both radial modes).  Modes with eta = 0 drop out exactly.
    """
    if nbar < 0:
        raise DomainError("nbar must be non-negative")
    t = np.asarray(t_pulse, dtype=float)
    weights = np.array([1.0])
    dw = np.array([1.0])
    for eta in cfg.etas:
        if eta == 0.0:
            continue
        w_i, d_i = _mode_factors(nbar, eta)
        weights = np.outer(weights, w_i).ravel()
        dw = np.outer(dw, d_i).ravel()
    omega = cfg.omega0 * dw
    phase = 0.5 * omega[:, None] * t.ravel()[None, :]
    p = cfg.ceiling * (weights[:, None] * np.sin(phase) ** 2).sum(axis=0)
    return p.reshape(t.shape) if t.shape else float(p[0])


@dataclass(frozen=True)
class RabiFit:
    nbar: float
    omega0: float  # rad/s
    nbar_err: float
    omega0_err: float
    covariance: np.ndarray
    t_sec: float  # K, from the first listed mode frequency
    t_sec_err: float

    def as_dict(self):
        return {
            "nbar": self.nbar,
            "nbar_err": self.nbar_err,
            "omega0_hz": self.omega0 / TWOPI,
            "omega0_err_hz": self.omega0_err / TWOPI,
            "t_sec_uK": self.t_sec * 1e6,
            "t_sec_err_uK": self.t_sec_err * 1e6,
        }


def fit_nbar(t_pulse, excitation, cfg, nbar0=2.0):
    """Least-squares (nbar, Omega0) fit of a carrier Rabi record.

    The contrast ceiling is held at its calibrated value; both radial modes
    share one nbar.  Returns the fit together with the inferred secular
    temperature of the first listed mode.
    """
    t = np.asarray(t_pulse, dtype=float)
    p = np.asarray(excitation, dtype=float)
    if t.size < 8:
        raise FitError("need at least 8 points for a Rabi fit")
    if t.size != p.size:
        raise FitError("time and excitation arrays differ in length")

    def model(tt, nbar, omega0):
        return rabi_signal(tt, nbar, replace(cfg, omega0=omega0))

    try:
        popt, pcov = curve_fit(
            model,
            t,
            p,
            p0=(nbar0, cfg.omega0),
            bounds=([0.0, 0.0], [1e4, np.inf]),
            maxfev=10000,
        )
    except RuntimeError as exc:
        raise FitError(f"Rabi fit did not converge: {exc}") from exc
    perr = np.sqrt(np.diag(pcov))
    if not np.all(np.isfinite(perr)):
        raise DegenerateFitError("Rabi fit covariance is singular")
    omega_mode = cfg.mode_freqs[0]
    return RabiFit(
        nbar=popt[0],
        omega0=popt[1],
        nbar_err=perr[0],
        omega0_err=perr[1],
        covariance=pcov,
        t_sec=mode_temperature(popt[0], omega_mode),
        t_sec_err=HBAR * omega_mode * perr[0] / KB,
    )


# --- Doppler thermometry ----------------------------------------------------------

def doppler_width(temperature, mass=YB171.mass, wavelength=PROBE_WAVELENGTH):
    """RMS Gaussian width (Hz) of the first-order Doppler profile."""
    if temperature < 0:
        raise DomainError("temperature must be non-negative")
    return math.sqrt(KB * temperature / mass) / wavelength


@dataclass(frozen=True)
class DopplerFit:
    sigma: float  # Hz
    sigma_err: float
    center: float  # Hz
    amplitude: float
    temperature: float  # K
    temperature_err: float
    nbar: float  # of the axial mode used for reporting

    def as_dict(self):
        return {
            "sigma_khz": self.sigma / 1e3,
            "sigma_err_khz": self.sigma_err / 1e3,
            "t_ax_uK": self.temperature * 1e6,
            "t_ax_err_uK": self.temperature_err * 1e6,
            "nbar_ax": self.nbar,
        }


def doppler_fit(
    detuning,
    excitation,
    omega_axis,
    mass=YB171.mass,
    wavelength=PROBE_WAVELENGTH,
):
    """Gaussian lineshape fit; detuning in Hz.

    T = m (sigma * lambda)^2 / kB for the beam along the fitted axis.  The
    axial mode frequency is only used to express the result as a mean
    occupation as well.
    """
    d = np.asarray(detuning, dtype=float)
    p = np.asarray(excitation, dtype=float)
    if d.size < 5:
        raise FitError("need at least 5 points for a lineshape fit")

    def model(x, amp, x0, sig):
        return amp * np.exp(-0.5 * ((x - x0) / sig) ** 2)

    i_pk = int(np.argmax(p))
    span = d.max() - d.min()
    if not d.min() <= d[i_pk] <= d.max() or span <= 0:
        raise FitError("scan does not bracket a resonance")
    try:
        popt, pcov = curve_fit(
            model,
            d,
            p,
            p0=(p[i_pk], d[i_pk], span / 6.0),
            maxfev=10000,
        )
    except RuntimeError as exc:
        raise FitError(f"lineshape fit did not converge: {exc}") from exc
    perr = np.sqrt(np.diag(pcov))
    if not np.all(np.isfinite(perr)):
        raise DegenerateFitError("lineshape fit covariance is singular")
    sigma = abs(popt[2])
    temperature = mass * (sigma * wavelength) ** 2 / KB
    t_err = 2.0 * temperature * perr[2] / sigma if sigma > 0 else 0.0
    return DopplerFit(
        sigma=sigma,
        sigma_err=perr[2],
        center=popt[1],
        amplitude=popt[0],
        temperature=temperature,
        temperature_err=t_err,
        nbar=nbar_from_temperature(temperature, omega_axis),
    )


# --- micromotion index and energies -----------------------------------------------

# J1/J0 is monotone on (0, first zero of J0); the branch requested of the
# solver stops at the first maximum of J1
_BETA_MAX = 1.84


def beta_from_ratio(omega_car, omega_mm, power_car=None, power_mm=None):
    """Modulation index from carrier and micromotion-sideband Rabi frequencies.

    Solves J0(beta)/J1(beta) = omega_car/omega_mm on beta in (0, 1.84).  If
    the two Rabi frequencies were taken at different laser powers, pass both
    powers and they are normalized as omega/sqrt(P) first.
    """
    if (power_car is None) != (power_mm is None):
        raise ConfigError("supply both powers or neither")
    if power_car is not None:
        if power_car <= 0 or power_mm <= 0:
            raise DomainError("laser powers must be positive")
        omega_car = omega_car / math.sqrt(power_car)
        omega_mm = omega_mm / math.sqrt(power_mm)
    if omega_car <= 0:
        raise DomainError("carrier Rabi frequency must be positive")
    if omega_mm == 0:
        return 0.0
    if omega_mm < 0:
        raise DomainError("sideband Rabi frequency must be non-negative")
    ratio = omega_car / omega_mm

    def f(beta):
        return j0(beta) - ratio * j1(beta)

    hi = _BETA_MAX
    if f(hi) > 0:
        raise DomainError(
            f"carrier/sideband ratio {ratio:g} has no modulation index below {hi}"
        )
    return brentq(f, 1e-12, hi, xtol=1e-12, rtol=1e-14)


def emm_from_beta(beta, k_projection, omega_rf, mass=YB171.mass):
    """Average excess-micromotion energy (m/4)(beta * Omega_rf / k)^2 in J.

    k_projection is the probe wavevector projected on the micromotion
    direction; the caller applies geometric corrections (a beam at 45 degrees
    to the micromotion doubles the energy relative to its measured index).
    """
    if beta < 0:
        raise DomainError("modulation index must be non-negative")
    if k_projection <= 0:
        raise DomainError("wavevector projection must be positive")
    return 0.25 * mass * (beta * omega_rf / k_projection) ** 2


def emm_from_dc_field(e_dc, omega_rad, mass=YB171.mass):
    """Average micromotion energy of a stray-field displaced ion, J.

    E_DC^2 e^2 / (2 m omega_rad^2) for a static field E_DC pushing the ion
    off the RF null of a radial mode at omega_rad.
    """
    if omega_rad <= 0:
        raise DomainError("radial frequency must be positive")
    return (e_dc * E_CHARGE) ** 2 / (2.0 * mass * omega_rad**2)


def field_from_displacement_energy(energy, omega_rad, mass=YB171.mass):
    """Stray field (V/m) producing a given average micromotion energy."""
    if energy < 0:
        raise DomainError("energy must be non-negative")
    if omega_rad <= 0:
        raise DomainError("radial frequency must be positive")
    return math.sqrt(2.0 * mass * energy) * omega_rad / E_CHARGE


def scale_quadrature(energy, omega_from, omega_to):
    """Rescale a quadrature-micromotion energy between radial frequencies.

    The quadrature drive term scales with the trapping potential, so the
    energy goes as omega^2.
    """
    if omega_from <= 0 or omega_to <= 0:
        raise DomainError("frequencies must be positive")
    return energy * (omega_to / omega_from) ** 2


# --- compensation budget ----------------------------------------------------------

@dataclass(frozen=True)
class BudgetEntry:
    """One budget row; count > 1 repeats it (e.g. per radial mode).

    Upper bounds enter the total with their face value but carry no error.
    """

    label: str
    energy: float  # J
    error: float = 0.0  # J
    bound: bool = False
    count: int = 1

    def __post_init__(self):
        if self.energy < 0 or self.error < 0:
            raise ConfigError("budget entries must be non-negative")
        if self.count < 1:
            raise ConfigError("entry count must be at least 1")


@dataclass(frozen=True)
class MMBudget:
    entries: tuple
    total: float  # J
    total_err: float  # J

    def as_rows(self):
        rows = []
        for e in self.entries:
            rows.append(
                {
                    "label": e.label,
                    "energy_uK": e.energy / KB * 1e6,
                    "error_uK": e.error / KB * 1e6,
                    "count": e.count,
                    "bound": e.bound,
                }
            )
        rows.append(
            {
                "label": "total",
                "energy_uK": self.total / KB * 1e6,
                "error_uK": self.total_err / KB * 1e6,
                "count": 1,
                "bound": False,
            }
        )
        return rows


def mm_budget(entries):
    """Sum budget rows; errors add in quadrature across rows.

    A row's count multiplies both its value and its error (repeated rows come
    from one measurement, so they are fully correlated).
    """
    entries = tuple(entries)
    total = sum(e.count * e.energy for e in entries)
    total_err = math.sqrt(sum((e.count * e.error) ** 2 for e in entries))
    return MMBudget(entries=entries, total=total, total_err=total_err)


def _uk(x):
    return x * 1e-6 * KB


# Measured compensation budgets at the two radial settings, by type of
# residual micromotion. The radial-field rows are upper limits.
TABLE_BUDGETS = {
    "210kHz": mm_budget(
        [
            BudgetEntry("axial", _uk(13.0), _uk(13.0)),
            BudgetEntry("radial quadrature", _uk(8.7), _uk(0.6), count=2),
            BudgetEntry("radial field (vertical)", _uk(8.3), bound=True),
            BudgetEntry("radial field (horizontal)", _uk(4.7), bound=True),
        ]
    ),
    "330kHz": mm_budget(
        [
            BudgetEntry("axial", _uk(33.0), _uk(33.0)),
            BudgetEntry("radial quadrature", _uk(21.5), _uk(1.5), count=2),
            BudgetEntry("radial field (vertical)", _uk(3.4), bound=True),
            BudgetEntry("radial field (horizontal)", _uk(2.1), bound=True),
        ]
    ),
}
