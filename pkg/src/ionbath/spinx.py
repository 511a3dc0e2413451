"""Spin-exchange observable pipeline.

Chains four pieces: the arcsine energy distribution of driven coherent
micromotion, the convolution of an energy-dependent exchange rate over that
distribution, the saturating spin-flip probability per unit Langevin
exposure, and a chi^2 landscape over (a_S, a_T) with the collision number
n_L profiled out at every grid point.
"""

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize, minimize_scalar
from scipy.stats import chi2 as chi2_dist

from .constants import HBAR, KB, joule_to_uk, uk_to_joule
from .core import InteractionModel, collision_energy, default_model
from .errors import (
    ConfigError,
    DataFormatError,
    DegenerateFitError,
    DomainError,
    IntegrationError,
)
from .scatter import RateCurve, centrifugal_barrier

THERMAL_OFFSET = uk_to_joule(20.0)  # residual thermal collision energy


# --- micromotion energy distribution -----------------------------------------------

@dataclass(frozen=True)
class EmmDistribution:
    """Arcsine distribution of instantaneous energy for driven coherent motion.

    A harmonically driven degree of freedom with mean energy e_mm spends its
    time at instantaneous energies on [0, 2 e_mm] with inverse-square-root
    weight at both turning points; e0 shifts the support by the residual
    thermal energy of the unexcited modes.
    """

    e_mm: float
    e0: float = THERMAL_OFFSET

    def __post_init__(self):
        if self.e_mm <= 0.0:
            raise DomainError("mean micromotion energy must be positive")
        if self.e0 < 0.0:
            raise DomainError("thermal offset must be non-negative")

    @property
    def support(self):
        return (self.e0, self.e0 + 2.0 * self.e_mm)

    @property
    def mode_label(self):
        """Energy label for a data point: the distribution maximum."""
        return self.e0 + 2.0 * self.e_mm

    @property
    def mean_label(self):
        return self.e0 + self.e_mm


def emm_pdf(energy, dist):
    """Density 1/(pi sqrt((E-e0)(2 e_mm - (E-e0)))) on the open support."""
    lo, hi = dist.support
    e_arr = np.asarray(energy, dtype=float)
    if np.any(e_arr <= lo) or np.any(e_arr >= hi):
        raise DomainError("energy outside the open support of the distribution")
    x = e_arr - lo
    p = 1.0 / (math.pi * np.sqrt(x * (2.0 * dist.e_mm - x)))
    return float(p) if np.isscalar(energy) else p


@lru_cache(maxsize=8)
def _quad_rule(n_nodes):
    # Gauss-Legendre on theta in (0, pi) for E = e0 + e_mm (1 - cos theta);
    # the substitution absorbs both endpoint singularities exactly
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    theta = 0.5 * math.pi * (x + 1.0)
    weights = w * 0.5  # sum to 1: (1/pi) d(theta) over (0, pi)
    return theta, weights


def _node_energies(dist, n_nodes):
    theta, weights = _quad_rule(n_nodes)
    return dist.e0 + dist.e_mm * (1.0 - np.cos(theta)), weights


def _as_rate_callable(k):
    if callable(k):
        return k
    if isinstance(k, RateCurve):
        e_grid = np.asarray(k.energies, dtype=float)
        tot = np.asarray(k.total, dtype=float)

        def interp(e):
            e_arr = np.asarray(e, dtype=float)
            if e_arr.min() < e_grid.min() or e_arr.max() > e_grid.max():
                raise DomainError(
                    "distribution support extends beyond the tabulated rate curve"
                )
            return np.interp(e_arr, e_grid, tot)

        return interp
    raise ConfigError("rate must be a callable K(E) or a RateCurve")


def convolve_rate(k, dist, n_nodes=64, check=True):
    """Mean rate over the energy distribution, K-bar = int P(E) K(E) dE.

    Constant and linear rates integrate exactly at any node count.  When
    check is set the node count is raised by half and the two estimates
    must agree to 1e-7 relative.
    """
    k_call = _as_rate_callable(k)
    energies, weights = _node_energies(dist, n_nodes)
    kbar = float(weights @ np.asarray(k_call(energies), dtype=float))
    if check:
        energies2, weights2 = _node_energies(dist, n_nodes + n_nodes // 2)
        kbar2 = float(weights2 @ np.asarray(k_call(energies2), dtype=float))
        scale = max(abs(kbar), abs(kbar2), 1e-300)
        if abs(kbar - kbar2) > 1e-7 * scale:
            raise IntegrationError(
                f"rate convolution not converged: {kbar:.6e} vs {kbar2:.6e} "
                f"at {n_nodes} nodes"
            )
        kbar = kbar2
    return kbar


def spin_flip_probability(kbar, n_l, interaction=None):
    """Probability 1 - exp(-n_L K-bar / K_L) of at least one spin flip."""
    interaction = interaction if interaction is not None else default_model()
    if kbar < 0.0:
        raise DomainError("convolved rate must be non-negative")
    if n_l < 0.0:
        raise DomainError("Langevin collision number must be non-negative")
    return 1.0 - math.exp(-n_l * kbar / interaction.k_langevin)


def chi2(s_exp, s_pred, sigma):
    """Sum of squared sigma-normalized residuals."""
    s_exp = np.asarray(s_exp, dtype=float)
    s_pred = np.asarray(s_pred, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0.0):
        raise DomainError("all uncertainties must be positive")
    return float(np.sum(((s_exp - s_pred) / sigma) ** 2))


# --- observed dataset ---------------------------------------------------------------

@dataclass(frozen=True)
class SpinDataset:
    """Spin-flip measurements versus excited micromotion energy.

    e_mm holds the ion's mean kinetic micromotion energy per point (J);
    conversion to collision energy applies the reduced-mass weight.
    """

    e_mm: np.ndarray
    s_exp: np.ndarray
    sigma: np.ndarray
    e0: float = THERMAL_OFFSET

    def __post_init__(self):
        object.__setattr__(self, "e_mm", np.asarray(self.e_mm, dtype=float))
        object.__setattr__(self, "s_exp", np.asarray(self.s_exp, dtype=float))
        object.__setattr__(self, "sigma", np.asarray(self.sigma, dtype=float))
        n = self.e_mm.size
        if self.s_exp.size != n or self.sigma.size != n:
            raise ConfigError("dataset columns must have equal length")
        if np.any(self.e_mm <= 0.0):
            raise DomainError("micromotion energies must be positive")
        if np.any(self.sigma <= 0.0):
            raise DomainError("uncertainties must be positive")
        if np.any((self.s_exp < 0.0) | (self.s_exp > 1.0)):
            raise DomainError("spin-flip probabilities must lie in [0, 1]")

    def __len__(self):
        return self.e_mm.size

    def distributions(self, interaction=None):
        interaction = interaction if interaction is not None else default_model()
        return [
            EmmDistribution(collision_energy(e, 0.0, interaction), self.e0)
            for e in self.e_mm
        ]

    def energy_labels(self, interaction=None, convention="mode"):
        """Collision-energy label per point (J), maximum of the distribution
        by default; the mean is available behind the flag."""
        if convention not in ("mode", "mean"):
            raise ConfigError("label convention must be 'mode' or 'mean'")
        dists = self.distributions(interaction)
        if convention == "mode":
            return np.array([d.mode_label for d in dists])
        return np.array([d.mean_label for d in dists])

    def to_text(self):
        lines = ["# E_eMM_uK S sigma"]
        for e, s, sg in zip(self.e_mm, self.s_exp, self.sigma):
            lines.append(f"{joule_to_uk(e):.10e} {s:.10e} {sg:.10e}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text, e0=THERMAL_OFFSET):
        rows = []
        for i, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise DataFormatError(
                    f"line {i}: expected 3 columns (E_eMM_uK S sigma), got {len(parts)}"
                )
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                raise DataFormatError(f"line {i}: non-numeric field in {line!r}")
        if not rows:
            raise DataFormatError("no data rows found")
        arr = np.array(rows)
        return cls(
            e_mm=uk_to_joule(arr[:, 0]), s_exp=arr[:, 1], sigma=arr[:, 2], e0=e0
        )


# --- exchange-rate surrogate --------------------------------------------------------

@dataclass(frozen=True)
class ExchangeRateModel:
    """Semiclassical exchange rate driven by two s-wave scattering lengths.

    Each partial wave transmitted over its centrifugal barrier contributes
    with the common singlet-triplet phase contrast sin^2(delta_S - delta_T),
    delta_i = -atan(k a_i).  The s-wave transmission interpolates to the
    unitarity limit, higher waves switch on over their barriers.  This is a
    shape model for fitting, not an ab initio rate.
    """

    a_s: float
    a_t: float
    interaction: InteractionModel = field(default_factory=default_model)
    l_max: int = 6

    def __call__(self, energy):
        e_arr = np.asarray(energy, dtype=float)
        inter = self.interaction
        mu = inter.mu
        r4 = inter.r4
        k = np.sqrt(2.0 * mu * e_arr) / HBAR
        contrast = np.sin(np.arctan(k * self.a_s) - np.arctan(k * self.a_t)) ** 2
        kr = k * r4
        waves = 4.0 * kr / (1.0 + kr) ** 2
        for l in range(1, self.l_max + 1):
            barrier = centrifugal_barrier(l, inter)
            # logistic switch-on across the barrier, width ~ barrier/6
            waves = waves + (2 * l + 1) / (1.0 + np.exp(-6.0 * (e_arr / barrier - 1.0)))
        k_rate = math.pi * HBAR / (mu * k) * waves * contrast
        return float(k_rate) if np.isscalar(energy) else k_rate


@dataclass(frozen=True)
class ConstantRateModel:
    """Energy-independent rate, the classical Langevin-regime null model."""

    k0: float

    def __call__(self, energy):
        e_arr = np.asarray(energy, dtype=float)
        out = np.full(e_arr.shape, self.k0)
        return float(self.k0) if np.isscalar(energy) else out


@dataclass(frozen=True)
class _ScaledFactory:
    """Default rate-model factory: scattering lengths in, rate callable out."""

    interaction: InteractionModel
    l_max: int = 6

    def __call__(self, a_s, a_t):
        return ExchangeRateModel(a_s, a_t, self.interaction, self.l_max)


@dataclass(frozen=True)
class _NullFactory:
    k0: float

    def __call__(self, a_s, a_t):
        return ConstantRateModel(self.k0)


# --- chi^2 landscape ----------------------------------------------------------------

def _profile_n_l(kbars, s_exp, sigma, k_langevin, bounds):
    x = kbars / k_langevin

    def objective(n_l):
        pred = 1.0 - np.exp(-n_l * x)
        return np.sum(((s_exp - pred) / sigma) ** 2)

    res = minimize_scalar(objective, bounds=bounds, method="bounded",
                          options={"xatol": 1e-6})
    return float(res.x), float(res.fun)


def _kbar_matrix(factory, a_s, a_t, e_nodes, weights):
    k_call = factory(a_s, a_t)
    return np.asarray(k_call(e_nodes), dtype=float) @ weights


def _scan_row(args):
    # one a_s row of the chi^2 grid; pure function of its arguments so rows
    # can be farmed out to worker processes in any order
    (a_s, axis, r4, factory, e_nodes, weights, s_exp, sigma, kl, bounds) = args
    chi_row = np.empty(axis.size)
    n_l_row = np.empty(axis.size)
    kbar_rows = []
    for j, a_t in enumerate(axis):
        kbars = _kbar_matrix(factory, a_s * r4, a_t * r4, e_nodes, weights)
        n_l_row[j], chi_row[j] = _profile_n_l(kbars, s_exp, sigma, kl, bounds)
        kbar_rows.append(kbars)
    j_best = int(np.argmin(chi_row))
    return chi_row, n_l_row, kbar_rows[j_best]


@dataclass
class SpinFitResult:
    """Best-fit exchange parameters with the p = 0.05 compatibility region.

    a_s, a_t and the box extents are quoted in units of R4; the threshold is
    the larger of the absolute goodness-of-fit cut (p = 0.05 on N - 3
    degrees of freedom) and the likelihood-ratio cut (p = 0.05 on the 3
    fitted parameters).
    """

    a_s: float
    a_t: float
    n_l: float
    chi2: float
    n_points: int
    threshold: float
    box_a_s: tuple
    box_a_t: tuple
    box_n_l: tuple
    grid_a_s: np.ndarray
    grid_a_t: np.ndarray
    surface: np.ndarray  # chi^2, profiled over n_L, indexed [i_a_s, i_a_t]
    n_l_surface: np.ndarray
    energy_independent: bool = False

    def to_json(self):
        payload = {
            "a_s_r4": self.a_s,
            "a_t_r4": self.a_t,
            "n_l": self.n_l,
            "chi2": self.chi2,
            "n_points": self.n_points,
            "threshold": self.threshold,
            "box_a_s_r4": list(self.box_a_s),
            "box_a_t_r4": list(self.box_a_t),
            "box_n_l": list(self.box_n_l),
            "energy_independent": self.energy_independent,
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    def surface_text(self):
        lines = ["# a_s_r4 a_t_r4 chi2 n_l"]
        for i, a in enumerate(self.grid_a_s):
            for j, t in enumerate(self.grid_a_t):
                lines.append(
                    f"{a:.10e} {t:.10e} "
                    f"{self.surface[i, j]:.10e} {self.n_l_surface[i, j]:.10e}"
                )
        return "\n".join(lines) + "\n"


def chi2_point(
    dataset,
    a_s,
    a_t,
    n_l=None,
    rate_factory=None,
    interaction=None,
    n_nodes=64,
    n_l_bounds=(1e-2, 30.0),
):
    """Chi^2 of the model at one (a_s, a_t) in units of R4.

    n_l fixed if given, otherwise profiled out.  Uses the same quadrature
    and rate machinery as fit_spin, so values are directly comparable with
    a fit's surface and threshold.
    """
    interaction = interaction if interaction is not None else default_model()
    factory = rate_factory if rate_factory is not None else _ScaledFactory(interaction)
    r4 = interaction.r4
    e_nodes, weights = _dataset_nodes(dataset, interaction, n_nodes)
    kbars = _kbar_matrix(factory, a_s * r4, a_t * r4, e_nodes, weights)
    if n_l is None:
        _, val = _profile_n_l(
            kbars, dataset.s_exp, dataset.sigma, interaction.k_langevin, n_l_bounds
        )
        return val
    pred = 1.0 - np.exp(-n_l * kbars / interaction.k_langevin)
    return chi2(dataset.s_exp, pred, dataset.sigma)


def _dataset_nodes(dataset, interaction, n_nodes):
    dists = dataset.distributions(interaction)
    theta, weights = _quad_rule(n_nodes)
    e_nodes = np.array([d.e0 + d.e_mm * (1.0 - np.cos(theta)) for d in dists])
    return e_nodes, weights


def fit_spin(
    dataset,
    rate_factory=None,
    interaction=None,
    a_lo=-3.0,
    a_hi=3.0,
    pitch=0.1,
    n_l_bounds=(1e-2, 30.0),
    n_nodes=64,
    refine=True,
    workers=1,
):
    """Grid-then-refine chi^2 fit of (a_S, a_T, n_L) to spin-flip data.

    Scans (a_S, a_T) in units of R4 on a coarse grid with n_L profiled at
    every point (the surface is multimodal, so no gradient descent from a
    single start), then polishes the best grid point with a simplex.  The
    p = 0.05 region is reported as a parameter box read off the profiled
    surface.  Grid rows are independent; workers > 1 spreads them over
    processes without changing the result.
    """
    interaction = interaction if interaction is not None else default_model()
    if len(dataset) < 5:
        raise ConfigError("need at least 5 energy points to fit 3 parameters")
    factory = rate_factory if rate_factory is not None else _ScaledFactory(interaction)
    r4 = interaction.r4
    kl = interaction.k_langevin
    s_exp, sigma = dataset.s_exp, dataset.sigma
    e_nodes, weights = _dataset_nodes(dataset, interaction, n_nodes)

    axis = np.arange(a_lo, a_hi + 0.5 * pitch, pitch)
    jobs = [
        (a_s, axis, r4, factory, e_nodes, weights, s_exp, sigma, kl, n_l_bounds)
        for a_s in axis
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_scan_row, jobs))
    else:
        rows = [_scan_row(j) for j in jobs]
    surface = np.vstack([r[0] for r in rows])
    n_l_surface = np.vstack([r[1] for r in rows])

    i0, j0 = np.unravel_index(int(np.argmin(surface)), surface.shape)
    chi2_min = float(surface[i0, j0])
    kbar_best = rows[i0][2]
    spread = np.ptp(surface)
    flat = spread <= 1e-9 * max(1.0, abs(chi2_min))
    energy_independent = bool(
        np.ptp(kbar_best) <= 1e-9 * max(kbar_best.max(), 1e-300)
    )
    if flat and not energy_independent:
        raise DegenerateFitError(
            "chi^2 surface is flat but the rate model is energy dependent; "
            "parameters are unidentifiable"
        )

    a_s_hat, a_t_hat = axis[i0], axis[j0]
    n_l_hat = n_l_surface[i0, j0]
    if refine and not flat:
        def objective(p):
            a_s, a_t, n_l = p
            if not (a_lo <= a_s <= a_hi and a_lo <= a_t <= a_hi):
                return 1e9
            if not (n_l_bounds[0] <= n_l <= n_l_bounds[1]):
                return 1e9
            kb = _kbar_matrix(factory, a_s * r4, a_t * r4, e_nodes, weights)
            pred = 1.0 - np.exp(-n_l * kb / kl)
            return float(np.sum(((s_exp - pred) / sigma) ** 2))

        res = minimize(
            objective,
            x0=[a_s_hat, a_t_hat, n_l_hat],
            method="Nelder-Mead",
            options={"xatol": 1e-4, "fatol": 1e-8, "maxiter": 2000},
        )
        if res.fun <= chi2_min:
            a_s_hat, a_t_hat, n_l_hat = res.x
            chi2_min = float(res.fun)

    dof = len(dataset) - 3
    threshold = max(
        float(chi2_dist.isf(0.05, dof)) if dof > 0 else 0.0,
        chi2_min + float(chi2_dist.isf(0.05, 3)),
    )

    if flat:
        box_a_s = (float(axis[0]), float(axis[-1]))
        box_a_t = (float(axis[0]), float(axis[-1]))
    else:
        mask = surface <= threshold
        rows = np.nonzero(mask.any(axis=1))[0]
        cols = np.nonzero(mask.any(axis=0))[0]
        box_a_s = (float(axis[rows[0]]), float(axis[rows[-1]]))
        box_a_t = (float(axis[cols[0]]), float(axis[cols[-1]]))

    n_l_grid = np.geomspace(n_l_bounds[0], n_l_bounds[1], 400)
    pred = 1.0 - np.exp(-np.outer(n_l_grid, kbar_best / kl))
    prof = np.sum(((s_exp - pred) / sigma) ** 2, axis=1)
    sel = n_l_grid[prof <= threshold]
    box_n_l = (
        (float(sel[0]), float(sel[-1])) if sel.size else (n_l_hat, n_l_hat)
    )

    return SpinFitResult(
        a_s=float(a_s_hat),
        a_t=float(a_t_hat),
        n_l=float(n_l_hat),
        chi2=float(chi2_min),
        n_points=len(dataset),
        threshold=threshold,
        box_a_s=box_a_s,
        box_a_t=box_a_t,
        box_n_l=box_n_l,
        grid_a_s=axis,
        grid_a_t=axis.copy(),
        surface=surface,
        n_l_surface=n_l_surface,
        energy_independent=energy_independent,
    )


# --- synthetic data -----------------------------------------------------------------

def synth_dataset(
    a_s,
    a_t,
    n_l,
    e_mm_uk,
    seed,
    n_shots=200,
    sigma_floor=0.01,
    interaction=None,
    e0=THERMAL_OFFSET,
    rate_factory=None,
    n_nodes=64,
):
    """Binomial-sampled dataset from the forward model at (a_s, a_t, n_l).

    a_s, a_t in units of R4; e_mm_uk lists the ion kinetic micromotion
    energy per point in microkelvin.  Per-point sigma is the binomial
    estimate floored at sigma_floor.
    """
    interaction = interaction if interaction is not None else default_model()
    factory = rate_factory if rate_factory is not None else _ScaledFactory(interaction)
    r4 = interaction.r4
    e_mm = uk_to_joule(np.asarray(e_mm_uk, dtype=float))
    base = SpinDataset(e_mm=e_mm, s_exp=np.zeros_like(e_mm),
                       sigma=np.ones_like(e_mm), e0=e0)
    e_nodes, weights = _dataset_nodes(base, interaction, n_nodes)
    kbars = _kbar_matrix(factory, a_s * r4, a_t * r4, e_nodes, weights)
    s_true = 1.0 - np.exp(-n_l * kbars / interaction.k_langevin)
    rng = np.random.default_rng(seed)
    p_hat = rng.binomial(n_shots, s_true) / n_shots
    sigma = np.maximum(np.sqrt(p_hat * (1.0 - p_hat) / n_shots), sigma_floor)
    return SpinDataset(e_mm=e_mm, s_exp=p_hat, sigma=sigma, e0=e0)
