"""Model-potential quantum scattering for the atom-ion pair.

Coupled radial equations are integrated outward with a renormalized Numerov
propagator (log-derivative-free ratio recursion, step-size doubling), matched
to Riccati-Bessel pairs at an asymptotic radius, and reduced to K and S
matrices on the open channels.  A two-channel singlet/triplet model with a
short-range exchange coupling stands in for the full hyperfine problem: its
scattering lengths are set by uniform short-range scaling factors, and the
spin-exchange rate follows from the off-diagonal S-matrix element summed over
partial waves.
"""

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq
from scipy.special import spherical_jn, spherical_yn

from .constants import H_PLANCK, HBAR, KB
from .core import InteractionModel, atom_ion_potential, default_model, langevin_rate
from .errors import ConfigError, DomainError, PropagationError

__all__ = [
    "ZEEMAN_SPLITTING",
    "ChannelModel",
    "Propagation",
    "SMatrix",
    "ScatteringLength",
    "TuneResult",
    "RateCurve",
    "single_channel",
    "exchange_model",
    "centrifugal_barrier",
    "numerov_propagate",
    "extract_smatrix",
    "phase_shift",
    "scattering_length",
    "analytic_node_scattering_length",
    "tune_scaling",
    "rate_constant",
    "classical_capture_rate",
]

# electron-spin flip energy at the assumed 4 G field (2.8 MHz/G)
ZEEMAN_SPLITTING = H_PLANCK * 11.2e6

# wavefunction-ratio start: potential wall height relative to E_s at which the
# node boundary condition is imposed (part of the model definition, fixed so
# the short-range phase does not drift with collision energy)
_WALL_FACTOR = 1e7

_UNITARITY_TOL = 1e-8


def centrifugal_barrier(l, interaction=None):
    """Height of the l-wave centrifugal barrier over a -C4/(2r^4) tail.

    V_eff = hbar^2 l(l+1)/(2 mu r^2) - C4/(2 r^4) peaks at
    (l(l+1))^2 E_s / 4 with E_s = hbar^2/(2 mu R4^2).
    """
    interaction = interaction if interaction is not None else default_model()
    if l < 1:
        raise DomainError("centrifugal barrier needs l >= 1")
    return (l * (l + 1)) ** 2 * interaction.e_s / 4.0


@dataclass(frozen=True)
class ChannelModel:
    """Coupled-channel radial problem on the shared atom-ion potential.

    Diagonal potentials are V0(r) scaled by lambda_i inside a window
    w(r) = exp(-(r/(r_cut/2))^6); the off-diagonal exchange coupling is
    coupling * w(r) * V0(r).  Everything beyond r_cut is the bare tail, so
    channel potentials approach -C4/(2 r^4) + threshold at long range.
    r_start carries the node boundary condition and is part of the model.
    """

    interaction: InteractionModel
    lambdas: tuple
    thresholds: tuple
    ls: tuple
    coupling: float
    r_cut: float
    r_start: float

    def __post_init__(self):
        n = len(self.lambdas)
        if not (len(self.thresholds) == len(self.ls) == n and n >= 1):
            raise ConfigError("channel fields must have a common nonzero length")
        if any(l < 0 for l in self.ls):
            raise ConfigError("partial waves must be non-negative")
        if self.r_cut <= 0 or self.r_start <= 0:
            raise ConfigError("r_cut and r_start must be positive")
        if n == 1 and self.coupling != 0.0:
            raise ConfigError("a single channel cannot carry a coupling")

    @property
    def n_channels(self):
        return len(self.lambdas)

    def window(self, r):
        return np.exp(-((2.0 * np.asarray(r) / self.r_cut) ** 6))

    def v_matrix(self, r):
        """(..., N, N) potential matrix at radius r (thresholds excluded)."""
        r = np.asarray(r, dtype=float)
        v0 = atom_ion_potential(r, self.interaction)
        w = self.window(r)
        n = self.n_channels
        out = np.zeros(r.shape + (n, n))
        for i in range(n):
            out[..., i, i] = v0 * (1.0 + (self.lambdas[i] - 1.0) * w)
        if n > 1 and self.coupling != 0.0:
            off = self.coupling * w * v0
            for i in range(n):
                for j in range(n):
                    if i != j:
                        out[..., i, j] = off
        return out

    def f_matrix(self, r, e_total):
        """(..., N, N) coefficient of u in u'' = F u."""
        r = np.asarray(r, dtype=float)
        mu = self.interaction.mu
        f = (2.0 * mu / HBAR**2) * self.v_matrix(r)
        for i in range(self.n_channels):
            f[..., i, i] += (2.0 * mu / HBAR**2) * (self.thresholds[i] - e_total)
            l = self.ls[i]
            if l > 0:
                f[..., i, i] += l * (l + 1) / r**2
        return f


def _default_r_start(interaction):
    """Radius inside the repulsive core where V = +_WALL_FACTOR * E_s."""
    target = _WALL_FACTOR * interaction.e_s
    r_zero = math.sqrt(2.0 * interaction.c6)

    def g(r):
        return atom_ion_potential(r, interaction) - target

    return brentq(g, 0.05 * r_zero, 0.999999 * r_zero, xtol=1e-18)


def single_channel(interaction=None, lam=1.0, l=0, r_start=None, r_cut=None):
    interaction = interaction if interaction is not None else default_model()
    if r_cut is None:
        r_cut = 30.0 * math.sqrt(3.0 * interaction.c6) if interaction.c6 > 0 else 1e-9
    if r_start is None:
        r_start = _default_r_start(interaction)
    return ChannelModel(
        interaction=interaction,
        lambdas=(lam,),
        thresholds=(0.0,),
        ls=(int(l),),
        coupling=0.0,
        r_cut=r_cut,
        r_start=r_start,
    )


def exchange_model(
    interaction=None,
    lam_s=1.0,
    lam_t=1.0,
    l=0,
    splitting=ZEEMAN_SPLITTING,
    r_start=None,
    r_cut=None,
):
    """Two spin channels; entrance channel 0 sits `splitting` above channel 1.

    In the spin basis both diagonals carry the mean scaling (lam_s+lam_t)/2
    and the exchange coupling (lam_t-lam_s)/2 mixes them, so diagonalizing at
    zero splitting recovers the singlet and triplet scaled potentials.
    """
    interaction = interaction if interaction is not None else default_model()
    if r_cut is None:
        r_cut = 30.0 * math.sqrt(3.0 * interaction.c6)
    if r_start is None:
        r_start = _default_r_start(interaction)
    mean = 0.5 * (lam_s + lam_t)
    return ChannelModel(
        interaction=interaction,
        lambdas=(mean, mean),
        thresholds=(float(splitting), 0.0),
        ls=(int(l), int(l)),
        coupling=0.5 * (lam_t - lam_s),
        r_cut=r_cut,
        r_start=r_start,
    )


# --- renormalized Numerov ---------------------------------------------------------

@dataclass
class Propagation:
    ratio: np.ndarray  # psi-hat(r_b) psi-hat(r_a)^{-1} with psi-hat = (I - T) psi
    r_a: float
    r_b: float
    t_a: np.ndarray  # T = (h^2/12) F at the last two points
    t_b: np.ndarray
    n_steps: int


def _match_radius(model, e_total):
    """Asymptotic radius: tail potential below 1e-4 of the open-channel energy."""
    e_open = e_total - min(model.thresholds)
    r_tail = (model.interaction.c4 / (2e-4 * e_open)) ** 0.25
    return max(r_tail, 1.2 * model.r_cut, 2.0 * model.r_start)


def numerov_propagate(
    model,
    e_total,
    r_match=None,
    ppw=40.0,
    double_tol=1e-10,
):
    """Outward ratio propagation with node start and step doubling.

    The base step is the local wavelength over ppw, clamped so the Numerov
    T-matrix stays below double_tol^(1/3); the step doubles whenever the
    doubled step would still satisfy that bound.  Returns the wavefunction
    ratio between the last two grid points for asymptotic matching.
    """
    if e_total <= min(model.thresholds):
        raise DomainError("no open channel at this energy")
    if r_match is None:
        r_match = _match_radius(model, e_total)
    if r_match <= model.r_start:
        raise ConfigError("r_match must lie beyond r_start")

    t_cap = double_tol ** (1.0 / 3.0)
    n = model.n_channels
    eye = np.eye(n)

    def t_of(r, h):
        return (h * h / 12.0) * model.f_matrix(r, e_total)

    def f_scale(r):
        f = model.f_matrix(r, e_total)
        return max(abs(np.linalg.eigvalsh(f)).max(), 1e-4 / r**2)

    f0 = f_scale(model.r_start)
    h = min(2.0 * math.pi / (ppw * math.sqrt(f0)), math.sqrt(12.0 * t_cap / f0) / 2.0)

    r_prev2 = model.r_start
    r_prev = model.r_start + h
    t_prev2 = t_of(r_prev2, h)
    t_prev = t_of(r_prev, h)
    # node boundary condition: psi(r_start) = 0 makes R_0^{-1} vanish
    r_mat = None
    r_mat_prev = None
    steps_in_segment = 1
    n_steps = 1

    while True:
        r_new = r_prev + h
        t_new = t_of(r_new, h)
        try:
            u_prev = np.linalg.solve(eye - t_prev, 2.0 * eye + 10.0 * t_prev)
        except np.linalg.LinAlgError as exc:
            raise PropagationError(f"singular Numerov step at r = {r_prev:.3e} m") from exc
        if r_mat is None:
            r_next = u_prev
        else:
            try:
                r_next = u_prev - np.linalg.inv(r_mat)
            except np.linalg.LinAlgError as exc:
                raise PropagationError(
                    f"singular ratio inversion at r = {r_prev:.3e} m"
                ) from exc
        r_mat_prev, r_mat = r_mat, r_next
        r_prev2, r_prev = r_prev, r_new
        t_prev2, t_prev = t_prev, t_new
        steps_in_segment += 1
        n_steps += 1

        if r_new >= r_match:
            return Propagation(
                ratio=r_mat,
                r_a=r_prev2,
                r_b=r_new,
                t_a=t_prev2,
                t_b=t_new,
                n_steps=n_steps,
            )

        # double the step when the doubled T-matrix stays under the cap and
        # F stays resolved across the doubled step (the r^-4 to constant-F
        # crossover otherwise gets stepped over); needs two completed steps
        # at the current h for the lattice transfer
        if steps_in_segment >= 2 and r_mat_prev is not None:
            f_loc = f_scale(r_new)
            f_ahead = f_scale(min(r_new + 2.0 * h, r_match))
            if (
                (2.0 * h) ** 2 * max(f_loc, f_ahead) / 12.0 < t_cap
                and f_ahead > 0.7 * f_loc
                and r_new + 2.0 * h < r_match
            ):
                # ratio on the doubled lattice between r_new and r_new - 2h;
                # T at a fixed point scales as h^2
                t_back = t_of(r_new - 2.0 * h, h)
                trans = (
                    (eye - 4.0 * t_prev)
                    @ np.linalg.solve(eye - t_prev, r_mat @ r_mat_prev)
                    @ (eye - t_back)
                    @ np.linalg.inv(eye - 4.0 * t_back)
                )
                h *= 2.0
                r_mat = trans
                r_mat_prev = None
                r_prev2 = r_new - h
                t_prev2 = t_of(r_prev2, h)
                t_prev = t_of(r_new, h)
                r_prev = r_new
                steps_in_segment = 1


def _riccati(l, x):
    """(j-hat, n-hat) with j -> sin(x - l pi/2), n -> cos(x - l pi/2)."""
    return x * spherical_jn(l, x), -x * spherical_yn(l, x)


@dataclass
class SMatrix:
    s: np.ndarray  # open-open block
    k_matrix: np.ndarray
    open_channels: np.ndarray
    unitarity_defect: float
    symmetry_defect: float


def extract_smatrix(prop, model, e_total, tol=_UNITARITY_TOL):
    """Match the propagated ratio to asymptotic pairs; S on open channels.

    Open channels use flux-normalized Riccati-Bessel pairs; closed channels
    use decaying/growing exponentials referenced to r_b and are eliminated,
    leaving K = K_oo - K_oc K_cc^{-1} K_co.
    """
    thr = np.asarray(model.thresholds)
    mu = model.interaction.mu
    k2 = 2.0 * mu * (e_total - thr) / HBAR**2
    is_open = k2 > 0
    if not is_open.any():
        raise DomainError("no open channel at this energy")
    n = model.n_channels

    def pair(r):
        reg = np.zeros(n)
        irr = np.zeros(n)
        for i in range(n):
            if is_open[i]:
                k = math.sqrt(k2[i])
                jh, nh = _riccati(model.ls[i], k * r)
                reg[i] = jh / math.sqrt(k)
                irr[i] = nh / math.sqrt(k)
            else:
                kap = math.sqrt(-k2[i])
                reg[i] = math.exp(-kap * (r - prop.r_b))
                irr[i] = math.exp(kap * (r - prop.r_b))
        return np.diag(reg), np.diag(irr)

    eye = np.eye(n)
    ja, na = pair(prop.r_a)
    jb, nb = pair(prop.r_b)
    ja = (eye - prop.t_a) @ ja
    na = (eye - prop.t_a) @ na
    jb = (eye - prop.t_b) @ jb
    nb = (eye - prop.t_b) @ nb
    try:
        k_full = -np.linalg.solve(nb - prop.ratio @ na, jb - prop.ratio @ ja)
    except np.linalg.LinAlgError as exc:
        raise PropagationError("asymptotic matching is singular") from exc

    o = np.nonzero(is_open)[0]
    c = np.nonzero(~is_open)[0]
    k_oo = k_full[np.ix_(o, o)]
    if c.size:
        k_oc = k_full[np.ix_(o, c)]
        k_co = k_full[np.ix_(c, o)]
        k_cc = k_full[np.ix_(c, c)]
        k_oo = k_oo - k_oc @ np.linalg.solve(k_cc, k_co)

    m = np.eye(o.size)
    s = np.linalg.solve(m - 1j * k_oo, m + 1j * k_oo)
    unit = abs(s @ s.conj().T - m).max()
    sym = abs(s - s.T).max()
    if unit > tol or sym > tol:
        raise PropagationError(
            f"S-matrix quality {unit:.2e}/{sym:.2e} exceeds {tol:.0e}"
        )
    return SMatrix(
        s=s,
        k_matrix=k_oo,
        open_channels=o,
        unitarity_defect=float(unit),
        symmetry_defect=float(sym),
    )


def phase_shift(model, energy, **kwargs):
    """Single-channel phase shift at collision energy above threshold."""
    if model.n_channels != 1:
        raise ConfigError("phase_shift expects a single-channel model")
    e_total = energy + model.thresholds[0]
    prop = numerov_propagate(model, e_total, **kwargs)
    sm = extract_smatrix(prop, model, e_total)
    return math.atan(float(np.real(sm.k_matrix[0, 0])))


# --- scattering length and tuning -------------------------------------------------

@dataclass
class ScatteringLength:
    a: float  # m
    slope: float  # m^2, linear k-coefficient of the effective length
    a_eff: np.ndarray
    k_values: np.ndarray
    flagged: bool  # resonance proximity: |a| > 50 R4 or a pole inside the grid


def scattering_length(model, energy_scale=1e-4, ppw=40.0, double_tol=1e-13):
    """Zero-energy limit a = -lim tan(delta0)/k of an s-wave channel.

    The effective length -tan(delta)/k is evaluated on six energies up to
    energy_scale x E_s and extrapolated to k = 0.  For a 1/r^4 tail the
    low-k expansion is a + (pi/3) R4^2 k + O(a R4^2 k^2 ln k); the linear
    slope is universal, so it is subtracted analytically and the remainder
    fitted with {1, k^2 ln(k R4), k^2}, which keeps the a-dependent
    curvature out of the intercept.  The truncated tail beyond the matching
    radius shifts a by ~R4^2/(3 r_m), so the match is pushed much further
    out than for finite-energy work.
    """
    if model.n_channels != 1 or model.ls[0] != 0:
        raise ConfigError("scattering_length expects a single s-wave channel")
    e_s = model.interaction.e_s
    k_frac = np.linspace(1.0 / 3.0, 1.0, 6)
    energies = energy_scale * e_s * k_frac**2
    mu = model.interaction.mu
    ks = np.sqrt(2.0 * mu * energies) / HBAR
    a_eff = np.empty(ks.size)
    flagged = False
    for i, (e, k) in enumerate(zip(energies, ks)):
        r_match = (model.interaction.c4 / (2e-8 * e)) ** 0.25
        delta = phase_shift(
            model, e, r_match=r_match, ppw=ppw, double_tol=double_tol
        )
        if abs(math.cos(delta)) < 1e-3:
            flagged = True
        a_eff[i] = -math.tan(delta) / k
    r4 = model.interaction.r4
    slope = (math.pi / 3.0) * r4**2
    x = ks * r4
    resid = a_eff - slope * ks
    basis = np.column_stack([np.ones_like(x), x**2 * np.log(x), x**2])
    coef, *_ = np.linalg.lstsq(basis, resid, rcond=None)
    a0 = coef[0]
    if abs(a0) > 50.0 * r4 or np.ptp(a_eff) > 10.0 * r4:
        flagged = True
    return ScatteringLength(
        a=float(a0), slope=float(slope), a_eff=a_eff, k_values=ks, flagged=flagged
    )


def analytic_node_scattering_length(interaction, r_node):
    """Closed-form a for the pure -C4/(2r^4) tail with a node at r_node.

    The zero-energy solution is u = r [A sin(R4/r) + B cos(R4/r)]; imposing
    u(r_node) = 0 gives a = R4 cot(R4/r_node).
    """
    r4 = interaction.r4
    return r4 / math.tan(r4 / r_node)


@dataclass
class TuneResult:
    lam: float
    a: float
    poles_crossed: int
    scan_lambdas: np.ndarray
    scan_a: np.ndarray


def tune_scaling(
    target_a,
    interaction=None,
    lam_lo=0.75,
    lam_hi=1.25,
    pitch=0.01,
    **sl_kwargs,
):
    """Scaling factor lambda whose s-wave scattering length hits target_a.

    a(lambda) behaves like R4 cot(phi(lambda)) with the accumulated
    short-range phase phi increasing in lambda: a falls monotonically
    between poles and jumps -inf -> +inf at each pole (one new bound state
    per jump).  The scan brackets the target on a falling segment, a root
    finder polishes it, and the polished value is verified so a bracket
    that actually straddles a pole is rejected.  Pole crossings between
    lambda = 1 and the solution are counted.
    """
    interaction = interaction if interaction is not None else default_model()
    if not math.isfinite(target_a):
        raise DomainError("target scattering length must be finite")
    r4 = interaction.r4
    lams = np.arange(lam_lo, lam_hi + 0.5 * pitch, pitch)

    def a_of(lam):
        return scattering_length(single_channel(interaction, lam=lam), **sl_kwargs).a

    scan = np.array([a_of(lam) for lam in lams])
    pole = (scan[:-1] < 0) & (scan[1:] > 0)
    hits = np.nonzero(
        ((scan[:-1] - target_a) * (scan[1:] - target_a) <= 0) & ~pole
    )[0]
    tol_a = 0.01 * max(r4, abs(target_a))
    for i in hits:
        lam_star = brentq(
            lambda lam: a_of(lam) - target_a, lams[i], lams[i + 1], xtol=1e-6
        )
        a_star = a_of(lam_star)
        if abs(a_star - target_a) <= tol_a:
            lo, hi = sorted((1.0, lam_star))
            crossed = int(np.sum(pole & (lams[:-1] >= lo) & (lams[1:] <= hi)))
            return TuneResult(
                lam=lam_star,
                a=a_star,
                poles_crossed=crossed,
                scan_lambdas=lams,
                scan_a=scan,
            )
    raise DomainError(
        f"scattering length {target_a / r4:.3g} R4 not reachable for "
        f"lambda in [{lam_lo}, {lam_hi}]"
    )


# --- spin-exchange rate curves ----------------------------------------------------

@dataclass
class RateCurve:
    energies: np.ndarray  # J, collision energy in the entrance channel
    total: np.ndarray  # m^3/s
    partial: np.ndarray  # (n_l, n_energies)
    ls: np.ndarray
    warning: str = None

    def table_text(self):
        cols = ["E_uK", "K_m3_per_s"] + [f"K_l{l}" for l in self.ls]
        lines = ["# " + " ".join(cols)]
        for j, e in enumerate(self.energies):
            vals = [e / KB * 1e6, self.total[j]] + list(self.partial[:, j])
            lines.append(" ".join(f"{v:.10e}" for v in vals))
        return "\n".join(lines) + "\n"


def _rate_one_energy(args):
    (lam_s, lam_t, interaction, splitting, e_col, l_max, ppw, double_tol) = args
    mu = interaction.mu
    k0 = math.sqrt(2.0 * mu * e_col) / HBAR
    out = np.zeros(l_max + 1)
    for l in range(l_max + 1):
        model = exchange_model(
            interaction, lam_s=lam_s, lam_t=lam_t, l=l, splitting=splitting
        )
        e_total = e_col + model.thresholds[0]
        prop = numerov_propagate(model, e_total, ppw=ppw, double_tol=double_tol)
        sm = extract_smatrix(prop, model, e_total)
        if sm.open_channels.size == 2:
            amp2 = abs(sm.s[0, 1]) ** 2
        else:
            amp2 = 0.0
        out[l] = math.pi * HBAR * (2 * l + 1) * amp2 / (mu * k0)
    return out


def rate_constant(
    lam_s,
    lam_t,
    energies,
    l_max=10,
    interaction=None,
    splitting=ZEEMAN_SPLITTING,
    ppw=40.0,
    double_tol=1e-11,
    workers=1,
):
    """Energy-dependent spin-exchange rate K(E) = sum_l (pi/k^2)(2l+1)|S_01|^2 v.

    E is the collision energy in the entrance (upper) spin channel.  Partial
    waves up to l_max are summed; if the last one still contributes more than
    1% of the total at the highest energy, the result carries a warning.
    """
    interaction = interaction if interaction is not None else default_model()
    energies = np.atleast_1d(np.asarray(energies, dtype=float))
    if (energies <= 0).any():
        raise DomainError("collision energies must be positive")
    jobs = [
        (lam_s, lam_t, interaction, splitting, e, l_max, ppw, double_tol)
        for e in energies
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_rate_one_energy, jobs))
    else:
        parts = [_rate_one_energy(j) for j in jobs]
    partial = np.array(parts).T
    total = partial.sum(axis=0)
    warning = None
    j_hi = int(np.argmax(energies))
    if total[j_hi] > 0 and partial[l_max, j_hi] > 0.01 * total[j_hi]:
        warning = (
            f"l_max = {l_max} contributes "
            f"{partial[l_max, j_hi] / total[j_hi]:.1%} at the highest energy"
        )
    return RateCurve(
        energies=energies,
        total=total,
        partial=partial,
        ls=np.arange(l_max + 1),
        warning=warning,
    )


# --- classical capture oracle -----------------------------------------------------

def classical_capture_rate(energy, interaction=None, n_bisect=20, rtol=1e-10):
    """Langevin rate from classical trajectories: pi b_c^2 v.

    Planar relative motion in the model potential is integrated for varying
    impact parameter; capture means reaching inside the potential zero
    crossing.  The critical impact parameter is bisected between a captured
    and an escaped trajectory.  Independent of the quantum machinery; for a
    -C4/(2r^4) tail the result is the energy-independent 2 pi sqrt(C4/mu).
    """
    from scipy.integrate import solve_ivp

    interaction = interaction if interaction is not None else default_model()
    if energy <= 0:
        raise DomainError("collision energy must be positive")
    mu = interaction.mu
    c4 = interaction.c4
    c6 = interaction.c6
    v_inf = math.sqrt(2.0 * energy / mu)
    b_ana = (2.0 * c4 / energy) ** 0.25
    r_far = 25.0 * b_ana
    r_probe = 1.05 * math.sqrt(2.0 * c6)

    def rhs(t, y):
        x, z, vx, vz = y
        r2 = x * x + z * z
        r = math.sqrt(r2)
        # dV/dr = 2 C4 / r^5 - 6 C4 C6 / r^7, force = -dV/dr * rhat / mu
        dvdr = 2.0 * c4 / r**5 - 6.0 * c4 * c6 / r**7
        ax = -dvdr * x / (r * mu)
        az = -dvdr * z / (r * mu)
        return [vx, vz, ax, az]

    def captured(b):
        def hit(t, y):
            return math.hypot(y[0], y[1]) - r_probe

        hit.terminal = True
        hit.direction = -1

        def gone(t, y):
            return math.hypot(y[0], y[1]) - 1.05 * r_far

        gone.terminal = True
        gone.direction = 1

        sol = solve_ivp(
            rhs,
            (0.0, 40.0 * r_far / v_inf),
            [b, r_far, 0.0, -v_inf],
            method="DOP853",
            rtol=rtol,
            atol=[1e-13, 1e-13, 1e-10, 1e-10],
            events=(hit, gone),
            max_step=r_far / v_inf,
        )
        return len(sol.t_events[0]) > 0

    lo, hi = 0.6 * b_ana, 1.4 * b_ana
    if not captured(lo):
        raise DomainError("no capture at the lower bracket; model core too wide")
    if captured(hi):
        raise DomainError("capture at the upper bracket; bracket too narrow")
    for _ in range(n_bisect):
        mid = 0.5 * (lo + hi)
        if captured(mid):
            lo = mid
        else:
            hi = mid
    b_c = 0.5 * (lo + hi)
    return math.pi * b_c**2 * v_inf, b_c
