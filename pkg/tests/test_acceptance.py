"""End-to-end claims the package stands behind, one test per claim.

Each test pins the tolerance it must meet; measured values at the pinned
seed are recorded next to the assertions.  Nothing here is statistical
hand-waving: every run is seeded and deterministic, so a failure is a real
regression, not noise.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from ionbath import cli
from ionbath.constants import HBAR, TWOPI, uk_to_joule
from ionbath.core import InteractionModel, default_energy_budget, default_model
from ionbath.mdsim import (
    PRESETS,
    BathParams,
    fit_cooling,
    run_cooling,
    steady_state_temperature,
)
from ionbath.scatter import (
    ChannelModel,
    analytic_node_scattering_length,
    classical_capture_rate,
    exchange_model,
    numerov_propagate,
    extract_smatrix,
    phase_shift,
    scattering_length,
    single_channel,
)
from ionbath.spinx import (
    EmmDistribution,
    _NullFactory,
    chi2_point,
    convolve_rate,
    emm_pdf,
    fit_spin,
    synth_dataset,
)
from ionbath.thermometry import (
    beta_from_ratio,
    doppler_width,
    emm_from_dc_field,
    mode_temperature,
)
from ionbath.trapdyn import default_trap

SEED = 12345
INTER = default_model()

R_INJECT = 0.6e-6
# bookkeeping density: one atom inside the injection sphere
RHO_SIM = 1.0 / (4.0 / 3.0 * math.pi * R_INJECT**3)
BATH = BathParams(temperature=10e-6, density=RHO_SIM, r_inject=R_INJECT)

# measured trap imperfections driving micromotion heating
IMPERFECT = dict(e_dc=(0.0525, 0.0668, 0.0), a_quad=1.884,
                 g_axial=16500.0, z_null=100e-6)


def test_secular_cooling_thermalizes_to_the_bath():
    """A 10 uK bath cools a 609 uK ion to T_inf in [8, 13] uK (secular).

    Desk ensemble, 50 runs x 6000 passages; measured 8.63 +- 0.14 uK in
    ~13 s at this seed, far under the 600 s budget.
    """
    desk = PRESETS["desk"]
    start = time.monotonic()
    result = run_cooling(
        trap=default_trap(),
        bath=BATH,
        n_runs=desk["n_runs"],
        n_atoms=desk["n_atoms"],
        mode="secular",
        seed=SEED,
        t_ion0=609e-6,
    )
    fit = fit_cooling(result)
    elapsed = time.monotonic() - start
    t_inf_uk = fit.t_inf * 1e6
    assert 8.0 <= t_inf_uk <= 13.0, f"T_inf = {t_inf_uk:.2f} uK"
    assert elapsed <= 600.0, f"runtime {elapsed:.0f} s exceeds 10 minutes"


def test_full_rf_cooling_plateaus_at_the_micromotion_limit():
    """With RF drive and measured imperfections the plateau sits in
    [30, 60] uK, and an 83 uK/s heating rate shifts it by ~20 uK.

    Measured 40.70 +- 0.53 uK at this seed (quoted experimental value
    43 uK); shift = 83 uK/s x 0.244 s = 20.25 uK.
    """
    desk = PRESETS["desk"]
    trap = default_trap().replace(**IMPERFECT)
    result = run_cooling(
        trap=trap,
        bath=BATH,
        n_runs=desk["n_runs"],
        n_atoms=desk["n_atoms"],
        mode="full_rf",
        seed=SEED,
        t_ion0=609e-6,
    )
    fit = fit_cooling(result)
    t_inf_uk = fit.t_inf * 1e6
    assert 30.0 <= t_inf_uk <= 60.0, f"T_inf = {t_inf_uk:.2f} uK"

    shifted = steady_state_temperature(fit.t_inf, 83e-6, 0.244)
    shift_uk = (shifted - fit.t_inf) * 1e6
    assert shift_uk == pytest.approx(20.25, abs=0.01)
    assert abs(shift_uk - 20.0) <= 1.0


def test_energy_ledger_matches_published_totals():
    """Ledger totals 193(42) uK ion kinetic and 9.9(2.0) uK collision,
    ratio 1.15 against E_s; each exact to the rounding of the quoted value.
    """
    totals = default_energy_budget().totals()
    ion_uk = totals.ion_kinetic / uk_to_joule(1.0)
    ion_err_uk = totals.ion_kinetic_err / uk_to_joule(1.0)
    col_uk = totals.collision / uk_to_joule(1.0)
    col_err_uk = totals.collision_err / uk_to_joule(1.0)
    assert abs(ion_uk - 193.0) < 0.5
    assert abs(ion_err_uk - 42.0) < 0.5
    assert abs(col_uk - 9.9) < 0.05
    assert abs(col_err_uk - 2.0) < 0.05
    assert abs(totals.ratio_to_es - 1.15) < 0.005

    # independent recomputation of the s-wave energy scale
    e_s = HBAR**2 / (2.0 * INTER.mu * INTER.r4**2)
    assert e_s == pytest.approx(INTER.e_s, rel=1e-12)
    assert abs(e_s / uk_to_joule(8.6) - 1.0) < 0.02


def test_thermometry_round_trips_match_published_values():
    """Exact-formula conversions land on the quoted numbers to rounding."""
    # nbar = 3.7 at 2pi x 210 kHz: formula gives 42.33 uK, quoted 42
    t_210 = mode_temperature(3.7, TWOPI * 210e3) * 1e6
    assert abs(t_210 - 42.0) < 0.5
    # nbar = 5.8 at 2pi x 330 kHz: formula gives 99.78 uK against a quoted
    # 98; the quoted inputs are themselves rounded (nbar to 0.1, omega to
    # ~5 kHz), which propagates to a ~2.3 uK envelope on T
    t_330 = mode_temperature(5.8, TWOPI * 330e3) * 1e6
    envelope = t_330 * (0.05 / 6.3 + 5.0 / 330.0)
    assert abs(t_330 - 98.0) < envelope
    # Doppler width 193 kHz: formula gives 129.4 uK, quoted 130 (two
    # significant figures, so rounding is the tens place)
    t_dop = (193e3 / doppler_width(1.0)) ** 2
    assert abs(t_dop * 1e6 - 130.0) < 5.0
    # carrier/sideband Rabi ratio 39.0/28.3 kHz inverts to beta = 1.18(1)
    beta = beta_from_ratio(39.0e3, 28.3e3)
    assert abs(beta - 1.18) <= 0.01
    # 50 mV/m stray field at 2pi x 210 kHz pumps 4.7 uK of drive energy
    e_mm = emm_from_dc_field(0.050, TWOPI * 210e3) / uk_to_joule(1.0)
    assert abs(e_mm - 4.7) < 0.05


def test_scattering_engine_satisfies_exact_properties():
    """Unitarity/symmetry to 1e-8, closed-form phase shifts to 1e-6,
    zero-energy 1/r^4 solution to 1e-3 R4, classical capture within 2%
    of the energy-independent Langevin rate over a decade.
    """
    # coupled-channel S-matrix: unitary, symmetric
    ch = exchange_model(INTER, 0.95, 1.08)
    for e_uk in (2.0, 20.0, 200.0):
        e_tot = uk_to_joule(e_uk) + ch.thresholds[0]
        sm = extract_smatrix(
            numerov_propagate(ch, e_tot, double_tol=1e-11), ch, e_tot
        )
        s = sm.s
        assert np.abs(s @ s.conj().T - np.eye(len(s))).max() <= 1e-8
        assert np.abs(s - s.T).max() <= 1e-8

    # free particle: the only phase is the node pushed to the origin
    free = InteractionModel(c4=0.0, c6=0.0)
    ch_free = ChannelModel(interaction=free, lambdas=(1.0,), thresholds=(0.0,),
                           ls=(0,), coupling=0.0, r_cut=1e-9, r_start=1e-13)
    e = uk_to_joule(20.0)
    k = math.sqrt(2.0 * free.mu * e) / HBAR
    assert abs(phase_shift(ch_free, e, r_match=50e-9, double_tol=1e-13)
               + k * 1e-13) <= 1e-6

    # hard sphere: delta_0 = -k r_hs
    r_hs = 5e-9
    ch_hs = ChannelModel(interaction=free, lambdas=(1.0,), thresholds=(0.0,),
                         ls=(0,), coupling=0.0, r_cut=1e-9, r_start=r_hs)
    for e_uk in (5.0, 50.0, 500.0):
        e = uk_to_joule(e_uk)
        k = math.sqrt(2.0 * free.mu * e) / HBAR
        delta = phase_shift(ch_hs, e, r_match=200e-9, double_tol=1e-13)
        assert abs(delta + k * r_hs) <= 1e-6

    # zero-energy 1/r^4 analytic solution fixes the scattering length
    pure = InteractionModel(c4=INTER.c4, c6=0.0)
    for frac in (0.02, 0.037, 0.05):
        r_node = frac * INTER.r4
        ch_n = ChannelModel(interaction=pure, lambdas=(1.0,), thresholds=(0.0,),
                            ls=(0,), coupling=0.0, r_cut=1e-12, r_start=r_node)
        a_exact = analytic_node_scattering_length(pure, r_node)
        assert abs(scattering_length(ch_n).a - a_exact) <= 1e-3 * INTER.r4

    # classical capture: energy independent to 2% across 2..20 uK
    for e_uk in (2.0, 6.3, 20.0):
        rate, _ = classical_capture_rate(uk_to_joule(e_uk), INTER)
        assert abs(rate / INTER.k_langevin - 1.0) <= 0.02


def test_spin_exchange_closed_loop_recovers_injected_truth():
    """Distribution checks to 1e-9, exact constant-rate convolution, and a
    20-trial closed loop keeping the injected (1.2, -1.5, 1.2) inside the
    p = 0.05 region in at least 95% of trials (measured 19/20; the rate
    contrast is blind to the S/T swap, so point estimates may mirror).
    """
    dist = EmmDistribution(uk_to_joule(100.0), uk_to_joule(20.0))
    lo, hi = dist.support
    span = hi - lo
    from scipy.integrate import quad

    norm, _ = quad(lambda u: emm_pdf(lo + u * span, dist) * span, 0.0, 1.0,
                   epsabs=1e-13, epsrel=1e-13, limit=200)
    first, _ = quad(lambda u: emm_pdf(lo + u * span, dist) * span * u,
                    0.0, 1.0, epsabs=1e-13, epsrel=1e-13, limit=200)
    assert abs(norm - 1.0) <= 1e-9
    mean = lo + first * span
    assert abs(mean - dist.mean_label) / dist.mean_label <= 1e-9

    kl = INTER.k_langevin
    assert convolve_rate(lambda e: np.full(np.shape(e), kl), dist) == kl

    e_grid = np.geomspace(50.0, 6000.0, 12)
    hits = 0
    for seed in range(1, 21):
        ds = synth_dataset(1.2, -1.5, 1.2, e_grid, seed=seed)
        fit = fit_spin(ds)
        if chi2_point(ds, 1.2, -1.5) <= fit.threshold:
            hits += 1
    assert hits >= math.ceil(0.95 * 20), f"truth inside region in {hits}/20"

    # constant-rate null model: the fit must flag energy independence
    factory = _NullFactory(0.5 * kl)
    ds = synth_dataset(1.2, -1.5, 1.2, np.geomspace(50.0, 6000.0, 8),
                       seed=3, rate_factory=factory)
    fit = fit_spin(ds, rate_factory=factory)
    assert fit.energy_independent


def test_commands_replay_byte_identically_from_manifests(tmp_path):
    """Feeding any command its own manifest reproduces every output byte."""
    jobs = {
        "budget": ["budget"],
        "thermo": ["thermo", "--demo"],
        "rates": ["rates", "--set", "n_energies=3", "--set", "l_max=2",
                  "--set", "e_lo_uk=5", "--set", "e_hi_uk=50"],
        "spinfit": ["spinfit", "--seed", "7", "--set", "grid.a_lo_r4=-2",
                    "--set", "grid.a_hi_r4=0", "--set", "grid.pitch_r4=0.25",
                    "--set", "synth.n_points=8"],
        "cool": ["cool", "--set", "runs=3", "--set", "atoms=1500",
                 "--set", "mode=secular", "--set", "bin_width=100"],
    }
    for name, argv in jobs.items():
        first = tmp_path / name
        again = tmp_path / f"{name}_replay"
        assert cli.main(argv + ["--out", str(first)]) == 0
        assert cli.main(
            [argv[0], "--config", str(first / "manifest.txt"),
             "--out", str(again)]
        ) == 0
        names = sorted(p.name for p in first.iterdir())
        assert names == sorted(p.name for p in again.iterdir())
        for fname in names:
            assert (first / fname).read_bytes() == (again / fname).read_bytes(), (
                f"{name}/{fname} differs on replay"
            )
