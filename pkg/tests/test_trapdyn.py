import math

import numpy as np
import pytest

from ionbath.constants import KB, TWOPI
from ionbath.errors import ConfigError, DomainError
from ionbath.trapdyn import (
    IonTrajectory,
    TrapParams,
    default_trap,
    dress_initial_state,
    integrate,
    mathieu_beta,
    mathieu_stable,
    q_for_radial_target,
    secular_frequency_lowest_order,
    secular_energy_decomposed,
    secular_energy_filtered,
    stray_field_from_displacement,
)


# --- Mathieu / Floquet --------------------------------------------------------------

def test_mathieu_beta_static_limit():
    # q = 0 reduces to a harmonic oscillator: beta = sqrt(a) exactly
    assert math.isclose(mathieu_beta(0.09, 0.0), 0.3, abs_tol=1e-10)
    assert math.isclose(mathieu_beta(0.2, 0.0), math.sqrt(0.2), abs_tol=1e-10)


def test_mathieu_beta_vs_lowest_order():
    """The expansion sqrt(a + q^2/2) is percent-level wrong at q ~ 0.5."""
    a, q = -0.01, 0.5
    beta = mathieu_beta(a, q)
    beta_lo = math.sqrt(a + 0.5 * q * q)
    rel = abs(beta_lo - beta) / beta
    assert 0.03 < rel < 0.10
    # but accurate at small drive
    beta_small = mathieu_beta(0.0, 0.05)
    lo_small = 2.0 * secular_frequency_lowest_order(0.0, 0.05, 2.0) / 2.0
    assert abs(lo_small - beta_small) / beta_small < 1e-3


def test_mathieu_instability_detected():
    # (a, q) = (0, 1.0) sits beyond the first stability tongue boundary (~0.908)
    assert not mathieu_stable(0.0, 1.0)
    with pytest.raises(DomainError):
        mathieu_beta(0.0, 1.0)


def test_q_solver_round_trip():
    a = -0.00987582176771366
    beta_target = 2.0 * TWOPI * 330e3 / (TWOPI * 1.85e6)
    q = q_for_radial_target(a, beta_target)
    assert math.isclose(mathieu_beta(a, q), beta_target, abs_tol=1e-10)
    with pytest.raises(DomainError):
        q_for_radial_target(a, 1.5)


# --- operating point construction ---------------------------------------------------

def test_default_trap_matches_targets():
    trap = default_trap()
    wx, wy, wz = trap.omega_sec
    assert math.isclose(wx / TWOPI, 330e3, rel_tol=1e-9)
    assert math.isclose(wy / TWOPI, 330e3, rel_tol=1e-9)
    assert math.isclose(wz / TWOPI, 130e3, rel_tol=1e-9)
    # radial drive sits near q ~ 0.5 for these targets
    assert 0.45 < trap.q_coeff[0] < 0.55
    assert trap.q_coeff[1] == -trap.q_coeff[0]
    ax, ay, az = trap.a_coeff
    assert math.isclose(az, -2.0 * ax, rel_tol=1e-12)
    # the exact Floquet exponent reproduces the declared frequency
    assert math.isclose(
        0.5 * trap.omega_rf * mathieu_beta(ax, trap.q_coeff[0]), wx, rel_tol=1e-9
    )


def test_trap_validation():
    with pytest.raises(ConfigError):
        TrapParams.from_secular_targets(TWOPI * 330e3, TWOPI * 130e3, TWOPI * 500e3)
    with pytest.raises(ConfigError):
        TrapParams.from_secular_targets(
            TWOPI * 330e3, TWOPI * 130e3, TWOPI * 1.85e6, omega_y=TWOPI * 300e3
        )
    with pytest.raises(ConfigError):
        default_trap(a_quad=1.0, u_quad=(1.0, 1.0, 0.0))  # not a unit vector
    # declared frequencies must agree with the drive coefficients
    trap = default_trap()
    with pytest.raises(ConfigError):
        trap.replace(omega_sec=(trap.omega_sec[0] * 1.1,) + trap.omega_sec[1:])


def test_static_equilibrium_vs_pseudopotential():
    """The exact periodic-orbit mean differs from e E/(m w^2) at q ~ 0.5."""
    trap = default_trap(e_dc=(0.05, 0.0, 0.0))
    u = trap.u_eq
    s = trap.static_equilibrium
    assert s[1] == 0.0 and s[2] == 0.0
    ratio = s[0] / u[0]
    assert 1.05 < ratio < 1.20
    # axial axis has no RF drive, so there the two agree exactly
    trap_z = default_trap(e_dc=(0.0, 0.0, 0.02))
    assert math.isclose(trap_z.static_equilibrium[2], trap_z.u_eq[2], rel_tol=1e-9)


def test_stray_field_round_trip():
    trap = default_trap()
    e = stray_field_from_displacement(trap, 10e-9, axis=0)
    m = trap.ion.mass
    w = trap.omega_sec[0]
    assert math.isclose(e, m * w * w * 10e-9 / trap.ion.charge, rel_tol=1e-12)
    back = trap.replace(e_dc=(e, 0.0, 0.0)).u_eq[0]
    assert math.isclose(back, 10e-9, rel_tol=1e-12)


# --- dressing and energy extraction --------------------------------------------------

IMPERFECT = dict(e_dc=(0.05, 0.02, 0.0), a_quad=1.884, g_axial=16500.0, z_null=100e-6)


def _single_sample_energy(trap, x, v, t0):
    traj = IonTrajectory(
        t=np.array([t0]), pos=x[None, :], vel=v[None, :], params=trap, mode="full_rf"
    )
    return secular_energy_decomposed(traj)[0]


def test_dress_decompose_round_trip_clean():
    # without imperfection fields the round trip is exact on all axes
    trap = default_trap()
    x_sec = np.array([30e-9, -20e-9, 55e-9])
    v_sec = np.array([0.05, -0.03, 0.08])
    e_req = 0.5 * trap.ion.mass * (v_sec**2 + np.asarray(trap.omega_sec) ** 2 * x_sec**2)
    for t0 in (0.0, 1.234e-7):
        x, v = dress_initial_state(trap, x_sec, v_sec, t0=t0)
        e = _single_sample_energy(trap, x, v, t0)
        np.testing.assert_allclose(e, e_req, rtol=1e-10)


def test_dress_decompose_round_trip_imperfect():
    # the axial gradient term is linearized around the slow z, so the z axis
    # closes only approximately; radial axes stay exact
    trap = default_trap(**IMPERFECT)
    x_sec = np.array([30e-9, -20e-9, 55e-9])
    v_sec = np.array([0.05, -0.03, 0.08])
    e_req = 0.5 * trap.ion.mass * (v_sec**2 + np.asarray(trap.omega_sec) ** 2 * x_sec**2)
    x, v = dress_initial_state(trap, x_sec, v_sec, t0=0.0)
    e = _single_sample_energy(trap, x, v, 0.0)
    np.testing.assert_allclose(e[:2], e_req[:2], rtol=1e-10)
    np.testing.assert_allclose(e[2], e_req[2], rtol=5e-4)


def test_energy_conserved_along_trap_only_trajectory():
    trap = default_trap()
    x, v = dress_initial_state(trap, [40e-9, 10e-9, 60e-9], [0.02, 0.05, -0.04])
    traj = integrate(
        trap, x, v, t_final=60 * trap.rf_period, rtol=1e-10, atol_pos=1e-16, atol_vel=1e-10
    )
    e = secular_energy_decomposed(traj)
    drift = np.ptp(e, axis=0) / e.mean(axis=0)
    assert drift.max() < 1e-6


def test_energy_conserved_secular_mode():
    trap = default_trap()
    x0 = np.array([40e-9, 10e-9, 60e-9])
    v0 = np.array([0.02, 0.05, -0.04])
    traj = integrate(trap, x0, v0, t_final=5e-5, mode="secular", rtol=1e-10)
    e = secular_energy_decomposed(traj).sum(axis=1)
    assert np.ptp(e) / e.mean() < 1e-8


def test_filtered_energy_agrees_with_projection():
    trap = default_trap(**IMPERFECT)
    x, v = dress_initial_state(trap, [40e-9, 10e-9, 60e-9], [0.02, 0.05, -0.04])
    traj = integrate(
        trap, x, v, t_final=60 * trap.rf_period, rtol=1e-10, atol_pos=1e-16, atol_vel=1e-10
    )
    e_proj = secular_energy_decomposed(traj)
    ts, e_filt = secular_energy_filtered(traj, support_periods=12)
    i0 = int(traj.t.searchsorted(ts[0]))
    e_mid = e_proj[i0 : i0 + len(ts)]
    rel = np.abs(e_filt.mean(axis=0) / e_mid.mean(axis=0) - 1.0)
    assert rel.max() < 5e-4


def test_filter_guards():
    trap = default_trap()
    x, v = dress_initial_state(trap, [40e-9, 0.0, 0.0], [0.0, 0.0, 0.0])
    traj = integrate(trap, x, v, t_final=20 * trap.rf_period)
    with pytest.raises(ConfigError):
        secular_energy_filtered(traj, support_periods=2)
    with pytest.raises(ConfigError):
        secular_energy_filtered(traj, support_periods=40)  # longer than the record
    sec = integrate(trap, x, v, t_final=1e-5, mode="secular")
    with pytest.raises(ConfigError):
        secular_energy_filtered(sec)


def test_micromotion_amplitude():
    trap = default_trap()
    assert math.isclose(
        trap.micromotion_amplitude(10e-9), 0.5 * trap.q_coeff[0] * 10e-9, rel_tol=1e-12
    )
