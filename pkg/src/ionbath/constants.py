"""Physical constants (SI, CODATA 2018) and a few unit helpers.

Internals work in SI throughout; microkelvin, kilohertz and millivolts per
metre appear only at I/O boundaries via the helpers below.
"""

import math

HBAR = 1.054_571_817e-34  # J s
KB = 1.380_649e-23  # J / K
E_CHARGE = 1.602_176_634e-19  # C
AMU = 1.660_539_066_60e-27  # kg
H_PLANCK = 6.626_070_15e-34  # J s

TWOPI = 2.0 * math.pi


def uk_to_joule(t_uk: float) -> float:
    """Temperature or energy quoted in microkelvin -> joule."""
    return t_uk * 1e-6 * KB


def joule_to_uk(e_j: float) -> float:
    """Energy in joule -> equivalent temperature in microkelvin."""
    return e_j / KB * 1e6


def khz_to_rad(f_khz: float) -> float:
    """Frequency in kHz -> angular frequency in rad/s."""
    return TWOPI * f_khz * 1e3


def rad_to_khz(omega: float) -> float:
    """Angular frequency in rad/s -> frequency in kHz."""
    return omega / TWOPI / 1e3


def mvpm_to_vpm(e_mvpm: float) -> float:
    """Electric field in mV/m -> V/m."""
    return e_mvpm * 1e-3
