import math
import warnings

import numpy as np
import pytest

from tofusim.spinsys import (
    GYROMAGNETIC_RATIOS,
    DipolarCoupling,
    Spin,
    SpinSystem,
    dipole_coupling_constant,
)

TWO_PI = 2.0 * math.pi
SPIN_RATE_HZ = 20e3
OMEGA_R = TWO_PI * SPIN_RATE_HZ
TAU_R = 1.0 / SPIN_RATE_HZ
G13C = GYROMAGNETIC_RATIOS["13C"]


@pytest.fixture(autouse=True)
def _quiet_exploratory_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        yield


def carbon_pair(r_angstrom=None, b_hz=None, shift_s_hz=0.0, shift_i_hz=0.0, **spin_kw):
    """S-I carbon pair, S first."""
    if b_hz is not None:
        b = TWO_PI * b_hz
    else:
        b = dipole_coupling_constant(r_angstrom * 1e-10, G13C, G13C)
    spins = (Spin("S", iso_shift=TWO_PI * shift_s_hz), Spin("I", iso_shift=TWO_PI * shift_i_hz, **spin_kw))
    return SpinSystem(spins, (DipolarCoupling(0, 1, b),), (), 0)


def brute_frequency(b, pc_angles, cryst_angles, omega_r, t):
    """Secular dipolar frequency by rotating the internuclear unit vector.

    Rotor frame: the crystal frame is rotated by the crystallite angles.
    The static field, seen from the rotor, starts at (-sin tm, 0, cos tm)
    and turns clockwise about the rotor axis.
    """
    from tofusim.spinsys import MAGIC_ANGLE, rotation_matrix

    v = rotation_matrix(*cryst_angles).T @ rotation_matrix(*pc_angles) @ np.array([0.0, 0.0, 1.0])
    tm = MAGIC_ANGLE
    wt = omega_r * np.asarray(t)
    n = np.stack([-math.sin(tm) * np.cos(wt), -math.sin(tm) * np.sin(wt), np.full_like(wt, math.cos(tm))], -1)
    c = n @ v
    return b * (3.0 * c**2 - 1.0) / 2.0
