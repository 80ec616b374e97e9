import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from conftest import OMEGA_R, TAU_R, TWO_PI
from tofusim.propagator import (
    Delay,
    DensityState,
    IdealPulse,
    Propagator,
    PropagationError,
    WaveformSegment,
    detect,
    hamiltonian_at,
    propagate,
    spin_operators,
    unitarity_error,
)
from tofusim.rfgen import TofuParams, tofu_cartesian_field, tofu_waveform
from tofusim.spinsys import (
    DipolarCoupling,
    EulerAngles,
    ScalarCoupling,
    Spin,
    SpinSystem,
    fourier_coefficients,
)


def comm(a, b):
    return a @ b - b @ a


def test_single_spin_iz():
    o = spin_operators(1)
    assert np.allclose(o.iz[0], np.diag([0.5, -0.5]))


def test_two_spin_traces():
    o = spin_operators(2)
    assert abs(np.trace(o.iz[0] @ o.iz[1])) < 1e-15
    assert np.trace(o.iz[0] @ o.iz[0]).real == pytest.approx(1.0)


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_commutation_relations(n):
    o = spin_operators(n)
    for k in range(n):
        assert np.allclose(comm(o.ix[k], o.iy[k]), 1j * o.iz[k])
        assert np.allclose(comm(o.iy[k], o.iz[k]), 1j * o.ix[k])
        assert np.allclose(comm(o.iz[k], o.ix[k]), 1j * o.iy[k])
        for j in range(n):
            if j != k:
                assert np.allclose(comm(o.ix[k], o.iy[j]), 0.0)
    assert np.allclose(comm(o.fx, o.fy), 1j * o.fz)


@pytest.mark.parametrize("n", [0, 7])
def test_spin_count_range(n):
    with pytest.raises(ValueError):
        spin_operators(n)


def test_zero_hamiltonian():
    s = SpinSystem((Spin("a"), Spin("b")))
    h = hamiltonian_at(1e-5, s, fourier_coefficients(s, EulerAngles(), OMEGA_R))
    assert np.allclose(h, 0.0)


def test_shift_only_eigenvalues():
    w1, w2 = TWO_PI * 1000.0, TWO_PI * -3700.0
    s = SpinSystem((Spin("a", iso_shift=w1), Spin("b", iso_shift=w2)))
    h = hamiltonian_at(0.0, s, fourier_coefficients(s, EulerAngles(), OMEGA_R))
    expected = sorted(sa * w1 / 2 + sb * w2 / 2 for sa in (1, -1) for sb in (1, -1))
    assert np.allclose(np.linalg.eigvalsh(h), expected)


def test_dipolar_matrix_against_hand_built():
    b = TWO_PI * -2251.0
    s = SpinSystem((Spin("a"), Spin("b")), (DipolarCoupling(0, 1, b),))
    fc = fourier_coefficients(s, EulerAngles(0.0, 0.7, 0.2), OMEGA_R)
    t = 7.3e-6
    w = fc.dipolar_at(t)[0]
    sx = np.array([[0, 1], [1, 0]]) / 2
    sy = np.array([[0, -1j], [1j, 0]]) / 2
    sz = np.diag([0.5, -0.5])
    hand = w * (3 * np.kron(sz, sz) - np.kron(sx, sx) - np.kron(sy, sy) - np.kron(sz, sz))
    assert np.allclose(hamiltonian_at(t, s, fc), hand, atol=1e-10)


def test_hamiltonian_with_rf_sample_is_hermitian():
    s = SpinSystem((Spin("a", iso_shift=100.0, csa_aniso=2000.0), Spin("b")),
                   (DipolarCoupling(0, 1, -3000.0),), (ScalarCoupling(0, 1, 35.0),))
    h = hamiltonian_at(3e-6, s, fourier_coefficients(s, EulerAngles(0.1, 0.2, 0.3), OMEGA_R), (5e4, 0.3, 2e4))
    assert np.allclose(h, h.conj().T)


def _pair():
    return SpinSystem((Spin("S", iso_shift=TWO_PI * 2e3), Spin("I", iso_shift=TWO_PI * -1e3)),
                      (DipolarCoupling(0, 1, TWO_PI * -2251.0),))


def test_empty_timeline_identity():
    s = _pair()
    o = spin_operators(2)
    out = propagate(o.fx, [], s, EulerAngles(0.1, 0.5, 0.9), OMEGA_R)
    assert np.allclose(out.rho, o.fx)


def test_ideal_pi_flips_fz():
    s = _pair()
    o = spin_operators(2)
    out = propagate(o.fz, [IdealPulse(math.pi, 0.0)], s, EulerAngles(), OMEGA_R)
    assert np.allclose(out.rho, -o.fz)


def test_rotor_echo():
    s = SpinSystem((Spin("S"), Spin("I")), (DipolarCoupling(0, 1, TWO_PI * -2251.0),))
    o = spin_operators(2)
    cryst = EulerAngles(0.3, 0.9, 1.7)
    out = propagate(o.fx, [Delay(TAU_R)], s, cryst, OMEGA_R)
    assert detect(out, o.fx) == pytest.approx(detect(DensityState(o.fx), o.fx), abs=1e-6)
    fine = propagate(o.fx, [Delay(TAU_R)], s, cryst, OMEGA_R, max_substep=TAU_R / 4000)
    assert np.max(np.abs(fine.rho - out.rho)) < 1e-6


@pytest.mark.parametrize(
    "rho_op, op, value",
    [("ix", "ix", 1.0), ("ix", "iy", 0.0)],
)
def test_detect_normalisation(rho_op, op, value):
    o = spin_operators(3)
    assert detect(getattr(o, rho_op)[1], getattr(o, op)[1]) == pytest.approx(value)


def test_detect_after_y_pulse():
    s = SpinSystem((Spin("a"),))
    o = spin_operators(1)
    out = propagate(o.iz[0], [IdealPulse(math.pi / 2, math.pi / 2)], s, EulerAngles(), OMEGA_R)
    assert detect(out, o.ix[0]) == pytest.approx(1.0)


def test_density_state_rejects_non_hermitian():
    with pytest.raises(ValueError):
        DensityState(np.array([[0, 1], [0, 0]], complex))


def test_negative_delay_reports_segment():
    prop = Propagator.for_orientations(_pair(), 0.0, 0.0, 0.0, OMEGA_R)
    with pytest.raises(PropagationError, match="segment 1"):
        prop.total([Delay(1e-6), Delay(-1e-6)])


@settings(max_examples=10, deadline=None)
@given(st.lists(st.sampled_from(["delay", "pulse", "tofu"]), min_size=1, max_size=5),
       st.floats(0.0, math.pi), st.floats(0.0, 2 * math.pi))
def test_unitarity_and_trace(kinds, beta, gamma):
    s = SpinSystem(
        (Spin("S", iso_shift=TWO_PI * 6e3, csa_aniso=TWO_PI * 4e3), Spin("I", iso_shift=TWO_PI * -6e3),
         Spin("N", gyromagnetic_ratio=-2.7116e7)),
        (DipolarCoupling(0, 1, TWO_PI * -2251.0), DipolarCoupling(1, 2, TWO_PI * 900.0)),
        (ScalarCoupling(0, 1, 35.0),),
    )
    w = tofu_waveform(TofuParams.from_multiples(3.0, 0.25, 20e3))
    seg = {"delay": Delay(0.75 * TAU_R), "pulse": IdealPulse(math.pi, 0.4, (0,)), "tofu": WaveformSegment(w, 2)}
    timeline = [seg[k] for k in kinds]
    o = spin_operators(3)
    rho0 = o.ix[0] + o.ix[1]
    out, u = propagate(rho0, timeline, s, EulerAngles(0.2, beta, gamma), OMEGA_R, return_propagator=True)
    assert unitarity_error(u) < 1e-10
    assert np.trace(out.rho) == pytest.approx(np.trace(rho0), abs=1e-12)
    assert np.max(np.abs(out.rho - out.rho.conj().T)) < 1e-12


def test_substep_halving():
    s = _pair()
    o = spin_operators(2)
    w = tofu_waveform(TofuParams.from_multiples(3.0, 0.25, 20e3))
    tl = [WaveformSegment(w, 4), Delay(0.75 * TAU_R), IdealPulse(math.pi), Delay(0.75 * TAU_R), WaveformSegment(w, 4)]
    cryst = EulerAngles(0.0, math.pi / 4, 0.5)
    a = detect(propagate(o.fx, tl, s, cryst, OMEGA_R, max_substep=TAU_R / 400), o.ix[1])
    b = detect(propagate(o.fx, tl, s, cryst, OMEGA_R, max_substep=TAU_R / 800), o.ix[1])
    assert abs(a - b) < 1e-5


def test_piecewise_propagation_matches_ode_of_continuous_field():
    s = _pair()
    o = spin_operators(2)
    p = TofuParams.from_multiples(3.0, 0.25, 20e3, 4000)
    cryst = EulerAngles(0.0, math.pi / 4, 0.3)
    fc = fourier_coefficients(s, cryst, OMEGA_R)

    def rhs(t, y):
        hx, hy, hz = tofu_cartesian_field(t, p)
        h = hamiltonian_at(t, s, fc) + hx * o.fx + hy * o.fy + hz * o.fz
        return (-1j * h @ y.reshape(4, 4)).ravel()

    sol = solve_ivp(rhs, (0.0, p.element_duration), np.eye(4, dtype=complex).ravel(),
                    method="DOP853", rtol=1e-10, atol=1e-12)
    u_ode = sol.y[:, -1].reshape(4, 4)
    prop = Propagator.for_orientations(s, cryst.alpha, cryst.beta, cryst.gamma, OMEGA_R)
    u = prop.segment(WaveformSegment(tofu_waveform(p)), 0.0)[0]
    assert np.linalg.norm(u - u_ode, 2) < 1e-3
