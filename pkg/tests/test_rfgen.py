import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from conftest import OMEGA_R, TAU_R, TWO_PI
from tofusim.propagator import Propagator, WaveformSegment
from tofusim.rfgen import (
    RfWaveform,
    TofuParams,
    export_waveform,
    fold_offset,
    postc7_waveform,
    read_waveform,
    tofu_cartesian_field,
    tofu_waveform,
)
from tofusim.spinsys import DipolarCoupling, Spin, SpinSystem

SX = np.array([[0, 1], [1, 0]], complex) / 2
SY = np.array([[0, -1j], [1j, 0]], complex) / 2
SZ = np.array([[1, 0], [0, -1]], complex) / 2


def conjugation_oracle(t, B, C):
    """Field coefficients from the nested rotations, built with matrices."""
    ux = expm(-1j * C * t * SX)
    uy = expm(-1j * C * t * SY)
    h = C * SX + C * ux @ SY @ ux.conj().T + B * ux @ uy @ SZ @ uy.conj().T @ ux.conj().T
    return tuple(2.0 * np.trace(h @ s).real for s in (SX, SY, SZ))


def test_field_at_zero():
    p = TofuParams.from_multiples(3.0, 0.25, 20e3)
    hx, hy, hz = tofu_cartesian_field(0.0, p)
    assert (hx, hy, hz) == pytest.approx((p.c_field, p.c_field, p.b_field))


def test_field_at_quarter_turn():
    p = TofuParams.from_multiples(3.0, 0.25, 20e3)
    t = 0.5 * math.pi / p.c_field
    got = tofu_cartesian_field(t, p)
    assert got == pytest.approx((p.c_field + p.b_field, 0.0, p.c_field), abs=1e-9 * p.b_field)
    assert got == pytest.approx(conjugation_oracle(t, p.b_field, p.c_field), abs=1e-9 * p.b_field)


@settings(max_examples=20, deadline=None)
@given(st.floats(4.1, 20.0), st.sampled_from([0.25, 0.5]), st.integers(0, 2**31))
def test_cartesian_field_matches_conjugation(b_mult, c_mult, seed):
    p = TofuParams.from_multiples(b_mult * c_mult, c_mult, 20e3)
    rng = np.random.default_rng(seed)
    ts = rng.uniform(0.0, p.element_duration, 64)
    hx, hy, hz = tofu_cartesian_field(ts, p)
    for k, t in enumerate(ts):
        ref = np.array(conjugation_oracle(t, p.b_field, p.c_field))
        assert np.max(np.abs([hx[k], hy[k], hz[k]] - ref)) < 1e-9 * np.linalg.norm(ref)


def test_field_periodic_over_element():
    p = TofuParams.from_multiples(3.0, 0.25, 20e3)
    t = np.linspace(0.0, p.element_duration, 33)
    a = np.array(tofu_cartesian_field(t, p))
    b = np.array(tofu_cartesian_field(t + p.element_duration, p))
    assert np.max(np.abs(a - b)) < 1e-12 * p.b_field * 1e3


def test_default_digitization():
    p = TofuParams.from_multiples(3.0, 0.25, 20e3, 200)
    w = tofu_waveform(p)
    assert len(w) == 200
    assert w.dwell == pytest.approx(1e-6, rel=1e-12)
    assert w.duration == pytest.approx(200e-6, rel=1e-12)
    assert p.rotor_periods_per_element == 4


def test_half_condition_element_is_two_rotor_periods():
    p = TofuParams.from_multiples(3.0, 0.5, 20e3)
    assert p.condition == "half"
    assert p.element_duration == pytest.approx(2 * TAU_R)


def test_samples_are_midpoint_polar_form():
    p = TofuParams.from_multiples(3.0, 0.25, 20e3, 400)
    w = tofu_waveform(p)
    mid = (np.arange(400) + 0.5) * w.dwell
    hx, hy, hz = tofu_cartesian_field(mid, p)
    assert np.allclose(w.amplitude, np.hypot(hx, hy))
    assert np.allclose(w.phase, np.arctan2(hy, hx))
    assert np.allclose(w.offset, hz)
    assert np.allclose(w.cartesian("explicit"), np.column_stack([hx, hy, hz]))


def test_first_sample_close_to_t0_values():
    p = TofuParams.from_multiples(3.0, 0.25, 20e3, 20000)
    w = tofu_waveform(p)
    assert w.amplitude[0] == pytest.approx(p.c_field * math.sqrt(2), rel=1e-3)
    assert w.offset[0] == pytest.approx(p.b_field, rel=1e-3)


def test_total_phase_accumulates_offset():
    p = TofuParams.from_multiples(3.0, 0.25, 20e3)
    w = tofu_waveform(p)
    acc = np.concatenate([[0.0], np.cumsum(w.offset[:-1])]) * w.dwell + 0.5 * w.offset * w.dwell
    assert np.max(np.abs(w.total_phase - (w.phase - acc))) < 1e-12 * np.max(np.abs(acc))
    assert np.allclose(fold_offset(w.phase, w.offset, w.dwell), w.total_phase)


def test_elements_identical_when_repeated():
    w = tofu_waveform(TofuParams.from_multiples(3.0, 0.25, 20e3))
    r = w.repeated(2)
    assert np.array_equal(r.amplitude[:200], r.amplitude[200:])
    assert np.array_equal(r.offset[:200], r.offset[200:])


def _playback_gap(steps, flip=False):
    w = tofu_waveform(TofuParams.from_multiples(3.0, 0.25, 20e3, steps))
    if flip:
        w = RfWaveform(w.dwell, w.amplitude, w.phase, w.offset, total_phase=2 * w.phase - w.total_phase)
    s = SpinSystem((Spin("S", iso_shift=TWO_PI * 3e3), Spin("I", iso_shift=TWO_PI * -2e3)),
                   (DipolarCoupling(0, 1, TWO_PI * -2251.0),))
    prop = Propagator.for_orientations(s, 0.0, 0.8, 0.3, OMEGA_R, max_substep=w.dwell)
    u_exp = prop.segment(WaveformSegment(w, 1, "explicit"), 0.0)[0]
    u_fold = prop.segment(WaveformSegment(w, 1, "folded"), 0.0)[0]
    return np.max(np.abs(u_exp - u_fold))


def test_folded_playback_converges_to_explicit():
    gaps = [_playback_gap(n) for n in (400, 1600, 6400)]
    assert gaps[0] < 0.02
    assert gaps[2] < 1e-4
    # second-order convergence of the stepped phase ramp
    assert gaps[0] / gaps[1] > 12 and gaps[1] / gaps[2] > 12


def test_folded_phase_sign_is_pinned():
    assert _playback_gap(1600, flip=True) > 1.0


def test_digitization_self_convergence():
    s = SpinSystem((Spin("S"), Spin("I")), (DipolarCoupling(0, 1, TWO_PI * -2251.0),))
    prop = Propagator.for_orientations(s, 0.0, math.pi / 4, 0.0, OMEGA_R, max_substep=TAU_R / 2000)
    u200 = prop.segment(WaveformSegment(tofu_waveform(TofuParams.from_multiples(3.0, 0.25, 20e3, 200))), 0.0)[0]
    u2000 = prop.segment(WaveformSegment(tofu_waveform(TofuParams.from_multiples(3.0, 0.25, 20e3, 2000))), 0.0)[0]
    # digitization at 200 steps is an approximation of the continuous field
    assert np.linalg.norm(u200 - u2000, 2) < 0.05
    u4000 = prop.segment(WaveformSegment(tofu_waveform(TofuParams.from_multiples(3.0, 0.25, 20e3, 4000))), 0.0)[0]
    assert np.linalg.norm(u2000 - u4000, 2) < 1e-3


def test_postc7_schedule():
    w = postc7_waveform(OMEGA_R)
    assert len(w) == 56
    assert w.duration == pytest.approx(2 * TAU_R, rel=1e-12)
    assert np.allclose(w.amplitude, TWO_PI * 140e3)
    assert np.all(w.offset == 0.0)
    for k in range(7):
        assert w.phase[8 * k] == pytest.approx(2 * math.pi * k / 7)
        assert np.allclose(w.phase[8 * k + 1: 8 * k + 5], np.mod(2 * math.pi * k / 7 + math.pi, 2 * math.pi))


@pytest.mark.parametrize("fmt", ["two-column", "three-column"])
def test_shape_file_round_trip(tmp_path, fmt):
    p = TofuParams.from_multiples(3.0, 0.25, 20e3)
    w = tofu_waveform(p)
    path = export_waveform(w, tmp_path / "tofu.shape", fmt)
    lines = path.read_text().splitlines()
    body = [ln for ln in lines if not ln.startswith("#")]
    assert len(body) == 200
    assert any("B_hz" in ln for ln in lines) and any("C_hz" in ln for ln in lines)
    assert max(float(ln.split()[0]) for ln in body) == pytest.approx(100.0)
    back = read_waveform(path)
    assert np.allclose(back.amplitude, w.amplitude, rtol=1e-6)
    mode = "folded" if fmt == "two-column" else "explicit"
    assert np.allclose(back.cartesian(mode), w.cartesian(mode), rtol=1e-6, atol=1e-6 * p.b_field)
    s = SpinSystem((Spin("S", iso_shift=TWO_PI * 1e3), Spin("I")), (DipolarCoupling(0, 1, TWO_PI * -2251.0),))
    prop = Propagator.for_orientations(s, 0.0, 0.9, 0.2, OMEGA_R)
    u0 = prop.segment(WaveformSegment(w, 1, mode), 0.0)[0]
    u1 = prop.segment(WaveformSegment(back, 1, mode), 0.0)[0]
    assert np.max(np.abs(u0 - u1)) < 1e-6


def test_export_rejects_bad_format(tmp_path):
    with pytest.raises(ValueError):
        export_waveform(postc7_waveform(OMEGA_R), tmp_path / "x", "binary")


def test_export_unwritable(tmp_path):
    with pytest.raises(OSError):
        export_waveform(postc7_waveform(OMEGA_R), tmp_path / "missing" / "x.shape")


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(b=3.0, c=0.25, steps=8),
        dict(b=0.9, c=0.25),
        dict(b=3.0, c=-0.25),
    ],
)
def test_param_validation(kwargs):
    with pytest.raises(ValueError):
        TofuParams.from_multiples(spin_rate_hz=20e3, **kwargs)


def test_exploratory_condition_warns():
    with pytest.warns(UserWarning, match="exploratory"):
        TofuParams.from_multiples(3.0, 0.3, 20e3)


def test_waveform_validation():
    with pytest.raises(ValueError):
        RfWaveform(1e-6, [], [], [])
    with pytest.raises(ValueError):
        RfWaveform(1e-6, [-1.0], [0.0], [0.0])
    with pytest.raises(ValueError):
        RfWaveform(0.0, [1.0], [0.0], [0.0])
