"""TOFU and POST-C7 rf waveforms and shape-file I/O.

The TOFU field is the nested triple oscillating field

    H_rf(t) = C Fx + C Rx(t) Fy Rx(t)^+ + B Rx(t) Ry(t) Fz Ry(t)^+ Rx(t)^+,
    Rq(t) = exp(-i C t Fq),

whose Cartesian coefficients are

    hx = C + B sin(Ct)
    hy = C cos(Ct) - B sin(Ct) cos(Ct)
    hz = C sin(Ct) + B cos^2(Ct).

Playback conventions: in *explicit* mode each dwell carries
``(amplitude, phase, offset)`` and the rf Hamiltonian is
``A (cos(phi) Fx + sin(phi) Fy) + offset Fz``.  In *folded* mode the offset
is absorbed into the phase for a constant carrier,

    total_phase[k] = phase[k] - (sum_{j<k} offset[j] dwell + offset[k] dwell / 2),

i.e. the accumulated offset phase is evaluated at the midpoint of each
dwell.  The minus sign makes the folded propagator equal the explicit one
whenever the offset integral over the waveform is a multiple of 2 pi.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MIN_STEPS_PER_ELEMENT = 16


@dataclass(frozen=True)
class TofuParams:
    b_field: float
    c_field: float
    omega_r: float
    steps_per_element: int = 200

    def __post_init__(self):
        if self.steps_per_element < MIN_STEPS_PER_ELEMENT:
            raise ValueError(
                f"steps_per_element={self.steps_per_element} undersamples the element; "
                f"use at least {MIN_STEPS_PER_ELEMENT}"
            )
        if self.c_field <= 0 or self.omega_r <= 0:
            raise ValueError("C and spinning frequency must be positive")
        if not self.b_field > 4.0 * self.c_field:
            raise ValueError("TOFU requires B > 4C")
        if self.condition is None:
            warnings.warn(
                f"exploratory TOFU condition C/wr = {self.c_field / self.omega_r:.4g}; "
                "only C = wr/4 and C = wr/2 are supported recoupling conditions",
                stacklevel=2,
            )
        ratio = self.b_field / self.c_field
        if abs(ratio - round(ratio)) > 1e-9:
            warnings.warn(f"B/C = {ratio:.6g} is not an integer; the element is not cyclic", stacklevel=2)

    @classmethod
    def from_multiples(cls, b: float, c: float, spin_rate_hz: float, steps: int = 200) -> "TofuParams":
        """Build from B and C given as multiples of the spinning frequency."""
        wr = 2.0 * math.pi * spin_rate_hz
        return cls(b * wr, c * wr, wr, steps)

    @property
    def condition(self) -> str | None:
        ratio = self.c_field / self.omega_r
        if math.isclose(ratio, 0.25, rel_tol=1e-12):
            return "quarter"
        if math.isclose(ratio, 0.5, rel_tol=1e-12):
            return "half"
        return None

    @property
    def element_duration(self) -> float:
        return 2.0 * math.pi / self.c_field

    @property
    def rotor_period(self) -> float:
        return 2.0 * math.pi / self.omega_r

    @property
    def rotor_periods_per_element(self) -> int:
        return int(round(self.element_duration / self.rotor_period))


@dataclass(frozen=True)
class RfWaveform:
    """Piecewise-constant rf waveform with uniform dwell (seconds).

    ``amplitude``, ``offset`` in rad/s; ``phase`` and ``total_phase`` in
    radians.
    """

    dwell: float
    amplitude: np.ndarray
    phase: np.ndarray
    offset: np.ndarray
    total_phase: np.ndarray = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("amplitude", "phase", "offset"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.amplitude.size == 0:
            raise ValueError("waveform has no samples")
        if not (self.amplitude.shape == self.phase.shape == self.offset.shape):
            raise ValueError("amplitude, phase and offset must have equal length")
        if np.any(self.amplitude < 0):
            raise ValueError("amplitudes must be non-negative")
        if not self.dwell > 0:
            raise ValueError("dwell must be positive")
        if self.total_phase is None:
            object.__setattr__(self, "total_phase", fold_offset(self.phase, self.offset, self.dwell))
        else:
            object.__setattr__(self, "total_phase", np.asarray(self.total_phase, dtype=float))

    def __len__(self) -> int:
        return self.amplitude.size

    @property
    def duration(self) -> float:
        return self.dwell * len(self)

    @property
    def samples(self) -> list[tuple[float, float, float]]:
        return list(zip(self.amplitude.tolist(), self.phase.tolist(), self.offset.tolist()))

    def playback(self, mode: str = "explicit") -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(amplitude, phase, offset) arrays actually played out."""
        if mode == "explicit":
            return self.amplitude, self.phase, self.offset
        if mode == "folded":
            return self.amplitude, self.total_phase, np.zeros_like(self.offset)
        raise ValueError(f"unknown playback mode {mode!r}")

    def cartesian(self, mode: str = "explicit") -> np.ndarray:
        """(n, 3) array of field coefficients on Fx, Fy, Fz."""
        a, ph, off = self.playback(mode)
        return np.column_stack([a * np.cos(ph), a * np.sin(ph), off])

    def repeated(self, n: int) -> "RfWaveform":
        return RfWaveform(
            self.dwell,
            np.tile(self.amplitude, n),
            np.tile(self.phase, n),
            np.tile(self.offset, n),
            meta=dict(self.meta),
        )


def fold_offset(phase: np.ndarray, offset: np.ndarray, dwell: float) -> np.ndarray:
    accumulated = np.concatenate([[0.0], np.cumsum(offset)[:-1]]) * dwell + 0.5 * offset * dwell
    return phase - accumulated


def tofu_cartesian_field(t, p: TofuParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Coefficients (h_x, h_y, h_z) of Fx, Fy, Fz of the TOFU field at time ``t``."""
    ct = p.c_field * np.asarray(t, dtype=float)
    s, c = np.sin(ct), np.cos(ct)
    hx = p.c_field + p.b_field * s
    hy = p.c_field * c - p.b_field * s * c
    hz = p.c_field * s + p.b_field * c * c
    return hx, hy, hz


def tofu_waveform(p: TofuParams) -> RfWaveform:
    """One TOFU element sampled at dwell midpoints."""
    n = p.steps_per_element
    dwell = p.element_duration / n
    t_mid = (np.arange(n) + 0.5) * dwell
    hx, hy, hz = tofu_cartesian_field(t_mid, p)
    meta = {
        "kind": "tofu",
        "B_hz": p.b_field / (2 * math.pi),
        "C_hz": p.c_field / (2 * math.pi),
        "spin_rate_hz": p.omega_r / (2 * math.pi),
        "steps": n,
    }
    return RfWaveform(dwell, np.hypot(hx, hy), np.arctan2(hy, hx), hz, meta=meta)


def postc7_waveform(omega_r: float) -> RfWaveform:
    """POST-C7 cycle: seven elements (90)_phi (360)_{phi+pi} (270)_phi, phi = 2 pi k / 7.

    Amplitude 7 wr; a 90 degree pulse is one dwell, so the two-rotor-period
    cycle has 56 dwells.
    """
    amp = 7.0 * omega_r
    dwell = (math.pi / 2.0) / amp
    phases = []
    for k in range(7):
        phi = 2.0 * math.pi * k / 7.0
        phases += [phi] + [phi + math.pi] * 4 + [phi] * 3
    phases = np.mod(phases, 2.0 * math.pi)
    n = len(phases)
    meta = {"kind": "postc7", "spin_rate_hz": omega_r / (2 * math.pi)}
    return RfWaveform(dwell, np.full(n, amp), phases, np.zeros(n), meta=meta)


# --- shape files ---------------------------------------------------------------

_FORMATS = ("two-column", "three-column")


def export_waveform(w: RfWaveform, path, fmt: str = "two-column", header: dict | None = None) -> Path:
    """Write a shape file.

    two-column: amplitude in % of the maximum, total (folded) phase in degrees.
    three-column: amplitude %, phase in degrees, offset in Hz (explicit mode).
    ``#`` lines carry the dwell, maximum amplitude and any metadata.
    """
    if fmt not in _FORMATS:
        raise ValueError(f"format must be one of {_FORMATS}")
    path = Path(path)
    amax = float(w.amplitude.max())
    scale = 100.0 / amax if amax > 0 else 0.0
    lines = [f"# format = {fmt}", f"# dwell_s = {w.dwell!r}", f"# max_amplitude_hz = {amax / (2 * math.pi)!r}"]
    for key, value in {**w.meta, **(header or {})}.items():
        lines.append(f"# {key} = {value}")
    amp = w.amplitude * scale
    if fmt == "two-column":
        cols = np.column_stack([amp, np.rad2deg(w.total_phase)])
    else:
        cols = np.column_stack([amp, np.rad2deg(w.phase), w.offset / (2 * math.pi)])
    lines += [" ".join(f"{x:.10g}" for x in row) for row in cols]
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write shape file {path}: {exc}") from exc
    return path


def read_waveform(path) -> RfWaveform:
    """Read a file written by :func:`export_waveform`."""
    header, rows = {}, []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition("=")
            header[key.strip()] = value.strip()
        else:
            rows.append([float(x) for x in line.split()])
    data = np.array(rows, dtype=float)
    dwell = float(header["dwell_s"])
    amax = 2 * math.pi * float(header["max_amplitude_hz"])
    amp = data[:, 0] / 100.0 * amax
    if data.shape[1] == 2:
        ph = np.deg2rad(data[:, 1])
        return RfWaveform(dwell, amp, ph, np.zeros(len(amp)), total_phase=ph)
    return RfWaveform(dwell, amp, np.deg2rad(data[:, 1]), 2 * math.pi * data[:, 2])
