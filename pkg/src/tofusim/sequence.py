"""TOFU-RADAR main and reference experiments and dephasing series.

Both layouts have length ``T + 3 tau_r / 2 + p tau_r`` where ``p tau_r`` is
the rotor-synchronised central block::

    MAIN       W(T/2)  D(3/4)  [block]  D(3/4)  W(T/2)
    REFERENCE  W(T/4) D(1/2) W(T/4)  D(1/4) [block] D(1/4)  W(T/4) D(1/2) W(T/4)

(delays in rotor periods).  The central block is::

    pad  selective-pi(S)  hard-pi(all)  delay(selective duration)  pad

so that the hard pulse sits at the centre of the whole sequence and refocuses
isotropic shifts.  In MAIN the second TOFU half starts half a rotor period
out of step with the first, which flips the sign of every recoupled coupling;
the selective pulse then restores the I-S coupling while all I-I couplings
cancel.  In REFERENCE each half refocuses all recoupled couplings on its own.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .powder import OrientationSet, powder_average
from .propagator import (
    Delay,
    HamiltonianModel,
    IdealPulse,
    PropagationError,
    Propagator,
    WaveformSegment,
    timeline_duration,
    unitarity_error,
)
from .rfgen import RfWaveform, TofuParams, postc7_waveform, tofu_waveform
from .spinsys import SpinSystem, fourier_batch

MAIN = "main"
REFERENCE = "reference"
LAYOUTS = (MAIN, REFERENCE)

HARD_PULSE_AMPLITUDE_HZ = 80e3
UNITARITY_TOL = 1e-10


@dataclass(frozen=True)
class SelectivePulseParams:
    """Selective inversion of the S spin.

    ``shape`` is ``"gaussian"`` (finite pulse, carrier on the target) or
    ``"ideal"`` (instantaneous pi on the target only).  ``truncation`` is the
    Gaussian amplitude at the pulse edges relative to its peak.
    ``rotor_sync_p`` fixes the central block to ``p`` rotor periods; ``None``
    picks the smallest valid ``p``.
    """

    duration: float = 250e-6
    truncation: float = 0.01
    target: int | None = None
    rotor_sync_p: int | None = None
    shape: str = "gaussian"
    dwell: float = 0.5e-6

    def __post_init__(self):
        if self.shape not in ("gaussian", "ideal"):
            raise ValueError(f"unknown selective pulse shape {self.shape!r}")
        if self.shape == "gaussian" and not self.duration > 0:
            raise ValueError("selective pulse duration must be positive")
        if not 0 < self.truncation < 1:
            raise ValueError("Gaussian truncation level must lie in (0, 1)")


@dataclass(frozen=True)
class ExperimentParams:
    tofu: TofuParams
    n_increments: int = 1
    selective: SelectivePulseParams = field(default_factory=SelectivePulseParams)
    layout: str = MAIN
    hard_pulse: str = "ideal"  # or "finite" (80 kHz)
    playback: str = "explicit"

    def __post_init__(self):
        if self.n_increments < 0:
            raise ValueError("n_increments must be >= 0")
        if self.layout not in LAYOUTS:
            raise ValueError(f"layout must be one of {LAYOUTS}")
        if self.hard_pulse not in ("ideal", "finite"):
            raise ValueError("hard_pulse must be 'ideal' or 'finite'")

    @property
    def tau_r(self) -> float:
        return self.tofu.rotor_period

    @property
    def total_recoupling_time(self) -> float:
        """T = 16 n tau_r."""
        return 16 * self.n_increments * self.tau_r


@dataclass(frozen=True)
class EventTimeline:
    segments: tuple
    layout: str
    T: float
    tau_r: float
    labels: tuple[str, ...] = ()

    def __iter__(self):
        return iter(self.segments)

    def __len__(self):
        return len(self.segments)

    @property
    def duration(self) -> float:
        return timeline_duration(self.segments)


def gaussian_selective_pi(p: SelectivePulseParams, dwell: float | None = None,
                          carrier_offset: float = 0.0) -> RfWaveform:
    """Truncated Gaussian pi pulse with the carrier moved to ``carrier_offset`` (rad/s).

    The carrier shift is a linear phase ramp, so the offset column stays zero
    and explicit and folded playback coincide.
    """
    dwell = dwell or p.dwell
    n = int(round(p.duration / dwell))
    if n < 8 or abs(n * dwell - p.duration) > 1e-9 * p.duration:
        raise ValueError("selective pulse duration must be a multiple of the dwell and >> dwell")
    t = (np.arange(n) + 0.5) * dwell
    half = 0.5 * p.duration
    sigma = half / math.sqrt(2.0 * math.log(1.0 / p.truncation))
    shape = np.exp(-((t - half) ** 2) / (2.0 * sigma**2))
    amp = shape * math.pi / (shape.sum() * dwell)
    phase = carrier_offset * t
    return RfWaveform(dwell, amp, phase, np.zeros(n), meta={"kind": "gaussian", "duration_s": p.duration})


def _elements(length: float, p: TofuParams) -> int:
    k = length / p.element_duration
    if abs(k - round(k)) > 1e-9:
        raise ValueError("TOFU block length is not a whole number of elements")
    return int(round(k))


class ExperimentBuilder:
    """Builds timelines for one spin system, sharing waveform objects.

    Sharing matters: the propagator caches element propagators by waveform
    identity and rotor phase.
    """

    def __init__(self, system: SpinSystem, params: ExperimentParams):
        self.system = system
        self.params = params
        p = params.tofu
        self.tau_r = p.rotor_period
        self.element = tofu_waveform(p)
        sel = params.selective
        target = system.s_spin if sel.target is None else sel.target
        self.target = target
        if sel.shape == "gaussian":
            self.sel_wave = gaussian_selective_pi(sel, carrier_offset=system.spins[target].iso_shift)
            self.sel_segments = [WaveformSegment(self.sel_wave, 1, "explicit", "selective")]
            d_sel = self.sel_wave.duration
        else:
            self.sel_segments = [IdealPulse(math.pi, 0.0, (target,))]
            d_sel = 0.0
        if params.hard_pulse == "finite":
            amp = 2 * math.pi * HARD_PULSE_AMPLITUDE_HZ
            hard = RfWaveform(math.pi / amp, [amp], [0.0], [0.0], meta={"kind": "hard"})
            self.hard_segments = [WaveformSegment(hard, 1, "explicit", "hard")]
            d_hard = hard.duration
        else:
            self.hard_segments = [IdealPulse(math.pi, 0.0, None)]
            d_hard = 0.0
        needed = 2.0 * d_sel + d_hard
        p_min = max(0, math.ceil(needed / self.tau_r - 1e-9))
        p_sync = sel.rotor_sync_p if sel.rotor_sync_p is not None else p_min
        if p_sync < p_min:
            raise ValueError(
                f"central block needs {needed * 1e6:.3f} us; rotor_sync_p={p_sync} gives "
                f"{p_sync * self.tau_r * 1e6:.3f} us. Nearest valid p is {p_min}"
            )
        self.p_sync = p_sync
        pad = 0.5 * (p_sync * self.tau_r - needed)
        self.block = (
            [Delay(pad)] + self.sel_segments + self.hard_segments + [Delay(d_sel)] + [Delay(pad)]
        )

    def tofu(self, length: float) -> WaveformSegment:
        return WaveformSegment(self.element, _elements(length, self.params.tofu), self.params.playback, "tofu")

    def build(self, n: int, layout: str) -> EventTimeline:
        tr = self.tau_r
        T = 16 * n * tr
        if layout == MAIN:
            segs = [self.tofu(T / 2), Delay(0.75 * tr), *self.block, Delay(0.75 * tr), self.tofu(T / 2)]
        elif layout == REFERENCE:
            q = self.tofu(T / 4)
            segs = [q, Delay(0.5 * tr), q, Delay(0.25 * tr), *self.block,
                    Delay(0.25 * tr), q, Delay(0.5 * tr), q]
        else:
            raise ValueError(f"unknown layout {layout!r}")
        segs = [s for s in segs if not (isinstance(s, Delay) and s.duration == 0.0)]
        labels = tuple(_label(s) for s in segs)
        return EventTimeline(tuple(segs), layout, T, tr, labels)


def _label(seg) -> str:
    if isinstance(seg, WaveformSegment):
        return seg.label or "waveform"
    if isinstance(seg, IdealPulse):
        return "hard" if seg.spins is None else "selective"
    return "delay"


def build_experiment(params: ExperimentParams, system: SpinSystem) -> EventTimeline:
    """Timeline of the main or reference TOFU-RADAR experiment."""
    return ExperimentBuilder(system, params).build(params.n_increments, params.layout)


# --- dephasing series ----------------------------------------------------------------


@dataclass
class DephasingCurve:
    """Per-spin powder-averaged signals against T.

    ``signals[layout][label]`` is an array aligned with ``t_values``.
    """

    t_values: np.ndarray
    n_values: np.ndarray
    tau_r: float
    signals: dict
    metadata: dict = field(default_factory=dict)

    @property
    def t_rotor_periods(self) -> np.ndarray:
        return self.t_values / self.tau_r

    def signal(self, layout: str, label: str) -> np.ndarray:
        return self.signals[layout][label]


def _observables(system: SpinSystem, model: HamiltonianModel, observed: Sequence[int]):
    o = model.ops
    rho0 = o.collective(system.channel())[0]
    return rho0, [(o.ix[k], o.iy[k]) for k in observed]


def _signals(u: np.ndarray, rho0, obs, detection: str) -> np.ndarray:
    rho = u @ rho0 @ np.swapaxes(u, -1, -2).conj()
    out = []
    for ix, iy in obs:
        norm = np.trace(ix @ ix).real
        sx = np.einsum("cij,ji->c", rho, ix).real / norm
        if detection == "abs":
            sy = np.einsum("cij,ji->c", rho, iy).real / norm
            sx = np.hypot(sx, sy)
        elif detection != "real":
            raise ValueError("detection must be 'real' or 'abs'")
        out.append(sx)
    return np.array(out)  # (n_obs, n_cryst)


def _chunks(n: int, threads: int) -> list[slice]:
    size = max(1, math.ceil(n / max(1, threads * 4)))
    return [slice(i, min(n, i + size)) for i in range(0, n, size)]


def run_timelines(system: SpinSystem, timelines: dict, powder: OrientationSet, omega_r: float,
                  observed: Sequence[int] | None = None, detection: str = "real",
                  threads: int = 1, max_substep: float | None = None) -> tuple[dict, float]:
    """Powder-averaged detection for a dict of named timelines.

    Returns ``({name: (n_obs,) averaged signals}, max unitarity error)``.
    """
    observed = system.observed() if observed is None else list(observed)
    model = HamiltonianModel(system)
    rho0, obs = _observables(system, model, observed)
    alpha, beta, gamma = powder.alpha, powder.beta, powder.gamma
    names = list(timelines)

    def work(sl: slice):
        coeffs = fourier_batch(system, alpha[sl], beta[sl], gamma[sl], omega_r)
        prop = Propagator(model, coeffs, max_substep)
        res, err = {}, 0.0
        for name in names:
            try:
                u = prop.total(timelines[name])
            except PropagationError as exc:
                raise PropagationError(f"crystallites {sl.start}..{sl.stop - 1}: {exc}") from exc
            err = max(err, unitarity_error(u))
            res[name] = _signals(u, rho0, obs, detection)
        return res, err

    slices = _chunks(len(powder), threads)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, slices))
    else:
        parts = [work(sl) for sl in slices]
    max_err = max(e for _, e in parts)
    if not max_err < UNITARITY_TOL:
        raise PropagationError(f"propagator not unitary (max deviation {max_err:.3g})")
    out = {}
    for name in names:
        per_cryst = np.concatenate([p[name] for p, _ in parts], axis=1)
        out[name] = np.array([powder_average(v, powder) for v in per_cryst])
    return out, max_err


def run_dephasing_series(system: SpinSystem, params: ExperimentParams, powder: OrientationSet,
                         n_list: Sequence[int], layouts: Sequence[str] = LAYOUTS,
                         detection: str = "real", relaxation_rate: float = 0.0,
                         threads: int = 1, max_substep: float | None = None,
                         observed: Sequence[int] | None = None) -> DephasingCurve:
    """Simulate the main and/or reference experiment for every n in ``n_list``.

    Observed spins are all channel spins other than S unless given.  The
    relaxation rate multiplies every signal by exp(-rate T).
    """
    if not system.observed() and observed is None:
        raise ValueError("spin system has no observed spins besides S")
    observed = system.observed() if observed is None else list(observed)
    builder = ExperimentBuilder(system, params)
    timelines = {(layout, n): builder.build(n, layout) for layout in layouts for n in n_list}
    avg, err = run_timelines(system, timelines, powder, params.tofu.omega_r, observed,
                             detection, threads, max_substep)
    tau_r = params.tau_r
    t_values = np.array([16 * n * tau_r for n in n_list], dtype=float)
    decay = np.exp(-relaxation_rate * t_values)
    labels = [system.spins[k].label for k in observed]
    signals = {
        layout: {
            lbl: np.array([avg[(layout, n)][i] for n in n_list]) * decay for i, lbl in enumerate(labels)
        }
        for layout in layouts
    }
    meta = {
        "layouts": list(layouts),
        "B_over_wr": params.tofu.b_field / params.tofu.omega_r,
        "C_over_wr": params.tofu.c_field / params.tofu.omega_r,
        "spin_rate_hz": params.tofu.omega_r / (2 * math.pi),
        "steps_per_element": params.tofu.steps_per_element,
        "selective": params.selective.shape,
        "rotor_sync_p": builder.p_sync,
        "hard_pulse": params.hard_pulse,
        "detection": detection,
        "relaxation_rate": relaxation_rate,
        "powder": f"{powder.scheme}:{powder.n_ab}:{powder.n_gamma}",
        "max_unitarity_error": err,
    }
    return DephasingCurve(t_values, np.asarray(n_list), tau_r, signals, meta)


def postc7_timeline(n: int, omega_r: float, waveform: RfWaveform | None = None) -> list:
    """Continuous POST-C7 recoupling for T = 16 n tau_r (8 n cycles)."""
    w = waveform or postc7_waveform(omega_r)
    return [WaveformSegment(w, 8 * n, "explicit", "postc7")]


def tofu_timeline(n_elements: int, p: TofuParams, waveform: RfWaveform | None = None,
                  playback: str = "explicit") -> list:
    """Plain TOFU recoupling (no RADAR) for ``n_elements`` elements."""
    w = waveform or tofu_waveform(p)
    return [WaveformSegment(w, n_elements, playback, "tofu")]


def with_params(params: ExperimentParams, **changes) -> ExperimentParams:
    return replace(params, **changes)
