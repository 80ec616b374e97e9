"""Piecewise-constant propagation of the spin density operator.

The internal Hamiltonian in the Zeeman rotating frame is

    H(t) = sum_k w_k(t) I_kz
         + sum_{homonuclear kl} w_kl(t) (3 I_kz I_lz - I_k . I_l)
         + sum_{heteronuclear kl} w_kl(t) 2 I_kz I_lz
         + sum_J 2 pi J (I_k . I_l  or  I_kz I_lz for heteronuclear pairs)

and rf acts on the channel of the S spin.  Every dwell of a waveform is
split into equal substeps no longer than ``max_substep``; within a substep
the internal Hamiltonian is sampled at the midpoint and the propagator is
obtained from the eigendecomposition of the Hermitian matrix.

Propagation is vectorised over crystallites: all Hamiltonians and
propagators carry a leading crystallite axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import reduce
from typing import Sequence

import numpy as np

from .rfgen import RfWaveform
from .spinsys import FourierCoeffs, SpinSystem, fourier_batch

DEFAULT_SUBSTEPS_PER_ROTOR_PERIOD = 400
_SUBSTEP_CHUNK = 64


class PropagationError(RuntimeError):
    """Raised for inconsistent timelines or numerical failure."""


# --- operators -----------------------------------------------------------------


@dataclass(frozen=True)
class OperatorSet:
    ix: np.ndarray  # (n, d, d)
    iy: np.ndarray
    iz: np.ndarray

    @property
    def n(self) -> int:
        return self.ix.shape[0]

    @property
    def dim(self) -> int:
        return self.ix.shape[1]

    @property
    def fx(self) -> np.ndarray:
        return self.ix.sum(axis=0)

    @property
    def fy(self) -> np.ndarray:
        return self.iy.sum(axis=0)

    @property
    def fz(self) -> np.ndarray:
        return self.iz.sum(axis=0)

    def collective(self, spins: Sequence[int]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        idx = list(spins)
        return self.ix[idx].sum(axis=0), self.iy[idx].sum(axis=0), self.iz[idx].sum(axis=0)


_PAULI = {
    "x": np.array([[0, 0.5], [0.5, 0]], dtype=complex),
    "y": np.array([[0, -0.5j], [0.5j, 0]], dtype=complex),
    "z": np.array([[0.5, 0], [0, -0.5]], dtype=complex),
}


def spin_operators(n: int) -> OperatorSet:
    """Single-spin operators embedded in the 2^n product space."""
    if not 1 <= n <= 6:
        raise ValueError(f"spin count must be between 1 and 6, got {n}")
    eye = np.eye(2, dtype=complex)
    ops = {}
    for q, s in _PAULI.items():
        ops[q] = np.array(
            [reduce(np.kron, [s if j == k else eye for j in range(n)]) for k in range(n)]
        )
    return OperatorSet(ops["x"], ops["y"], ops["z"])


# --- timeline ------------------------------------------------------------------


@dataclass(frozen=True)
class Delay:
    duration: float


@dataclass(frozen=True)
class IdealPulse:
    """Instantaneous rotation by ``angle`` about the axis at ``phase`` in the xy plane.

    ``spins=None`` means every spin of the rf channel.
    """

    angle: float
    phase: float = 0.0
    spins: tuple[int, ...] | None = None


@dataclass(frozen=True)
class WaveformSegment:
    """``repeat`` back-to-back copies of a waveform played on the rf channel."""

    waveform: RfWaveform = field(compare=False)
    repeat: int = 1
    mode: str = "explicit"
    label: str = ""

    @property
    def duration(self) -> float:
        return self.waveform.duration * self.repeat


ShapedPulse = WaveformSegment


def segment_duration(seg) -> float:
    if isinstance(seg, Delay):
        return seg.duration
    if isinstance(seg, WaveformSegment):
        return seg.duration
    if isinstance(seg, IdealPulse):
        return 0.0
    raise PropagationError(f"unknown segment type {type(seg).__name__}")


def timeline_duration(timeline: Sequence) -> float:
    return math.fsum(segment_duration(s) for s in timeline)


# --- states --------------------------------------------------------------------


@dataclass(frozen=True)
class DensityState:
    rho: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rho, dtype=complex)
        if np.max(np.abs(r - np.swapaxes(r, -1, -2).conj()), initial=0.0) > 1e-12 * max(1.0, np.abs(r).max()):
            raise ValueError("density operator must be Hermitian")
        object.__setattr__(self, "rho", r)


def detect(rho, op: np.ndarray) -> np.ndarray | float:
    """Re tr(rho op) / tr(op op); a fully x-polarised spin k gives 1 for op = I_kx."""
    r = rho.rho if isinstance(rho, DensityState) else np.asarray(rho)
    norm = np.trace(op @ op).real
    val = np.einsum("...ij,ji->...", r, op).real / norm
    return float(val) if np.ndim(val) == 0 else val


def unitarity_error(u: np.ndarray) -> float:
    d = u.shape[-1]
    return float(np.max(np.abs(np.swapaxes(u, -1, -2).conj() @ u - np.eye(d))))


# --- Hamiltonians --------------------------------------------------------------


def expm_hermitian(h: np.ndarray, dt: float) -> np.ndarray:
    """exp(-i h dt) for stacks of Hermitian matrices."""
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * w * dt)[..., None, :]) @ np.swapaxes(v, -1, -2).conj()


def ordered_product(us: np.ndarray) -> np.ndarray:
    """U_{n-1} ... U_1 U_0 for a stack ordered in time along axis 0."""
    while us.shape[0] > 1:
        if us.shape[0] % 2:
            tail = us[-1:]
            body = us[:-1]
            us = np.concatenate([body[1::2] @ body[0::2], tail])
        else:
            us = us[1::2] @ us[0::2]
    return us[0]


class HamiltonianModel:
    """Operator bases for one spin system; immutable and shareable."""

    def __init__(self, system: SpinSystem):
        self.system = system
        self.ops = spin_operators(system.n_spins)
        o = self.ops
        self.channel = system.channel()
        self.rf_ops = o.collective(self.channel)
        self.shift_basis = o.iz
        dip = []
        for c in system.dipolar:
            a, b = c.spin_a, c.spin_b
            zz = 2.0 * o.iz[a] @ o.iz[b]
            if system.is_homonuclear(a, b):
                dip.append(zz - o.ix[a] @ o.ix[b] - o.iy[a] @ o.iy[b])
            else:
                dip.append(zz)
        d = o.dim
        self.dipolar_basis = np.array(dip).reshape(len(dip), d, d)
        static = np.zeros((d, d), dtype=complex)
        for c in system.scalar:
            a, b = c.spin_a, c.spin_b
            term = o.iz[a] @ o.iz[b]
            if system.is_homonuclear(a, b):
                term = term + o.ix[a] @ o.ix[b] + o.iy[a] @ o.iy[b]
            static += 2.0 * math.pi * c.j * term
        self.static = static

    @property
    def dim(self) -> int:
        return self.ops.dim

    def internal(self, coeffs: FourierCoeffs, t) -> np.ndarray:
        """Internal Hamiltonian(s).  Output shape t.shape + coeffs batch + (d, d)."""
        h = np.einsum("...k,kij->...ij", coeffs.shift_at(t), self.shift_basis)
        if self.dipolar_basis.shape[0]:
            h = h + np.einsum("...k,kij->...ij", coeffs.dipolar_at(t), self.dipolar_basis)
        return h + self.static

    def rf(self, field_xyz) -> np.ndarray:
        """rf Hamiltonian(s) from (..., 3) field coefficients on Fx, Fy, Fz."""
        f = np.asarray(field_xyz, dtype=float)
        fx, fy, fz = self.rf_ops
        return f[..., 0, None, None] * fx + f[..., 1, None, None] * fy + f[..., 2, None, None] * fz

    def ideal_pulse(self, angle: float, phase: float, spins=None) -> np.ndarray:
        spins = self.channel if spins is None else list(spins)
        fx, fy, _ = self.ops.collective(spins)
        return expm_hermitian(math.cos(phase) * fx + math.sin(phase) * fy, angle)


def hamiltonian_at(t: float, system: SpinSystem, coeffs: FourierCoeffs, sample=None) -> np.ndarray:
    """Full Hamiltonian (rad/s) at time ``t``; ``sample`` is (amplitude, phase, offset) or None."""
    model = HamiltonianModel(system)
    h = model.internal(coeffs, t)
    if sample is not None:
        a, ph, off = sample
        h = h + model.rf([a * math.cos(ph), a * math.sin(ph), off])
    return h


# --- propagation engine ----------------------------------------------------------


class Propagator:
    """Computes total propagators of timelines for a batch of crystallites.

    Element propagators of repeated waveforms are cached by the rotor phase
    at which they start, so growing a TOFU block costs a matrix power.
    """

    def __init__(self, model: HamiltonianModel, coeffs: FourierCoeffs, max_substep: float | None = None):
        self.model = model
        self.coeffs = coeffs
        self.omega_r = coeffs.omega_r
        self.tau_r = 2.0 * math.pi / self.omega_r
        self.max_substep = max_substep or self.tau_r / DEFAULT_SUBSTEPS_PER_ROTOR_PERIOD
        self.n_cryst = coeffs.shifts.shape[0] if coeffs.shifts.ndim == 3 else 1
        self._cache: dict = {}

    @classmethod
    def for_orientations(cls, system: SpinSystem, alpha, beta, gamma, omega_r: float, max_substep=None):
        return cls(HamiltonianModel(system), fourier_batch(system, alpha, beta, gamma, omega_r), max_substep)

    def _phase_key(self, t0: float) -> int:
        frac = (t0 / self.tau_r) % 1.0
        key = int(round(frac * 1e9)) % 1_000_000_000
        return key

    def _identity(self) -> np.ndarray:
        d = self.model.dim
        return np.broadcast_to(np.eye(d, dtype=complex), (self.n_cryst, d, d)).copy()

    def _steps(self, t0: float, durations: np.ndarray, rf_fields: np.ndarray | None) -> np.ndarray:
        """Propagator over consecutive constant-rf intervals, each split into substeps."""
        edges = t0 + np.concatenate([[0.0], np.cumsum(durations)])
        u_total = self._identity()
        nsub = np.maximum(1, np.ceil(durations / self.max_substep - 1e-9).astype(int))
        # flatten to substeps
        starts = np.repeat(edges[:-1], nsub)
        lens = np.repeat(durations / nsub, nsub)
        offs = np.concatenate([np.arange(k) for k in nsub]) if len(nsub) else np.zeros(0)
        mids = starts + (offs + 0.5) * lens
        which = np.repeat(np.arange(len(durations)), nsub)
        for lo in range(0, mids.size, _SUBSTEP_CHUNK):
            sl = slice(lo, lo + _SUBSTEP_CHUNK)
            h = self.model.internal(self.coeffs, mids[sl])
            if h.ndim == 3:
                h = h[:, None]
            if rf_fields is not None:
                h = h + self.model.rf(rf_fields[which[sl]])[:, None]
            w, v = np.linalg.eigh(h)
            ph = np.exp(-1j * w * lens[sl][:, None, None])
            us = (v * ph[..., None, :]) @ np.swapaxes(v, -1, -2).conj()
            u_total = ordered_product(us) @ u_total
        return u_total

    def delay(self, duration: float, t0: float) -> np.ndarray:
        if duration < 0:
            raise PropagationError(f"negative delay {duration}")
        if duration == 0:
            return self._identity()
        key = ("delay", round(duration * 1e15), self._phase_key(t0))
        if key not in self._cache:
            self._cache[key] = self._steps(t0, np.array([duration]), None)
        return self._cache[key]

    def waveform(self, seg: WaveformSegment, t0: float) -> np.ndarray:
        w = seg.waveform
        fields = w.cartesian(seg.mode)
        n_periods = w.duration / self.tau_r
        periodic = abs(n_periods - round(n_periods)) < 1e-9 and round(n_periods) > 0
        key = ("wave", id(w), seg.mode, self._phase_key(t0))
        if key not in self._cache:
            self._cache[key] = (w, self._steps(t0, np.full(len(w), w.dwell), fields))
        u_one = self._cache[key][1]
        if seg.repeat == 1:
            return u_one
        if periodic:
            return np.linalg.matrix_power(u_one, seg.repeat)
        u, t = u_one, t0 + w.duration
        for _ in range(seg.repeat - 1):
            u = self.waveform(WaveformSegment(w, 1, seg.mode), t) @ u
            t += w.duration
        return u

    def segment(self, seg, t0: float) -> np.ndarray:
        if isinstance(seg, Delay):
            return self.delay(seg.duration, t0)
        if isinstance(seg, WaveformSegment):
            if seg.repeat < 0:
                raise PropagationError("negative repeat count")
            if seg.repeat == 0:
                return self._identity()
            return self.waveform(seg, t0)
        if isinstance(seg, IdealPulse):
            key = ("pulse", seg.angle, seg.phase, seg.spins)
            if key not in self._cache:
                u = self.model.ideal_pulse(seg.angle, seg.phase, seg.spins)
                self._cache[key] = np.broadcast_to(u, (self.n_cryst,) + u.shape).copy()
            return self._cache[key]
        raise PropagationError(f"unknown segment type {type(seg).__name__}")

    def total(self, timeline: Sequence, t0: float = 0.0) -> np.ndarray:
        """Time-ordered total propagator, shape (n_cryst, d, d)."""
        u = self._identity()
        t = t0
        for i, seg in enumerate(timeline):
            try:
                u = self.segment(seg, t) @ u
            except PropagationError as exc:
                raise PropagationError(f"segment {i} ({type(seg).__name__}): {exc}") from exc
            t += segment_duration(seg)
        return u


def propagate(rho0, timeline: Sequence, system: SpinSystem, crystallite, omega_r: float,
              max_substep: float | None = None, return_propagator: bool = False):
    """Evolve ``rho0`` through ``timeline`` for a single crystallite.

    ``crystallite`` is an :class:`~tofusim.spinsys.EulerAngles`.  Returns the
    final :class:`DensityState` (and the total propagator if requested).
    """
    rho = rho0.rho if isinstance(rho0, DensityState) else np.asarray(rho0, dtype=complex)
    prop = Propagator.for_orientations(
        system, crystallite.alpha, crystallite.beta, crystallite.gamma, omega_r, max_substep
    )
    u = prop.total(timeline)[0]
    err = unitarity_error(u)
    if not err < 1e-10:
        raise PropagationError(f"propagator not unitary (max deviation {err:.3g})")
    out = DensityState(u @ rho @ u.conj().T)
    return (out, u) if return_propagator else out
