"""Closed-form signals, Fresnel curves, effective Hamiltonians and fits.

The closed forms assume an ideally truncated Ising coupling

    w_k = (3/16) c1(beta) cos(gamma),   c1 = b sin(2 beta) / (2 sqrt 2),

so that the reference signal is ``S_r = exp(-lambda T) prod_j cos(pi J_jk T)``,
the main signal is ``S_m = S_r <cos(w_k T)>`` and
``eta = (S_r - S_m) / S_r = 1 - <cos(w_k T)>``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple, Sequence

import numpy as np

from .powder import OrientationSet, generate_orientations
from .propagator import spin_operators
from .rfgen import TofuParams
from .spinsys import (
    GYROMAGNETIC_RATIOS,
    ANGSTROM,
    EulerAngles,
    SpinSystem,
    dipole_coupling_constant,
    fourier_batch,
    fourier_coefficients,
)

ISING_PREFACTOR = 3.0 / 16.0
DEFAULT_SR_FLOOR = 1e-3
GAMMA_13C = GYROMAGNETIC_RATIOS["13C"]
CONDITIONS = ("quarter", "half")


# --- closed-form signals ----------------------------------------------------------


def reference_signal(T, j_list: Sequence[float] = (), rate: float = 0.0) -> np.ndarray:
    """``exp(-rate T) prod cos(pi J T)``; ``T`` in seconds, ``J`` in Hz."""
    T = np.asarray(T, dtype=float)
    if np.any(T < 0):
        raise ValueError("T must be non-negative")
    s = np.exp(-rate * T)
    for j in j_list:
        s = s * np.cos(math.pi * j * T)
    return s


def ising_frequencies(b: float, powder: OrientationSet) -> np.ndarray:
    """Recoupled Ising frequency ``(3/16) c1 cos(gamma)`` per crystallite (rad/s)."""
    c1 = b * np.sin(2.0 * powder.beta) / (2.0 * math.sqrt(2.0))
    return ISING_PREFACTOR * c1 * np.cos(powder.gamma)


def main_signal(T, j_list: Sequence[float], rate: float, b: float, powder: OrientationSet) -> np.ndarray:
    T = np.asarray(T, dtype=float)
    w = ising_frequencies(b, powder)
    avg = np.cos(np.multiply.outer(T, w)) @ powder.weight
    return reference_signal(T, j_list, rate) * avg


def eta(s_r, s_m, floor: float = DEFAULT_SR_FLOOR) -> np.ndarray:
    """``(S_r - S_m) / S_r``.  Points with ``|S_r| < floor`` are NaN (invalid)."""
    s_r = np.asarray(s_r, dtype=float)
    s_m = np.asarray(s_m, dtype=float)
    if s_r.shape != s_m.shape:
        raise ValueError("S_r and S_m must be on the same grid")
    out = np.full(s_r.shape, np.nan)
    ok = np.abs(s_r) >= floor
    out[ok] = (s_r[ok] - s_m[ok]) / s_r[ok]
    return out


# --- Fresnel curves -----------------------------------------------------------------


@lru_cache(maxsize=4)
def _fresnel_nodes(n_beta: int = 256, n_gamma: int = 128) -> tuple[np.ndarray, np.ndarray]:
    """Folded quadrature for ``<cos(x sin(2 beta) cos(gamma))>``.

    Gauss-Legendre in cos(beta) and a uniform gamma rule.  The integrand is
    even under beta -> pi - beta and gamma -> 2 pi - gamma, so only half of
    each rule is kept with doubled weights.  Returns ``(f, w)`` with
    ``f = sin(2 beta) cos(gamma)`` and weights summing to 1.
    """
    x, wx = np.polynomial.legendre.leggauss(n_beta)
    keep = x > 0
    x, wx = x[keep], wx[keep]  # both halves carry equal weight
    wx = wx / wx.sum()
    sin2b = 2.0 * x * np.sqrt(1.0 - x * x)
    j = np.arange(n_gamma // 2 + 1)
    wg = np.where((j == 0) | (2 * j == n_gamma), 1.0, 2.0) / n_gamma
    cosg = np.cos(2.0 * math.pi * j / n_gamma)
    f = np.outer(sin2b, cosg).ravel()
    w = np.outer(wx, wg).ravel()
    return f, w


def fresnel_curve(b: float, T) -> np.ndarray:
    """``1 - <cos(w T)>`` over a dense powder for coupling constant ``b`` (rad/s)."""
    T = np.atleast_1d(np.asarray(T, dtype=float))
    f, w = _fresnel_nodes()
    scale = ISING_PREFACTOR * b / (2.0 * math.sqrt(2.0))
    return 1.0 - np.cos(np.multiply.outer(scale * T, f)) @ w


def coupling_for_distance(r_angstrom: float, gammas=(GAMMA_13C, GAMMA_13C)) -> float:
    if math.isinf(r_angstrom):
        return 0.0
    return dipole_coupling_constant(r_angstrom * ANGSTROM, *gammas)


@dataclass(frozen=True)
class FresnelChart:
    distances: np.ndarray  # angstrom
    t_grid: np.ndarray  # seconds
    curves: np.ndarray  # (n_distances, n_t)
    gammas: tuple[float, float]

    def curve(self, r: float) -> np.ndarray:
        i = int(np.argmin(np.abs(self.distances - r)))
        return self.curves[i]


def fresnel_chart(distances: Sequence[float], t_grid, gammas=(GAMMA_13C, GAMMA_13C)) -> FresnelChart:
    d = np.asarray(distances, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distances must be positive")
    t = np.asarray(t_grid, dtype=float)
    curves = np.array([fresnel_curve(coupling_for_distance(r, gammas), t) for r in d]).reshape(d.size, t.size)
    return FresnelChart(d, t, curves, tuple(gammas))


# --- distance fits --------------------------------------------------------------------


class DistanceFit(NamedTuple):
    r: float  # angstrom
    residual: float  # sum of squared deviations at r
    uncertainty: float  # half-width of the region with residual <= 2x minimum
    flag: str


def _parabola_min(x: np.ndarray, y: np.ndarray, i: int) -> tuple[float, float]:
    if i == 0 or i == len(x) - 1:
        return float(x[i]), float(y[i])
    y0, y1, y2 = y[i - 1], y[i], y[i + 1]
    den = y0 - 2.0 * y1 + y2
    if den <= 0:
        return float(x[i]), float(y1)
    h = x[i + 1] - x[i]
    d = 0.5 * (y0 - y2) / den
    return float(x[i] + d * h), float(y1 - 0.25 * (y0 - y2) * d)


def fit_distance(eta_data, t_grid, gammas=(GAMMA_13C, GAMMA_13C),
                 r_grid: np.ndarray | None = None) -> DistanceFit:
    """Least-squares distance from an eta series against the Fresnel curves.

    NaN points (invalid, see :func:`eta`) are ignored.  Raises if fewer than
    three valid points remain.
    """
    y = np.asarray(eta_data, dtype=float)
    t = np.asarray(t_grid, dtype=float)
    if y.shape != t.shape:
        raise ValueError("eta data and time grid differ in length")
    ok = np.isfinite(y)
    if ok.sum() < 3:
        raise ValueError("need at least three valid eta points to fit a distance")
    y, t = y[ok], t[ok]
    grid = np.round(np.arange(1.0, 6.0 + 1e-9, 0.01), 10) if r_grid is None else np.asarray(r_grid, float)
    res = np.array([np.sum((fresnel_curve(coupling_for_distance(r, gammas), t) - y) ** 2) for r in grid])
    i = int(np.argmin(res))
    r, rmin = _parabola_min(grid, res, i)
    rmin = max(rmin, 0.0)
    step = float(grid[1] - grid[0]) if grid.size > 1 else 0.0
    inside = grid[res <= 2.0 * res[i] + 1e-15]
    unc = max(0.5 * float(inside.max() - inside.min()), step)
    if i == grid.size - 1:
        flag = "no detectable coupling"
    elif i == 0:
        flag = "at lower grid bound"
    else:
        flag = "ok"
    return DistanceFit(r, rmin, unc, flag)


def fit_prefactor(eta_data, t_grid, b: float, powder: OrientationSet,
                  bounds=(0.5, 1.5), step: float = 1e-3) -> float:
    """Scale ``k`` such that ``1 - <cos(k w T)>`` best fits ``eta_data``.

    ``w`` are the ideal Ising frequencies of :func:`ising_frequencies`; a
    result of 1 means the prefactor 3/16 is recovered exactly.
    """
    y = np.asarray(eta_data, dtype=float)
    t = np.asarray(t_grid, dtype=float)
    ok = np.isfinite(y)
    y, t = y[ok], t[ok]
    w = ising_frequencies(b, powder)
    ks = np.arange(bounds[0], bounds[1] + 0.5 * step, step)
    phase = np.multiply.outer(t, w)
    res = np.array([np.sum((1.0 - np.cos(k * phase) @ powder.weight - y) ** 2) for k in ks])
    return _parabola_min(ks, res, int(np.argmin(res)))[0]


# --- effective Hamiltonians ---------------------------------------------------------------


@dataclass
class EffectiveHamiltonianReport:
    """Secular average Hamiltonian in the recoupling frame (rad/s).

    ``shift`` maps spin label to the coefficient of its ``I_z``; ``ising``
    and ``planar`` map homonuclear pairs to the coefficients of ``2 I_z S_z``
    and of ``I_x S_x + I_y S_y``; ``hetero`` maps channel/passive pairs to
    the coefficient of ``2 I_z X_z``; ``scalar`` holds J terms unchanged.
    """

    matrix: np.ndarray
    condition: str
    shift: dict = field(default_factory=dict)
    ising: dict = field(default_factory=dict)
    planar: dict = field(default_factory=dict)
    hetero: dict = field(default_factory=dict)
    scalar: dict = field(default_factory=dict)


def _m(c: np.ndarray, m: int) -> complex:
    return c[m + 2]


def effective_hamiltonian(system: SpinSystem, crystallite: EulerAngles, condition: str) -> EffectiveHamiltonianReport:
    """First-order secular Hamiltonian for ``C = wr/4`` (quarter) or ``C = wr/2`` (half).

    Coefficients follow from the Fourier components ``w^(m)`` of each
    interaction and the Ct modulations ``cos^2(Ct)`` (shifts, heteronuclear
    couplings) and ``cos^4(Ct)`` (homonuclear couplings) in the recoupling
    frame.  Planar terms are kept.
    """
    if condition not in CONDITIONS:
        raise ValueError(f"condition must be one of {CONDITIONS}")
    fc = fourier_coefficients(system, crystallite, 1.0)
    o = spin_operators(system.n_spins)
    chan = set(system.channel())
    h = np.zeros((o.dim, o.dim), dtype=complex)
    rep = EffectiveHamiltonianReport(h, condition)
    labels = system.labels
    half = condition == "half"
    for k, c in enumerate(fc.shifts):
        w0 = _m(c, 0).real
        if k in chan:
            coef = 0.5 * (w0 + 0.5 * (_m(c, 1) + _m(c, -1)).real) if half else 0.5 * w0
        else:
            coef = w0
        rep.shift[labels[k]] = float(coef)
        h += coef * o.iz[k]
    for d, c in zip(system.dipolar, fc.dipolar):
        a, b = d.spin_a, d.spin_b
        key = (labels[a], labels[b])
        s1 = (_m(c, 1) + _m(c, -1)).real
        s2 = (_m(c, 2) + _m(c, -2)).real
        zz = 2.0 * o.iz[a] @ o.iz[b]
        if a in chan and b in chan:
            coef = 1.5 * (s1 / 4.0 + s2 / 16.0) if half else 1.5 * s1 / 16.0
            rep.ising[key] = float(coef)
            rep.planar[key] = -float(coef)
            h += coef * (zz - o.ix[a] @ o.ix[b] - o.iy[a] @ o.iy[b])
        elif a in chan or b in chan:
            coef = 0.25 * s1 if half else 0.0
            rep.hetero[key] = float(coef)
            h += coef * zz
    for j in system.scalar:
        a, b = j.spin_a, j.spin_b
        key = (labels[a], labels[b])
        zz = o.iz[a] @ o.iz[b]
        if system.is_homonuclear(a, b):
            term = zz + o.ix[a] @ o.ix[b] + o.iy[a] @ o.iy[b]
            scale = 1.0
        else:
            term = zz
            scale = 0.5 if (a in chan) != (b in chan) else 1.0
        rep.scalar[key] = scale * 2.0 * math.pi * j.j
        h += rep.scalar[key] * term
    rep.matrix = h
    return rep


def recoupling_frame(c_field: float, t, ops, channel: Sequence[int]) -> np.ndarray:
    """``U(t) = exp(-i C t Fx) exp(-i C t Fy)`` on the channel spins; time axis leads."""
    fx, fy, _ = ops.collective(channel)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    ex, vx = np.linalg.eigh(fx)
    ey, vy = np.linalg.eigh(fy)
    ux = np.einsum("ij,tj,kj->tik", vx, np.exp(-1j * c_field * np.multiply.outer(t, ex)), vx.conj())
    uy = np.einsum("ij,tj,kj->tik", vy, np.exp(-1j * c_field * np.multiply.outer(t, ey)), vy.conj())
    return ux @ uy


def average_hamiltonian_numeric(system: SpinSystem, crystallite: EulerAngles, tofu: TofuParams,
                                n_quad: int = 256) -> np.ndarray:
    """Element average of the Fz-secular part of the recoupling-frame Hamiltonian.

    The internal Hamiltonian is transformed by :func:`recoupling_frame`,
    every matrix element between different channel-Fz eigenvalues is
    dropped, and the result is averaged over one element with an
    ``n_quad``-point uniform rule (exact for the trigonometric polynomials
    involved once ``n_quad`` exceeds the highest harmonic of C).
    """
    from .propagator import HamiltonianModel

    model = HamiltonianModel(system)
    fc = fourier_coefficients(system, crystallite, tofu.omega_r)
    t = (np.arange(n_quad) + 0.5) * tofu.element_duration / n_quad
    h = model.internal(fc, t)
    u = recoupling_frame(tofu.c_field, t, model.ops, model.channel)
    ht = np.swapaxes(u.conj(), -1, -2) @ h @ u
    fz = np.real(np.diag(model.ops.collective(model.channel)[2]))
    secular = np.isclose(fz[:, None], fz[None, :])
    return np.where(secular, ht.mean(axis=0), 0.0)


# --- truncation diagnostics ----------------------------------------------------------------


@dataclass(frozen=True)
class TruncationDiagnostics:
    """Margins ``|B +- k| / |w^(m)|`` per channel spin and branch.

    ``flags`` maps each spin label to ``pass``, ``warn`` or ``fail``.
    ``resonances`` lists rf/MAS conditions at which single- or
    double-quantum dipolar terms are recoupled at first order
    (``B = k C + m wr`` or ``2B = k C + m wr``).
    """

    margins: dict
    flags: dict
    resonances: tuple
    warn_below: float
    fail_below: float

    @property
    def status(self) -> str:
        values = set(self.flags.values())
        if self.resonances and "fail" not in values:
            values.add("warn")
        for s in ("fail", "warn"):
            if s in values:
                return s
        return "pass"


def _flag(margin: float, warn_below: float, fail_below: float) -> str:
    if margin < fail_below:
        return "fail"
    if margin < warn_below:
        return "warn"
    return "pass"


def dipolar_resonances(b_field: float, c_field: float, omega_r: float, tol: float = 1e-6) -> tuple:
    out = []
    for q, label in ((1, "B"), (2, "2B")):
        for k in range(0, 5):
            for m in range(-2, 3):
                target = k * c_field + m * omega_r
                if abs(q * b_field - target) <= tol * max(abs(b_field), 1.0):
                    out.append(f"{label} = {k}C {'+' if m >= 0 else '-'} {abs(m)}wr")
    return tuple(out)


def truncation_margins(system: SpinSystem, b_field: float, c_field: float, omega_r: float,
                       warn_below: float = 5.0, fail_below: float = 2.0,
                       n_orientations: int = 200) -> TruncationDiagnostics:
    """Margins of the transverse-term truncation conditions.

    The anisotropic components are orientation dependent; the worst case over
    a golden-spiral sample of ``n_orientations`` crystallites is used.
    """
    pw = generate_orientations("golden-spiral", n_orientations, 1)
    fc = fourier_batch(system, pw.alpha, pw.beta, pw.gamma, omega_r)
    worst = np.abs(fc.shifts).max(axis=0)  # (n_spins, 5)
    branches = {
        0: (b_field - 2 * c_field, b_field + 2 * c_field),
        1: (b_field - (2 * c_field + omega_r), b_field + (2 * c_field + omega_r)),
        2: (b_field - 2 * (c_field + omega_r), b_field + 2 * (c_field + omega_r)),
    }
    names = {0: ("B-2C", "B+2C"), 1: ("B-(2C+wr)", "B+(2C+wr)"), 2: ("B-2(C+wr)", "B+2(C+wr)")}
    margins, flags = {}, {}
    for k in system.channel():
        label = system.spins[k].label
        per = {}
        for m, (lo, hi) in branches.items():
            w = max(worst[k, m + 2], worst[k, -m + 2])
            for name, edge in zip(names[m], (lo, hi)):
                per[name] = math.inf if w < 1e-9 else float(abs(edge) / w)
        margins[label] = per
        flags[label] = _flag(min(per.values()), warn_below, fail_below)
    return TruncationDiagnostics(margins, flags, dipolar_resonances(b_field, c_field, omega_r),
                                 warn_below, fail_below)


def truncation_check(system: SpinSystem, tofu: TofuParams, warn_below: float = 5.0,
                     fail_below: float = 2.0) -> TruncationDiagnostics:
    return truncation_margins(system, tofu.b_field, tofu.c_field, tofu.omega_r, warn_below, fail_below)
