"""Spin systems, rank-2 tensor rotation and MAS Fourier coefficients.

Frequencies are angular (rad/s) internally; configuration files use Hz,
Angstrom and degrees.

Rotation conventions
--------------------
Euler angles are active ZYZ, ``R(a, b, g) = Rz(a) @ Ry(b) @ Rz(g)``.

* ``Spin.csa_euler`` / ``DipolarCoupling.pc_euler`` give the orientation of
  the principal axis frame inside the crystal frame, so
  ``A_crystal = R A_pas R.T``.
* A crystallite ``(alpha, beta, gamma)`` gives the orientation of the rotor
  frame inside the crystal frame, so ``A_rotor = R.T A_crystal R``.  With
  this choice ``gamma`` is the rotor phase and ``beta`` the polar angle of a
  crystal-z tensor relative to the spinning axis.

The static field direction in the rotor frame is
``n(t) = (-sin(tm) cos(wr t), -sin(tm) sin(wr t), cos(tm))``, which gives

    w(t) = sum_m w^(m) exp(i m wr t),   w^(m) = sqrt(2/3) d2_m0(tm) T_{-m}

where ``T_m`` are spherical components of the rotor-frame tensor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

MU0_OVER_4PI = 1.0e-7  # T^2 m^3 / J, exact by convention
HBAR = 1.054571817e-34  # J s (CODATA 2018)
ANGSTROM = 1.0e-10

#: gyromagnetic ratios in rad s^-1 T^-1
GYROMAGNETIC_RATIOS = {
    "1H": 267.52218744e6,
    "2H": 41.065e6,
    "13C": 67.2828e6,
    "15N": -27.116e6,
    "31P": 108.291e6,
}

MAGIC_ANGLE = math.acos(1.0 / math.sqrt(3.0))

# reduced Wigner elements d2_{m0} at the magic angle, m = -2..2
_D2_M0_MAGIC = np.array(
    [1.0 / math.sqrt(6.0), 1.0 / math.sqrt(3.0), 0.0, -1.0 / math.sqrt(3.0), 1.0 / math.sqrt(6.0)]
)
M_VALUES = np.arange(-2, 3)
MAX_SPINS = 6


class ConfigError(ValueError):
    """Raised for malformed or inconsistent spin-system configuration."""


@dataclass(frozen=True)
class EulerAngles:
    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0

    @classmethod
    def from_degrees(cls, alpha: float, beta: float, gamma: float) -> "EulerAngles":
        return cls(*np.deg2rad([alpha, beta, gamma]))

    def degrees(self) -> tuple[float, float, float]:
        return tuple(float(x) for x in np.rad2deg([self.alpha, self.beta, self.gamma]))

    def matrix(self) -> np.ndarray:
        return rotation_matrix(self.alpha, self.beta, self.gamma)


@dataclass(frozen=True)
class Spin:
    label: str
    gyromagnetic_ratio: float = GYROMAGNETIC_RATIOS["13C"]
    iso_shift: float = 0.0
    csa_aniso: float = 0.0
    csa_asymmetry: float = 0.0
    csa_euler: EulerAngles = field(default_factory=EulerAngles)

    def __post_init__(self):
        if not 0.0 <= self.csa_asymmetry <= 1.0:
            raise ConfigError(f"spin {self.label!r}: CSA asymmetry must lie in [0, 1]")
        if self.gyromagnetic_ratio == 0.0:
            raise ConfigError(f"spin {self.label!r}: gyromagnetic ratio must be non-zero")


@dataclass(frozen=True)
class DipolarCoupling:
    spin_a: int
    spin_b: int
    b_is: float
    pc_euler: EulerAngles = field(default_factory=EulerAngles)

    def __post_init__(self):
        if self.spin_a == self.spin_b:
            raise ConfigError("dipolar coupling needs two distinct spins")


@dataclass(frozen=True)
class ScalarCoupling:
    spin_a: int
    spin_b: int
    j: float  # Hz

    def __post_init__(self):
        if self.spin_a == self.spin_b:
            raise ConfigError("scalar coupling needs two distinct spins")


@dataclass(frozen=True)
class SpinSystem:
    spins: tuple[Spin, ...]
    dipolar: tuple[DipolarCoupling, ...] = ()
    scalar: tuple[ScalarCoupling, ...] = ()
    s_spin: int = 0

    def __post_init__(self):
        object.__setattr__(self, "spins", tuple(self.spins))
        object.__setattr__(self, "dipolar", tuple(self.dipolar))
        object.__setattr__(self, "scalar", tuple(self.scalar))
        n = len(self.spins)
        if n == 0:
            raise ConfigError("spin system has no spins")
        if n > MAX_SPINS:
            raise ConfigError(f"at most {MAX_SPINS} spins are supported, got {n}")
        if not 0 <= self.s_spin < n:
            raise ConfigError(f"s_spin index {self.s_spin} out of range")
        seen = set()
        for kind, couplings in (("dipolar", self.dipolar), ("scalar", self.scalar)):
            for c in couplings:
                for idx in (c.spin_a, c.spin_b):
                    if not 0 <= idx < n:
                        raise ConfigError(f"{kind} coupling references spin index {idx}")
                key = (kind, frozenset((c.spin_a, c.spin_b)))
                if key in seen:
                    raise ConfigError(
                        f"duplicate {kind} coupling between "
                        f"{self.spins[c.spin_a].label} and {self.spins[c.spin_b].label}"
                    )
                seen.add(key)
        if self.dipolar:
            for c in self.dipolar:
                ga = self.spins[c.spin_a].gyromagnetic_ratio
                gb = self.spins[c.spin_b].gyromagnetic_ratio
                if ga * gb > 0 and c.b_is > 0:
                    raise ConfigError("dipolar constant must be <= 0 for like-sign gyromagnetic ratios")

    @property
    def n_spins(self) -> int:
        return len(self.spins)

    @property
    def labels(self) -> list[str]:
        return [s.label for s in self.spins]

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise ConfigError(f"unknown spin label {label!r}") from None

    def channel(self) -> list[int]:
        """Spins sharing the S spin's isotope; these see the rf."""
        g = self.spins[self.s_spin].gyromagnetic_ratio
        return [k for k, s in enumerate(self.spins) if s.gyromagnetic_ratio == g]

    def observed(self) -> list[int]:
        return [k for k in self.channel() if k != self.s_spin]

    def is_homonuclear(self, a: int, b: int) -> bool:
        return self.spins[a].gyromagnetic_ratio == self.spins[b].gyromagnetic_ratio

    def without(self, labels: Sequence[str]) -> "SpinSystem":
        """Copy with the named spins (and their couplings) removed."""
        drop = {self.index(lbl) for lbl in labels}
        keep = [k for k in range(self.n_spins) if k not in drop]
        if self.s_spin in drop:
            raise ConfigError("cannot remove the S spin")
        remap = {old: new for new, old in enumerate(keep)}
        dip = tuple(
            DipolarCoupling(remap[c.spin_a], remap[c.spin_b], c.b_is, c.pc_euler)
            for c in self.dipolar
            if c.spin_a in remap and c.spin_b in remap
        )
        sca = tuple(
            ScalarCoupling(remap[c.spin_a], remap[c.spin_b], c.j)
            for c in self.scalar
            if c.spin_a in remap and c.spin_b in remap
        )
        return SpinSystem(tuple(self.spins[k] for k in keep), dip, sca, remap[self.s_spin])


def dipole_coupling_constant(r: float, gamma_a: float, gamma_b: float) -> float:
    """Dipolar coupling constant ``-(mu0/4pi) hbar gamma_a gamma_b / r^3`` in rad/s.

    ``r`` is in meters.
    """
    if not r > 0:
        raise ValueError(f"internuclear distance must be positive, got {r}")
    return -MU0_OVER_4PI * HBAR * gamma_a * gamma_b / r**3


def distance_from_coupling(b_is: float, gamma_a: float, gamma_b: float) -> float:
    """Inverse of :func:`dipole_coupling_constant`, meters."""
    return (MU0_OVER_4PI * HBAR * abs(gamma_a * gamma_b) / abs(b_is)) ** (1.0 / 3.0)


def dipolar_fourier_factors(b_is: float, beta: float) -> tuple[float, float]:
    """The first- and second-harmonic dipolar factors ``(c1, c2)``.

    ``c1 = b sin(2 beta) / (2 sqrt 2)``, ``c2 = -b sin^2(beta) / 4``.
    """
    c1 = b_is * math.sin(2.0 * beta) / (2.0 * math.sqrt(2.0))
    c2 = -0.25 * b_is * math.sin(beta) ** 2
    return c1, c2


def rotation_matrix(alpha, beta, gamma) -> np.ndarray:
    """Active ZYZ rotation matrix; broadcasts over array arguments."""
    a, b, g = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (alpha, beta, gamma)))
    ca, sa, cb, sb, cg, sg = np.cos(a), np.sin(a), np.cos(b), np.sin(b), np.cos(g), np.sin(g)
    r = np.empty(a.shape + (3, 3))
    r[..., 0, 0] = ca * cb * cg - sa * sg
    r[..., 0, 1] = -ca * cb * sg - sa * cg
    r[..., 0, 2] = ca * sb
    r[..., 1, 0] = sa * cb * cg + ca * sg
    r[..., 1, 1] = -sa * cb * sg + ca * cg
    r[..., 1, 2] = sa * sb
    r[..., 2, 0] = -sb * cg
    r[..., 2, 1] = sb * sg
    r[..., 2, 2] = cb
    return r


def wigner_d2(beta) -> np.ndarray:
    """Reduced Wigner matrix d^2_{m m'}(beta), indices m, m' = -2..2."""
    b = np.asarray(beta, dtype=float)
    ch, sh = np.cos(b / 2.0), np.sin(b / 2.0)
    f = math.factorial
    j = 2
    d = np.zeros(b.shape + (5, 5))
    for i, mp in enumerate(M_VALUES):
        for k, m in enumerate(M_VALUES):
            mp, m = int(mp), int(m)
            norm = math.sqrt(f(j + mp) * f(j - mp) * f(j + m) * f(j - m))
            for s in range(max(0, m - mp), min(j + m, j - mp) + 1):
                coef = (-1) ** (mp - m + s) * norm / (f(j + m - s) * f(s) * f(mp - m + s) * f(j - mp - s))
                d[..., i, k] += coef * ch ** (2 * j + m - mp - 2 * s) * sh ** (mp - m + 2 * s)
    return d


def wigner_D2(alpha, beta, gamma) -> np.ndarray:
    """Wigner matrix D^2_{m m'} = exp(-i m alpha) d^2_{m m'}(beta) exp(-i m' gamma)."""
    d = wigner_d2(beta)
    a = np.asarray(alpha, dtype=float)[..., None, None]
    g = np.asarray(gamma, dtype=float)[..., None, None]
    m = M_VALUES.astype(float)
    return np.exp(-1j * m[:, None] * a) * d * np.exp(-1j * m[None, :] * g)


def pas_spherical(aniso: float, asymmetry: float = 0.0) -> np.ndarray:
    """Spherical components T_{-2..2} of a traceless PAS tensor.

    The PAS tensor is ``diag(-aniso(1+eta)/2, -aniso(1-eta)/2, aniso)``.
    """
    t = np.zeros(5, dtype=complex)
    t[2] = math.sqrt(1.5) * aniso
    t[0] = t[4] = -0.5 * asymmetry * aniso
    return t


def rotate_spherical(t: np.ndarray, alpha, beta, gamma) -> np.ndarray:
    """Spherical components after the active rotation R(alpha, beta, gamma).

    With the component definition of :func:`cartesian_to_spherical` the
    components transform with the complex conjugate of D^2.
    """
    return np.einsum("...mk,...k->...m", wigner_D2(alpha, beta, gamma).conj(), t)


def cartesian_to_spherical(a: np.ndarray) -> np.ndarray:
    """Rank-2 spherical components T_{-2..2} of a symmetric traceless 3x3 tensor."""
    a = np.asarray(a)
    t = np.empty(a.shape[:-2] + (5,), dtype=complex)
    t[..., 4] = 0.5 * (a[..., 0, 0] - a[..., 1, 1] + 2j * a[..., 0, 1])
    t[..., 3] = -(a[..., 0, 2] + 1j * a[..., 1, 2])
    t[..., 2] = math.sqrt(1.5) * a[..., 2, 2]
    t[..., 1] = a[..., 0, 2] - 1j * a[..., 1, 2]
    t[..., 0] = 0.5 * (a[..., 0, 0] - a[..., 1, 1] - 2j * a[..., 0, 1])
    return t


@dataclass(frozen=True)
class FourierCoeffs:
    """MAS Fourier coefficients, columns ordered m = -2..2.

    Arrays carry a leading crystallite axis when built for several
    orientations at once: ``shifts`` is (..., n_spins, 5) and ``dipolar``
    (..., n_dipolar, 5).
    """

    shifts: np.ndarray
    dipolar: np.ndarray
    omega_r: float

    def _eval(self, coeffs: np.ndarray, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        phase = np.exp(1j * self.omega_r * np.multiply.outer(t, M_VALUES))
        if t.ndim == 0:
            return (coeffs @ phase).real
        return np.einsum("...k,tk->t...", coeffs, phase.reshape(-1, 5)).real.reshape(t.shape + coeffs.shape[:-1])

    def shift_at(self, t) -> np.ndarray:
        """Instantaneous shift frequencies (rad/s); a time axis leads for array ``t``."""
        return self._eval(self.shifts, t)

    def dipolar_at(self, t) -> np.ndarray:
        return self._eval(self.dipolar, t)


def _shift_tensors(system: SpinSystem) -> tuple[np.ndarray, np.ndarray]:
    iso = np.array([s.iso_shift for s in system.spins], dtype=float)
    t_crystal = np.array(
        [
            rotate_spherical(pas_spherical(s.csa_aniso, s.csa_asymmetry), *_angles(s.csa_euler))
            for s in system.spins
        ]
    ).reshape(len(system.spins), 5)
    return iso, t_crystal


def _dipolar_tensors(system: SpinSystem) -> np.ndarray:
    return np.array(
        [rotate_spherical(pas_spherical(c.b_is), *_angles(c.pc_euler)) for c in system.dipolar],
        dtype=complex,
    ).reshape(len(system.dipolar), 5)


def _angles(e: EulerAngles) -> tuple[float, float, float]:
    return e.alpha, e.beta, e.gamma


def _to_rotor(t_crystal: np.ndarray, alpha, beta, gamma) -> np.ndarray:
    """Crystal-frame components -> rotor-frame MAS coefficients w^(m).

    ``alpha, beta, gamma`` are 1-D arrays of crystallite angles; returns
    (n_cryst, n_terms, 5).
    """
    # A_rotor = R^T A R is the active rotation by R^-1 = R(-gamma, -beta, -alpha)
    D = wigner_D2(-np.asarray(gamma), -np.asarray(beta), -np.asarray(alpha)).conj()
    t_rotor = np.einsum("cmk,nk->cnm", D, t_crystal)
    # w^(m) = sqrt(2/3) d2_m0(theta_m) T_{-m}
    return math.sqrt(2.0 / 3.0) * _D2_M0_MAGIC * t_rotor[..., ::-1]


def fourier_batch(system: SpinSystem, alpha, beta, gamma, omega_r: float) -> FourierCoeffs:
    """Fourier coefficients for many crystallites (leading axis)."""
    alpha, beta, gamma = (np.atleast_1d(np.asarray(x, dtype=float)) for x in (alpha, beta, gamma))
    iso, t_shift = _shift_tensors(system)
    shifts = _to_rotor(t_shift, alpha, beta, gamma)
    shifts[..., 2] = iso  # anisotropic m = 0 part vanishes exactly at the magic angle
    if system.dipolar:
        dip = _to_rotor(_dipolar_tensors(system), alpha, beta, gamma)
        dip[..., 2] = 0.0
    else:
        dip = np.zeros((alpha.size, 0, 5), dtype=complex)
    return FourierCoeffs(shifts, dip, omega_r)


def fourier_coefficients(system: SpinSystem, crystallite: EulerAngles, omega_r: float) -> FourierCoeffs:
    """Fourier coefficients w^(m) of every shift and dipolar frequency for one crystallite."""
    fb = fourier_batch(system, crystallite.alpha, crystallite.beta, crystallite.gamma, omega_r)
    return FourierCoeffs(fb.shifts[0], fb.dipolar[0], omega_r)


# --- configuration -------------------------------------------------------------


def _euler_deg(value: Any, where: str) -> EulerAngles:
    if value is None:
        return EulerAngles()
    try:
        a, b, g = (float(x) for x in value)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: euler angles must be three numbers in degrees") from None
    return EulerAngles.from_degrees(a, b, g)


def _gamma_of(entry: Mapping[str, Any], where: str) -> float:
    if "gamma" in entry:
        return float(entry["gamma"])
    iso = entry.get("isotope", "13C")
    if iso not in GYROMAGNETIC_RATIOS:
        raise ConfigError(f"{where}: unknown isotope {iso!r}")
    return GYROMAGNETIC_RATIOS[iso]


def build_spin_system(config: Mapping[str, Any] | str | Path) -> SpinSystem:
    """Build a validated :class:`SpinSystem` from a config mapping or TOML file/text.

    Accepts either the full run configuration (spin tables at top level) or
    a mapping containing ``spin``, ``dipolar``, ``scalar`` and ``s_spin``.
    Shifts, CSA and couplings are in Hz, distances in Angstrom, angles in
    degrees.
    """
    if not isinstance(config, Mapping):
        config = load_config(config)
    spins_cfg = config.get("spin") or []
    if not spins_cfg:
        raise ConfigError("config defines no spins")
    spins = []
    for i, entry in enumerate(spins_cfg):
        where = f"spin[{i}]"
        if "label" not in entry:
            raise ConfigError(f"{where}: missing label")
        spins.append(
            Spin(
                label=str(entry["label"]),
                gyromagnetic_ratio=_gamma_of(entry, where),
                iso_shift=2.0 * math.pi * float(entry.get("shift_hz", 0.0)),
                csa_aniso=2.0 * math.pi * float(entry.get("csa_hz", 0.0)),
                csa_asymmetry=float(entry.get("csa_eta", 0.0)),
                csa_euler=_euler_deg(entry.get("csa_euler_deg"), where),
            )
        )
    labels = [s.label for s in spins]
    if len(set(labels)) != len(labels):
        raise ConfigError("duplicate spin labels")
    if len(spins) > MAX_SPINS:
        raise ConfigError(f"at most {MAX_SPINS} spins are supported, got {len(spins)}")

    def idx(label, where):
        if label not in labels:
            raise ConfigError(f"{where}: unknown spin label {label!r}")
        return labels.index(label)

    def pair(entry, where):
        p = entry.get("pair")
        if not isinstance(p, (list, tuple)) or len(p) != 2:
            raise ConfigError(f"{where}: 'pair' must list two spin labels")
        return idx(p[0], where), idx(p[1], where)

    dipolar = []
    for i, entry in enumerate(config.get("dipolar") or []):
        where = f"dipolar[{i}]"
        a, b = pair(entry, where)
        if "b_hz" in entry:
            b_is = 2.0 * math.pi * float(entry["b_hz"])
        elif "distance_a" in entry:
            b_is = dipole_coupling_constant(
                float(entry["distance_a"]) * ANGSTROM,
                spins[a].gyromagnetic_ratio,
                spins[b].gyromagnetic_ratio,
            )
        else:
            raise ConfigError(f"{where}: give b_hz or distance_a")
        dipolar.append(DipolarCoupling(a, b, b_is, _euler_deg(entry.get("euler_deg"), where)))
    scalar = []
    for i, entry in enumerate(config.get("scalar") or []):
        where = f"scalar[{i}]"
        a, b = pair(entry, where)
        scalar.append(ScalarCoupling(a, b, float(entry["j_hz"])))
    s_label = config.get("s_spin", labels[0])
    return SpinSystem(tuple(spins), tuple(dipolar), tuple(scalar), idx(s_label, "s_spin"))


def load_config(source: str | Path) -> dict:
    """Parse TOML from a path or from literal text."""
    import tomli

    path = Path(source) if not isinstance(source, str) or "\n" not in source else None
    try:
        if path is not None and path.exists():
            return tomli.loads(path.read_text())
        if path is not None and isinstance(source, Path):
            raise ConfigError(f"config file not found: {source}")
        return tomli.loads(str(source))
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"config does not parse: {exc}") from None
