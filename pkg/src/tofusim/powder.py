"""Crystallite orientation sets and powder averages.

Angles are radians internally and degrees in files.  Each scheme produces
``n_ab`` (alpha, beta) pairs, each combined with ``n_gamma`` rotor phases
``gamma_j = 2 pi j / n_gamma``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SCHEMES = ("golden-spiral", "zcw-like", "grid", "file")


@dataclass(frozen=True)
class OrientationSet:
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    weight: np.ndarray
    scheme: str
    n_ab: int
    n_gamma: int

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=float)
        if np.any(w <= 0):
            raise ValueError("orientation weights must be positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("orientation weights must sum to 1")

    def __len__(self) -> int:
        return self.alpha.size

    @property
    def entries(self) -> list[tuple[float, float, float, float]]:
        return list(zip(self.alpha.tolist(), self.beta.tolist(), self.gamma.tolist(), self.weight.tolist()))


def _with_gamma(alpha, beta, w_ab, n_gamma, scheme, n_ab) -> OrientationSet:
    g = 2.0 * math.pi * np.arange(n_gamma) / n_gamma
    a = np.repeat(alpha, n_gamma)
    b = np.repeat(beta, n_gamma)
    gg = np.tile(g, len(alpha))
    w = np.repeat(np.asarray(w_ab, dtype=float), n_gamma)
    w = w / w.sum()
    return OrientationSet(a, b, gg, w, scheme, n_ab, n_gamma)


def _fibonacci_at_least(n: int) -> tuple[int, int]:
    """Smallest Fibonacci number >= n and the one two places below it."""
    f = [1, 1, 2]
    while f[-1] < n:
        f.append(f[-1] + f[-2])
    return f[-1], f[-3]


def generate_orientations(scheme: str, n_ab: int, n_gamma: int, path=None) -> OrientationSet:
    """Deterministic crystallite set.

    * ``golden-spiral``: ``n_ab`` points, equal weights.
    * ``zcw-like``: Zaremba-Conroy-Wolfsberg full-sphere set on the smallest
      Fibonacci number >= ``n_ab``.
    * ``grid``: product grid of ``n_ab`` beta values (midpoint rule,
      sin(beta) weights) and ``2 n_ab`` alpha values; ``n_ab = 1`` is the
      single orientation (0, 0).
    * ``file``: ``alpha beta weight`` or ``alpha beta gamma weight`` lines in
      degrees (see :func:`read_orientation_file`).
    """
    if scheme == "file":
        if path is None:
            raise ValueError("file scheme needs a path")
        return read_orientation_file(path, n_gamma)
    if n_ab < 1 or n_gamma < 1:
        raise ValueError("n_ab and n_gamma must be >= 1")
    if scheme == "golden-spiral":
        i = np.arange(n_ab)
        beta = np.arccos(1.0 - 2.0 * (i + 0.5) / n_ab)
        alpha = np.mod(i * math.pi * (3.0 - math.sqrt(5.0)), 2.0 * math.pi)
        return _with_gamma(alpha, beta, np.ones(n_ab), n_gamma, scheme, n_ab)
    if scheme == "zcw-like":
        m, g = _fibonacci_at_least(n_ab)
        j = np.arange(m)
        beta = np.arccos(2.0 * (j + 0.5) / m - 1.0)
        alpha = 2.0 * math.pi * np.mod(j * g / m, 1.0)
        return _with_gamma(alpha, beta, np.ones(m), n_gamma, scheme, m)
    if scheme == "grid":
        if n_ab == 1:
            return _with_gamma(np.zeros(1), np.zeros(1), np.ones(1), n_gamma, scheme, 1)
        b = (np.arange(n_ab) + 0.5) * math.pi / n_ab
        a = 2.0 * math.pi * np.arange(2 * n_ab) / (2 * n_ab)
        aa, bb = np.meshgrid(a, b)
        w = np.sin(bb)
        return _with_gamma(aa.ravel(), bb.ravel(), w.ravel(), n_gamma, scheme, n_ab)
    raise ValueError(f"unknown powder scheme {scheme!r}; choose from {SCHEMES}")


def single_crystal(alpha: float, beta: float, gamma: float) -> OrientationSet:
    return OrientationSet(
        np.array([alpha]), np.array([beta]), np.array([gamma]), np.ones(1), "single", 1, 1
    )


def parse_powder_spec(spec: str) -> OrientationSet:
    """``scheme:n_ab:n_gamma``, ``file:PATH[:n_gamma]`` or ``single:ALPHA:BETA:GAMMA`` (degrees)."""
    parts = spec.split(":")
    if parts[0] == "single":
        if len(parts) != 4:
            raise ValueError(f"single-crystal spec must be single:alpha:beta:gamma, got {spec!r}")
        return single_crystal(*(math.radians(float(x)) for x in parts[1:]))
    if parts[0] == "file":
        if len(parts) < 2:
            raise ValueError("file powder spec needs a path")
        n_gamma = int(parts[2]) if len(parts) > 2 else 1
        return read_orientation_file(parts[1], n_gamma)
    if len(parts) != 3:
        raise ValueError(f"powder spec must be scheme:n_ab:n_gamma, got {spec!r}")
    return generate_orientations(parts[0], int(parts[1]), int(parts[2]))


def read_orientation_file(path, n_gamma: int = 1) -> OrientationSet:
    """Read whitespace-separated orientations in degrees.

    Three columns ``alpha beta weight`` are combined with ``n_gamma`` uniform
    gamma angles; four columns ``alpha beta gamma weight`` are used as is.
    Lines starting with ``#`` are comments.
    """
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            vals = [float(x) for x in line.split()]
        except ValueError:
            raise ValueError(f"{path}:{lineno}: non-numeric orientation entry") from None
        if len(vals) not in (3, 4):
            raise ValueError(f"{path}:{lineno}: expected 3 or 4 columns, got {len(vals)}")
        rows.append(vals)
    if not rows:
        raise ValueError(f"{path}: no orientations")
    ncol = {len(r) for r in rows}
    if len(ncol) != 1:
        raise ValueError(f"{path}: mixed column counts")
    data = np.array(rows)
    if data[:, -1].min() <= 0:
        raise ValueError(f"{path}: weights must be positive")
    if data.shape[1] == 3:
        return _with_gamma(np.deg2rad(data[:, 0]), np.deg2rad(data[:, 1]), data[:, 2], n_gamma, "file", len(data))
    w = data[:, 3] / data[:, 3].sum()
    return OrientationSet(*np.deg2rad(data[:, :3]).T, w, "file", len(data), 1)


def write_orientation_file(s: OrientationSet, path) -> None:
    lines = ["# alpha_deg beta_deg gamma_deg weight"]
    for a, b, g, w in s.entries:
        lines.append(f"{math.degrees(a):.12g} {math.degrees(b):.12g} {math.degrees(g):.12g} {w:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")


def powder_average(values, s: OrientationSet) -> float:
    """Weighted sum in a fixed (pairwise) order."""
    v = np.asarray(values, dtype=float)
    if v.shape[-1] != len(s):
        raise ValueError(f"got {v.shape[-1]} values for {len(s)} crystallites")
    return float(np.sum(v * s.weight, axis=-1))
