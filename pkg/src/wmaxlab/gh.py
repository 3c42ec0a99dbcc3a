"""Gibbons-Hawking model potentials and the wall-crossing neck profile.

Only the scalar profiles are modelled: h = A + q / r on R^3 with coordinates
(mu, Re zeta, Im zeta), and the leading neck coefficients near a wall.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Family",
    "GHParams",
    "NeckParams",
    "PoleError",
    "gh_potential",
    "gh_harmonicity_check",
    "HarmonicityCheck",
    "zero_crossing_radius",
    "neck_radius",
    "neck_leading_terms",
    "gh_profile",
    "POLE_GUARD",
]

POLE_GUARD = 10.0


class PoleError(ValueError):
    """Evaluation at (or too close to) a pole."""


class Family(str, enum.Enum):
    A = "A"
    D = "D"

    @classmethod
    def parse(cls, text) -> "Family":
        if isinstance(text, Family):
            return text
        key = str(text).strip().upper().split("_")[0]
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown family {text!r}; expected A_k or D_m") from None


@dataclass(frozen=True)
class GHParams:
    """``A >= 0`` is the asymptotic constant (A = 0 isolates the pole term)."""

    family: Family
    A: float
    index: int

    def __post_init__(self):
        object.__setattr__(self, "family", Family.parse(self.family))
        if not self.A >= 0:
            raise ValueError("A must be non-negative")
        if int(self.index) != self.index:
            raise ValueError("index must be an integer")
        lo = -1 if self.family is Family.A else 0
        if self.index < lo:
            raise ValueError(f"{self.family.value}-family index must be >= {lo}")

    @property
    def q(self) -> float:
        if self.family is Family.A:
            return (self.index + 1) / 2
        return (2 * self.index - 4) / 2


def _radius(mu, zeta, center=(0.0, 0j)):
    mu = np.asarray(mu, dtype=float)
    zeta = np.asarray(zeta, dtype=complex)
    return np.sqrt((mu - center[0]) ** 2 + np.abs(zeta - center[1]) ** 2)


def gh_potential(params: GHParams, mu, zeta, centers=((0.0, 0j),)):
    """h = A + sum_c q / |x - c|; a scalar for scalar input."""
    out = np.full(np.broadcast(np.asarray(mu), np.asarray(zeta)).shape, float(params.A))
    for c in centers:
        r = _radius(mu, zeta, c)
        if np.any(r == 0):
            raise PoleError("gh_potential evaluated at a pole (r = 0)")
        out = out + params.q / r
    return float(out) if out.ndim == 0 else out


def zero_crossing_radius(params: GHParams) -> float | None:
    """Radius where A + q/r = 0 for a negative pole coefficient (D_0, D_1), else None."""
    if params.q >= 0:
        return None
    if params.A == 0:
        return np.inf
    return -params.q / params.A


@dataclass
class HarmonicityCheck:
    max_abs: float
    bound: float
    nodes: int
    spacing: float


def gh_harmonicity_check(params: GHParams, s: float, box, centers=((0.0, 0j),)) -> HarmonicityCheck:
    """Max |7-point Laplacian of h| over a box in (mu, Re zeta, Im zeta).

    ``box`` is ``((lo_mu, lo_x, lo_y), (hi_mu, hi_x, hi_y))``; node spacing is
    ``s`` (each side must be a whole number of steps). Every stencil must stay
    at least POLE_GUARD * s away from every pole. The returned bound is the
    leading truncation estimate 6 s^2 sum |q| / r_min^5.
    """
    if not s > 0:
        raise ValueError("spacing must be positive")
    lo, hi = (np.asarray(b, dtype=float) for b in box)
    if lo.shape != (3,) or hi.shape != (3,) or np.any(hi < lo):
        raise ValueError("box must be ((lo_mu, lo_x, lo_y), (hi_mu, hi_x, hi_y)) with hi >= lo")
    counts = (hi - lo) / s
    if not np.allclose(counts, np.round(counts), rtol=0, atol=1e-9):
        raise ValueError("box sides must be whole multiples of the spacing")
    axes = [lo[k] + s * np.arange(int(round(counts[k])) + 1) for k in range(3)]
    bound = 0.0
    for c in centers:
        cvec = np.array([c[0], complex(c[1]).real, complex(c[1]).imag])
        # distance from the pole to the box grown by one stencil step
        gap = np.maximum(np.maximum(lo - s - cvec, cvec - hi - s), 0.0)
        dist = float(np.linalg.norm(gap))
        if dist < POLE_GUARD * s:
            raise PoleError(f"box comes within {dist:.3g} of a pole; need >= {POLE_GUARD * s:.3g}")
        bound += 6 * s ** 2 * abs(params.q) / dist ** 5
    M, X, Y = np.meshgrid(*axes, indexing="ij")

    def h(m, x, y):
        return gh_potential(params, m, x + 1j * y, centers)

    lap = -6 * h(M, X, Y)
    for dm, dx, dy in ((1, 0, 0), (0, 1, 0), (0, 0, 1)):
        lap = lap + h(M + dm * s, X + dx * s, Y + dy * s) + h(M - dm * s, X - dx * s, Y - dy * s)
    lap = lap / s ** 2
    return HarmonicityCheck(float(np.abs(lap).max()), bound, int(lap.size), float(s))


@dataclass(frozen=True)
class NeckParams:
    epsilon: float
    h0: float
    multiplicity: int = 1

    def __post_init__(self):
        if not self.epsilon > 0 or not self.h0 > 0:
            raise ValueError("epsilon and h0 must be positive")
        if int(self.multiplicity) != self.multiplicity:
            raise ValueError("multiplicity must be an integer")


def neck_radius(params: NeckParams, dist, mu):
    """sqrt(epsilon / h0 * dist^2 + mu^2)."""
    r = np.sqrt(params.epsilon / params.h0 * np.square(dist) + np.square(mu))
    return float(r) if np.ndim(r) == 0 else r


def neck_leading_terms(params: NeckParams, r):
    """(psi coefficient, hbar) = (multiplicity / 4r, multiplicity / 2r)."""
    r_arr = np.asarray(r, dtype=float)
    if np.any(~(r_arr > 0)):
        raise PoleError("neck profile needs r > 0")
    psi = params.multiplicity / (4 * r_arr)
    hbar = params.multiplicity / (2 * r_arr)
    if r_arr.ndim == 0:
        return float(psi), float(hbar)
    return psi, hbar


def gh_profile(params: GHParams, neck: NeckParams, radii) -> list[tuple[float, float, float, float]]:
    """Rows (r, h, psi coefficient, hbar) along the mu axis."""
    rows = []
    for r in np.asarray(radii, dtype=float):
        psi, hbar = neck_leading_terms(neck, r)
        rows.append((float(r), gh_potential(params, r, 0j), psi, hbar))
    return rows
