"""Pointwise algebra of a section jet.

A jet is the value H(y) of a section together with its first (and optionally
second) partial derivatives, all as coefficient vectors in one
:class:`~wmaxlab.lattice.BilinearSpace`. Everything here works on a single
point; ``pairing_gram``, ``weight_h`` and ``normal_project`` also broadcast
over leading grid axes.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .lattice import BilinearSpace

__all__ = [
    "Status",
    "PointJet",
    "PointData",
    "fundamental_data",
    "positivity_check",
    "theta_classes",
    "normal_project",
    "spin7_weight",
    "weight_h",
    "pairing_gram",
    "is_positive_definite",
    "TOL_PD",
]

TOL_PD = 1e-12
TOL_POLARIZED = 1e-9


class Status(str, enum.Enum):
    OK = "ok"
    H_NONPOSITIVE = "h_nonpositive"
    METRIC_DEGENERATE = "metric_degenerate"


@dataclass
class PointJet:
    value: np.ndarray
    grads: np.ndarray                 # (d, rank)
    hess: np.ndarray | None = None    # (d, d, rank)

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=float)
        self.grads = np.atleast_2d(np.asarray(self.grads, dtype=float))
        if self.hess is not None:
            self.hess = np.asarray(self.hess, dtype=float)
            if not np.allclose(self.hess, np.swapaxes(self.hess, 0, 1), rtol=0, atol=1e-12 * (1 + np.abs(self.hess).max())):
                raise ValueError("jet Hessian is not symmetric")

    @property
    def dim(self) -> int:
        return self.grads.shape[0]


@dataclass
class PointData:
    h: float
    gt: np.ndarray
    g: np.ndarray
    det_gt: float
    status: Status

    @property
    def ok(self) -> bool:
        return self.status is Status.OK


def _gram_f(space: BilinearSpace) -> np.ndarray:
    return space.gram.astype(float)


def pairing_gram(space: BilinearSpace, grads: np.ndarray) -> np.ndarray:
    """Matrix of pairings grads[..., i, :] . grads[..., j, :]."""
    G = _gram_f(space)
    return np.einsum("...ia,ab,...jb->...ij", grads, G, grads)


def weight_h(space: BilinearSpace, flux, value, h0: float = 1.0):
    """h = 2 flux.H, or the constant ``h0`` when the flux vanishes."""
    flux = np.asarray(flux, dtype=float)
    value = np.asarray(value, dtype=float)
    if not np.any(flux):
        return np.full(value.shape[:-1], float(h0)) if value.ndim > 1 else float(h0)
    return 2.0 * np.einsum("...a,ab,b->...", value, _gram_f(space), flux)


def is_positive_definite(gt: np.ndarray, tol: float = TOL_PD) -> np.ndarray:
    """Sylvester test; the k-th leading minor must exceed tol * scale**k."""
    gt = np.asarray(gt, dtype=float)
    d = gt.shape[-1]
    scale = np.abs(gt).max(axis=(-2, -1))
    ok = scale > 0
    for k in range(1, d + 1):
        minor = np.linalg.det(gt[..., :k, :k])
        ok = ok & (minor > tol * scale**k)
    return ok


def fundamental_data(space: BilinearSpace, flux, jet: PointJet, h0: float = 1.0) -> PointData:
    """h, the induced metric and its rescaling g = h^(-1/2) gt, with a status flag.

    Failures are reported through ``status`` rather than raised so that a line
    search can probe trial points freely.
    """
    h0 = getattr(flux, "h0", h0)
    flux = np.asarray(getattr(flux, "analytic", flux), dtype=float)
    h = float(weight_h(space, flux, jet.value, h0))
    gt = pairing_gram(space, jet.grads)
    det = float(np.linalg.det(gt))
    if h <= 0:
        return PointData(h, gt, np.full_like(gt, np.nan), det, Status.H_NONPOSITIVE)
    g = gt / np.sqrt(h)
    status = Status.OK if is_positive_definite(gt) else Status.METRIC_DEGENERATE
    return PointData(h, gt, g, det, status)


def positivity_check(space: BilinearSpace, polarization, jet: PointJet, flux=None, h0: float = 1.0) -> bool:
    """True iff the jet is polarized (H.w = 0), has h > 0 and a Riemannian induced metric."""
    pol = np.asarray(polarization, dtype=float)
    G = _gram_f(space)
    pairing = jet.value @ G @ pol
    scale = np.linalg.norm(jet.value) * np.linalg.norm(pol)
    if abs(pairing) > TOL_POLARIZED * max(scale, 1.0):
        return False
    if flux is None:
        flux = np.zeros(space.rank)
    return fundamental_data(space, flux, jet, h0).ok


def theta_classes(space: BilinearSpace, jet: PointJet, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Classes Theta_1, Theta_2 with Re Omega ~ Theta_1 dy1 + Theta_2 dy2 (base dimension 2).

    Uses [w_i] = h^(-1/4) dH/dy_i and g_ij = [w_i].[w_j].
    """
    if jet.dim != 2:
        raise ValueError("theta_classes is defined for a 2-dimensional base")
    if h <= 0:
        raise ValueError("theta_classes needs h > 0")
    w = jet.grads * h ** -0.25
    g = pairing_gram(space, w)
    det = np.linalg.det(g)
    if not is_positive_definite(g):
        raise ValueError("degenerate metric in theta_classes")
    gi = np.linalg.inv(g)
    root = np.sqrt(det)
    theta1 = root * (gi[0, 1] * w[0] + gi[1, 1] * w[1])
    theta2 = -root * (gi[0, 0] * w[0] + gi[1, 0] * w[1])
    return theta1, theta2


def normal_project(space: BilinearSpace, jet_or_grads, v) -> np.ndarray:
    """v minus its tangential part: v - gt^{ij} (v.grad_i) grad_j.

    Broadcasts: ``grads`` may have shape (..., d, rank) and ``v`` (..., rank).
    """
    grads = jet_or_grads.grads if isinstance(jet_or_grads, PointJet) else np.asarray(jet_or_grads, dtype=float)
    v = np.asarray(v, dtype=float)
    G = _gram_f(space)
    gt = pairing_gram(space, grads)
    if np.any(~is_positive_definite(gt)):
        raise ValueError("normal projection needs a nondegenerate tangent frame")
    gi = np.linalg.inv(gt)
    pv = np.einsum("...a,ab,...ib->...i", v, G, grads)
    coef = np.einsum("...ij,...i->...j", gi, pv)
    return v - np.einsum("...j,...ja->...a", coef, grads)


def spin7_weight(space: BilinearSpace, flux, jet: PointJet, h0: float = 1.0) -> float:
    """lambda = det(gbar)^(1/2) h^(-1/2) for a 3-dimensional base."""
    if jet.dim != 3:
        raise ValueError("spin7_weight is defined for a 3-dimensional base")
    data = fundamental_data(space, flux, jet, h0)
    if data.h <= 0 or data.det_gt <= 0:
        raise ValueError(f"spin7_weight needs h > 0 and det > 0 (h={data.h}, det={data.det_gt})")
    return float(np.sqrt(data.det_gt) / np.sqrt(data.h))
