"""Curvature diagnostics on (solved) sections.

Tangent frames come from Gram-Schmidt on the grid gradients in the order
y1, y2[, y3] with respect to gt, so ``e_a = sum_i E[a, i] dH/dy_i`` with ``E``
lower triangular. Matrix-valued outputs (II, Ric_BE) are expressed in that
frame; their eigenvalues do not depend on the choice.

Second derivatives are central differences on the grid, so every per-node
quantity is defined on interior nodes only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .functional import FluxClass, Section, interior_second_differences
from .lattice import BilinearSpace, enumerate_norm_vectors
from .pointjet import is_positive_definite, normal_project, pairing_gram, weight_h

__all__ = [
    "tangent_frame",
    "second_fundamental_form",
    "mean_curvature",
    "MeanCurvature",
    "bakry_emery",
    "BakryEmery",
    "CurvatureReport",
    "curvature_report",
    "gauss_check",
    "excess_class_scan",
    "ScanResult",
    "wall_locus_eval",
    "WallLocus",
    "TOL_SCAN",
]

TOL_SCAN = 1e-6
NEAR_MISS_FACTOR = 10.0


def tangent_frame(space: BilinearSpace, grads: np.ndarray) -> np.ndarray:
    """Lower-triangular E with E gt E^T = I (Gram-Schmidt in axis order)."""
    gt = pairing_gram(space, grads)
    if np.any(~is_positive_definite(gt)):
        raise ValueError("tangent frame needs a positive definite induced metric")
    L = np.linalg.cholesky(gt)
    eye = np.broadcast_to(np.eye(gt.shape[-1]), gt.shape)
    return np.linalg.solve(L, eye)


def _interior_node(section: Section, node) -> tuple[int, ...]:
    node = tuple(int(i) for i in node)
    if len(node) != section.dim:
        raise ValueError(f"node index must have {section.dim} entries")
    if not all(0 < i < k - 1 for i, k in zip(node, section.grid.n)):
        raise ValueError(f"node {node} is not an interior node")
    return node


def _ii_coords(space, grads, hess):
    """Normal parts of the second derivatives, shape (..., d, d, r)."""
    d = grads.shape[-2]
    g = grads[..., None, None, :, :]
    g = np.broadcast_to(g, (*hess.shape[:-1], d, grads.shape[-1]))
    return normal_project(space, g, hess)


def _to_frame_vec(E, T):
    """T_ij (vector valued) -> T_ab = E_ai E_bj T_ij."""
    return np.einsum("...ai,...bj,...ijr->...abr", E, E, T)


def _to_frame_mat(E, T):
    return np.einsum("...ai,...bj,...ij->...ab", E, E, T)


def _node_fields(section: Section):
    inner = section.grid.interior
    return section.node_grads()[inner], section.node_hessians(), section.values[inner]


def _second_fundamental_form(space, grads, hess):
    E = tangent_frame(space, grads)
    return _to_frame_vec(E, _ii_coords(space, grads, hess)), E


def second_fundamental_form(section: Section, node) -> np.ndarray:
    """II(e_a, e_b) as normal lattice vectors, shape (d, d, rank)."""
    node = _interior_node(section, node)
    jet = section.jet(node)
    II, _ = _second_fundamental_form(section.space, jet.grads, jet.hess)
    return II


@dataclass
class MeanCurvature:
    vector: np.ndarray      # trace of II
    expected: np.ndarray    # h^-1 flux^perp, the value at a critical point
    defect: float           # max-norm of the difference (coefficient vector)


def _mean_curvature(space, flux: FluxClass, values, grads, II):
    m = np.einsum("...aar->...r", II)
    h = np.asarray(weight_h(space, flux.analytic, values, flux.h0))
    if np.any(~(h > 0)):
        raise ValueError("mean curvature comparison needs h > 0")
    if flux.is_zero:
        expected = np.zeros_like(m)
    else:
        phi = np.broadcast_to(flux.analytic, m.shape)
        expected = normal_project(space, grads, phi) / np.asarray(h)[..., None]
    defect = np.abs(m - expected).max(axis=-1)
    return m, expected, defect


def mean_curvature(section: Section, flux: FluxClass, node) -> MeanCurvature:
    node = _interior_node(section, node)
    jet = section.jet(node)
    II, _ = _second_fundamental_form(section.space, jet.grads, jet.hess)
    m, expected, defect = _mean_curvature(section.space, flux, jet.value, jet.grads, II)
    return MeanCurvature(m, expected, float(defect))


@dataclass
class BakryEmery:
    matrix: np.ndarray
    min_eig: float
    scale: float            # size of the two contributing terms, for relative checks


def _bakry_emery(space, flux: FluxClass, values, grads, II, E):
    G = space.gram.astype(float)
    h = np.asarray(weight_h(space, flux.analytic, values, flux.h0))
    if np.any(~(h > 0)):
        raise ValueError("Bakry-Emery tensor needs h > 0")
    # -sum_k II(e_k, e_b) . II(e_a, e_k): positive semi-definite on a negative normal bundle
    curv = -np.einsum("...kbr,rs,...aks->...ab", II, G, II)
    if flux.is_zero:
        weight = np.zeros_like(curv)
    else:
        frame = np.einsum("...ai,...ir->...ar", E, grads)
        t = np.einsum("...ar,rs,s->...a", frame, G, flux.analytic)
        weight = 2.0 * t[..., :, None] * t[..., None, :] / (h ** 2)[..., None, None]
    ric = curv + weight
    ric = 0.5 * (ric + np.swapaxes(ric, -1, -2))
    scale = np.linalg.norm(curv, axis=(-2, -1)) + np.linalg.norm(weight, axis=(-2, -1))
    return ric, np.linalg.eigvalsh(ric)[..., 0], scale


def bakry_emery(section: Section, flux: FluxClass, node) -> BakryEmery:
    """Ric_BE(e_a, e_b) = -sum_k II(e_k,e_b).II(e_a,e_k) + 2 h^-2 (flux.e_a)(flux.e_b)."""
    node = _interior_node(section, node)
    jet = section.jet(node)
    II, E = _second_fundamental_form(section.space, jet.grads, jet.hess)
    ric, lo, scale = _bakry_emery(section.space, flux, jet.value, jet.grads, II, E)
    return BakryEmery(ric, float(lo), float(scale))


def _log_h_hessian(section: Section, flux: FluxClass, grads, hess):
    """Covariant Hessian of log h in grid coordinates, by central differences.

    Christoffel symbols come from the embedding: Gamma_ij^k = gt^{kl} (d_ij H . d_l H).
    """
    grid = section.grid
    log_h = np.log(weight_h(section.space, flux.analytic, section.values, flux.h0))
    steps = grid.steps
    first = np.stack([np.gradient(log_h, s, axis=k) for k, s in enumerate(steps)], axis=-1)[grid.interior]
    second = interior_second_differences(log_h[..., None], steps)[..., 0]
    G = section.space.gram.astype(float)
    gamma_low = np.einsum("...ijr,rs,...ls->...ijl", hess, G, grads)
    gi = np.linalg.inv(pairing_gram(section.space, grads))
    gamma = np.einsum("...kl,...ijl->...ijk", gi, gamma_low)
    return second - np.einsum("...ijk,...k->...ij", gamma, first)


def gauss_check(section: Section, flux: FluxClass) -> np.ndarray:
    """Per interior node: max-norm of Ric_Gauss - (Ric_BE + 1/2 Hess log h).

    Ric_Gauss(e_a,e_b) = II(e_a,e_b).m - sum_k II(e_k,e_b).II(e_a,e_k). The
    Hessian of log h is differenced numerically, so at a critical point the
    result is O(step^2); away from one it measures the failure of the
    critical-point identities.
    """
    space = section.space
    grads, hess, values = _node_fields(section)
    G = space.gram.astype(float)
    II, E = _second_fundamental_form(space, grads, hess)
    m = np.einsum("...aar->...r", II)
    ric_gauss = (np.einsum("...abr,rs,...s->...ab", II, G, m)
                 - np.einsum("...kbr,rs,...aks->...ab", II, G, II))
    ric_be, _, _ = _bakry_emery(space, flux, values, grads, II, E)
    hess_log = _to_frame_mat(E, _log_h_hessian(section, flux, grads, hess))
    diff = ric_gauss - (ric_be + 0.5 * hess_log)
    return np.abs(diff).max(axis=(-2, -1))


@dataclass
class CurvatureReport:
    """Curvature fields on the interior nodes (arrays indexed like grid.interior)."""

    II: np.ndarray = field(repr=False)
    mean_curvature: np.ndarray = field(repr=False)
    mean_defect: np.ndarray = field(repr=False)
    ric_be: np.ndarray = field(repr=False)
    min_eig: np.ndarray = field(repr=False)
    scale: np.ndarray = field(repr=False)
    frame_convention: str = "Gram-Schmidt in gt, axis order"

    @property
    def global_min_eig(self) -> float:
        return float(self.min_eig.min())

    @property
    def max_mean_defect(self) -> float:
        return float(self.mean_defect.max())

    def worst_relative_eig(self) -> float:
        """min over nodes of min_eig / scale (nodes with zero scale count as 0)."""
        with np.errstate(invalid="ignore", divide="ignore"):
            rel = np.where(self.scale > 0, self.min_eig / self.scale, 0.0)
        return float(rel.min())

    def summary(self) -> dict:
        return {
            "frame": self.frame_convention,
            "global_min_eig": self.global_min_eig,
            "worst_relative_eig": self.worst_relative_eig(),
            "max_mean_defect": self.max_mean_defect,
        }


def curvature_report(section: Section, flux: FluxClass) -> CurvatureReport:
    space = section.space
    grads, hess, values = _node_fields(section)
    II, E = _second_fundamental_form(space, grads, hess)
    m, _, defect = _mean_curvature(space, flux, values, grads, II)
    ric, lo, scale = _bakry_emery(space, flux, values, grads, II, E)
    return CurvatureReport(II, m, defect, ric, lo, scale)


# ---------------------------------------------------------------------------
# excess (-2)-classes and wall loci

@dataclass
class ScanResult:
    hits: list[tuple[tuple[int, ...], tuple[int, ...]]]
    near_misses: list[tuple[tuple[int, ...], tuple[int, ...]]]
    candidates: list[tuple[int, ...]]
    tol: float

    @property
    def clean(self) -> bool:
        return not self.hits

    def hit_classes(self) -> list[tuple[int, ...]]:
        return sorted({c for _, c in self.hits})


def excess_class_scan(section: Section, flux: FluxClass | None, polarization, height: int, *,
                      tol_scan: float = TOL_SCAN) -> ScanResult:
    """Nodes where a norm -2 class is orthogonal to the polarization and to every gradient.

    A node is a hit when ``max_i |sigma . dH/dy_i| <= tol * |sigma| |dH/dy_i|``
    (Euclidean coefficient norms); a near miss lies within NEAR_MISS_FACTOR
    times that band. ``flux`` is accepted for interface symmetry and unused.
    """
    space = section.space
    pol = np.asarray(polarization, dtype=float)
    G = space.gram.astype(float)
    if height <= 0:
        return ScanResult([], [], [], tol_scan)
    cands = [c for c in enumerate_norm_vectors(space, -2, height)
             if abs(np.asarray(c, dtype=float) @ G @ pol) <= 1e-12 * max(1.0, np.linalg.norm(pol))]
    if not cands:
        return ScanResult([], [], [], tol_scan)
    C = np.asarray(cands, dtype=float)                            # (c, r)
    grads = section.node_grads()                                   # (*n, d, r)
    pair = np.abs(np.einsum("cr,rs,...is->c...i", C, G, grads))    # (c, *n, d)
    bound = (np.linalg.norm(C, axis=-1).reshape((-1,) + (1,) * (grads.ndim - 1))
             * np.linalg.norm(grads, axis=-1)[None])
    ratio = np.max(pair / np.maximum(bound, 1e-300), axis=-1)      # (c, *n)
    hits, near = [], []
    for idx in zip(*np.nonzero(ratio <= NEAR_MISS_FACTOR * tol_scan)):
        c = tuple(int(x) for x in cands[idx[0]])
        node = tuple(int(x) for x in idx[1:])
        (hits if ratio[idx] <= tol_scan else near).append((node, c))
    hits.sort()
    near.sort()
    return ScanResult(hits, near, [tuple(int(x) for x in c) for c in cands], tol_scan)


@dataclass
class WallLocus:
    field: np.ndarray = field(repr=False)
    level: float
    crossing_cells: list[tuple[int, ...]]


def wall_locus_eval(section: Section, sigma, level: float = 0.0) -> WallLocus:
    """sigma . H at every node and the cells where sigma . H - level changes sign.

    A cell counts as crossing when the shifted field is <= 0 at one corner and
    >= 0 at another.
    """
    sigma = np.asarray(sigma, dtype=float)
    values = section.values @ section.space.gram.astype(float) @ sigma
    shifted = values - level
    n = section.grid.n
    d = len(n)
    corners = [shifted[tuple(slice(o, o + k - 1) for o, k in zip(off, n))]
               for off in np.ndindex(*(2,) * d)]
    lo = np.min(corners, axis=0)
    hi = np.max(corners, axis=0)
    cells = [tuple(int(i) for i in idx) for idx in np.argwhere((lo <= 0) & (hi >= 0))]
    return WallLocus(values, float(level), cells)
