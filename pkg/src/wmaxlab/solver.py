"""Reference sections and a damped Newton solver for the Dirichlet problem.

The solver works in graph gauge: the unknown is a normal perturbation
``N = sum_a c_a nu_a`` of a frozen reference section, where ``nu_a`` is a
per-node basis of the vectors orthogonal (in the pairing) to the reference
tangents and to the polarization. This removes the reparametrization kernel
of the equation. The Newton matrix in these coordinates is minus the Hessian
of the discrete weighted area divided by the cell volume, which is symmetric
positive definite near a solution, so each step is a matrix-free CG solve.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from .functional import (
    DomainGrid,
    FluxClass,
    Section,
    _cell_state,
    _hessian_apply_values,
    _require_ok_nodes,
    _residual_values,
    normal_frame,
    weighted_area,
)
from .lattice import BilinearSpace
from .pointjet import is_positive_definite, normal_project, pairing_gram, weight_h

__all__ = [
    "SolveOptions",
    "SolveReport",
    "ContinuationResult",
    "affine_section",
    "calabi_section",
    "lefschetz_local_section",
    "reflect",
    "solve_dirichlet",
    "continuation_solve",
    "BOUNDARY_MODES",
]

BOUNDARY_MODES = ("dirichlet", "mixed")


@dataclass
class SolveOptions:
    max_iter: int = 20
    tol_residual: float = 1e-10
    damping: float = 1.0
    h_floor: float = 1e-8
    linear_tol: float = 1e-12
    max_halvings: int = 30
    max_linear_iter: int = 5000

    def __post_init__(self):
        if not self.tol_residual > 0:
            raise ValueError("tol_residual must be positive")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.max_iter < 0 or self.max_halvings < 0:
            raise ValueError("iteration limits must be non-negative")
        if not self.linear_tol > 0:
            raise ValueError("linear_tol must be positive")


@dataclass
class SolveReport:
    converged: bool
    iterations: int
    residual_history: list[float] = field(default_factory=list)
    final_area: float = float("nan")
    step_lengths: list[float] = field(default_factory=list)
    linear_iterations: list[int] = field(default_factory=list)
    residual_scale: float = 1.0
    message: str = ""

    def to_dict(self) -> dict:
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "residual_history": list(self.residual_history),
            "final_area": self.final_area,
            "step_lengths": list(self.step_lengths),
            "linear_iterations": list(self.linear_iterations),
            "residual_scale": self.residual_scale,
            "message": self.message,
        }


# ---------------------------------------------------------------------------
# reference sections

def _vec(x, rank: int, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (rank,):
        raise ValueError(f"{name} must have length {rank}, got shape {x.shape}")
    return x


def _pair(space: BilinearSpace, u, v) -> float:
    return float(u @ space.gram.astype(float) @ v)


def _require_orthogonal(space, u, v, what: str, tol: float = 1e-12):
    scale = max(1.0, np.linalg.norm(u) * np.linalg.norm(v))
    if abs(_pair(space, u, v)) > tol * scale:
        raise ValueError(f"{what} must be orthogonal (pairing {_pair(space, u, v):.3e})")


def affine_section(grid: DomainGrid, space: BilinearSpace, polarization, base, grads,
                   flux: FluxClass | None = None) -> Section:
    """H(y) = base + sum_i y_i grads_i sampled on the grid."""
    r = space.rank
    pol = _vec(polarization, r, "polarization")
    base = _vec(base, r, "base")
    grads = np.asarray(grads, dtype=float)
    if grads.shape != (grid.dim, r):
        raise ValueError(f"need {grid.dim} gradient vectors of length {r}")
    _require_orthogonal(space, base, pol, "base and polarization")
    for i, g in enumerate(grads):
        _require_orthogonal(space, g, pol, f"gradient {i} and polarization")
    if not is_positive_definite(pairing_gram(space, grads)):
        raise ValueError("Gram matrix of the gradients is not positive definite")
    coords = grid.coords()
    values = base + sum(c[..., None] * g for c, g in zip(coords, grads))
    section = Section(grid, space, pol, values)
    if flux is not None:
        _require_ok_nodes(section, flux)
    return section


def calabi_section(grid: DomainGrid, space: BilinearSpace, polarization, v, sigma) -> Section:
    """H(tau, mu) = v tau + sigma mu^2 / 2 on a (tau, mu) grid with mu > 0.

    Downstream the flux must be ``sigma``; then h = sigma^2 mu^2 and
    gt = diag(v^2, sigma^2 mu^2).
    """
    if grid.dim != 2:
        raise ValueError("the Calabi section lives on a 2-dimensional (tau, mu) grid")
    if grid.lo[1] <= 0:
        raise ValueError("the Calabi section needs mu > 0 on the whole grid")
    r = space.rank
    pol = _vec(polarization, r, "polarization")
    v = _vec(v, r, "v")
    sigma = _vec(sigma, r, "sigma")
    _require_orthogonal(space, v, sigma, "v and sigma")
    _require_orthogonal(space, v, pol, "v and polarization")
    _require_orthogonal(space, sigma, pol, "sigma and polarization")
    if not _pair(space, v, v) > 0 or not _pair(space, sigma, sigma) > 0:
        raise ValueError("v and sigma must both have positive norm")
    tau, mu = grid.coords()
    values = tau[..., None] * v + 0.5 * (mu ** 2)[..., None] * sigma
    return Section(grid, space, pol, values)


def reflect(space: BilinearSpace, delta, values) -> np.ndarray:
    """tau_delta(x) = x + (delta . x) delta, broadcast over leading axes."""
    delta = np.asarray(delta, dtype=float)
    values = np.asarray(values, dtype=float)
    coef = values @ space.gram.astype(float) @ delta
    return values + coef[..., None] * delta


def _lefschetz_values(z, v1, v2, delta, b):
    z2 = z * z
    z3 = z2 * z
    return (z2.real[..., None] * v1 + z2.imag[..., None] * v2
            + (b * z3).imag[..., None] * delta)


def lefschetz_local_section(grid: DomainGrid, space: BilinearSpace, polarization,
                            v1, v2, delta, b: complex) -> Section:
    """Cubic model v1 Re z^2 + v2 Im z^2 + Im(b z^3) delta on a chart z = y1 + i y2.

    Checks H(-z) = tau_delta(H(z)) at every node before returning.
    """
    if grid.dim != 2:
        raise ValueError("the Lefschetz model lives on a 2-dimensional chart")
    r = space.rank
    pol = _vec(polarization, r, "polarization")
    v1, v2, delta = (_vec(x, r, n) for x, n in ((v1, "v1"), (v2, "v2"), (delta, "delta")))
    b = complex(b)
    if b == 0:
        raise ValueError("b must be nonzero (nondegenerate cubic term)")
    if abs(_pair(space, delta, delta) + 2) > 1e-12:
        raise ValueError("delta must have norm -2")
    for name, x in (("v1", v1), ("v2", v2), ("delta", delta)):
        _require_orthogonal(space, x, pol, f"{name} and polarization")
    _require_orthogonal(space, v1, delta, "v1 and delta")
    _require_orthogonal(space, v2, delta, "v2 and delta")
    lam = _pair(space, v1, v1)
    if not lam > 0:
        raise ValueError("v1 must have positive norm")
    if abs(_pair(space, v2, v2) - lam) > 1e-12 * lam or abs(_pair(space, v1, v2)) > 1e-12 * lam:
        raise ValueError("v1, v2 must be orthogonal with equal norms")
    x, y = grid.coords()
    z = x + 1j * y
    values = _lefschetz_values(z, v1, v2, delta, b)
    mirrored = _lefschetz_values(-z, v1, v2, delta, b)
    scale = max(1.0, float(np.abs(values).max()))
    if not np.allclose(mirrored, reflect(space, delta, values), rtol=0, atol=1e-13 * scale):
        raise ValueError("equivariance H(-z) = tau_delta(H(z)) fails")
    return Section(grid, space, pol, values)


# ---------------------------------------------------------------------------
# Newton solve in graph gauge

def _admissible(space, grid, values, flux, h_floor: float) -> bool:
    h = weight_h(space, flux.analytic, values, flux.h0)
    if np.any(~(h >= h_floor)):
        return False
    grads = np.stack([np.gradient(values, s, axis=k, edge_order=2) for k, s in enumerate(grid.steps)], axis=-2)
    if np.any(~is_positive_definite(pairing_gram(space, grads))):
        return False
    cells = _cell_state(space, grid, values, flux, check=False)
    return cells is not None and bool(np.all(cells.h >= h_floor))


def solve_dirichlet(reference: Section, flux: FluxClass, opts: SolveOptions | None = None, *,
                    boundary: str = "dirichlet") -> tuple[Section, SolveReport]:
    """Find H = reference + N, N normal to the reference and zero on the boundary,
    solving the discrete Euler-Lagrange equations.

    Convergence is measured by the residual with its reference-tangent part
    removed, relative to ``max(1, |source|_inf)``.
    """
    opts = opts or SolveOptions()
    if boundary not in BOUNDARY_MODES:
        raise ValueError(f"unknown boundary mode {boundary!r}; expected one of {BOUNDARY_MODES}")
    if boundary == "mixed":
        raise NotImplementedError(
            "mixed Dirichlet/Neumann orientifold boundary condition is not implemented; use 'dirichlet'")
    space, grid = reference.space, reference.grid
    flux.check_polarized(space, reference.polarization)
    _require_ok_nodes(reference, flux)
    if not _admissible(space, grid, reference.values, flux, opts.h_floor):
        raise ValueError("reference section violates h >= h_floor or metric positivity")

    G = space.gram.astype(float)
    inner_idx = grid.interior
    ref_grads = reference.node_grads()[inner_idx]
    frame = normal_frame(space, ref_grads, reference.polarization)     # (*ni, m, r)
    shape = frame.shape[:-1]
    if shape[-1] == 0:
        raise ValueError("no normal directions: rank too small for this base dimension")
    size = int(np.prod(shape))

    def values_of(c):
        V = reference.values.copy()
        V[inner_idx] += np.einsum("...a,...ar->...r", c, frame)
        return V

    def evaluate(V):
        R, scale = _residual_values(space, grid, V, flux)
        proj = normal_project(space, ref_grads, R[inner_idx])
        F = np.einsum("...ar,rs,...s->...a", frame, G, R[inner_idx])
        return F, float(np.abs(proj).max(initial=0.0)), scale

    c = np.zeros(shape)
    V = values_of(c)
    F, res, scale = evaluate(V)
    scale = max(1.0, scale)
    target = opts.tol_residual * scale
    report = SolveReport(False, 0, [res], residual_scale=scale)
    alpha0 = opts.damping
    for it in range(1, opts.max_iter + 1):
        if res <= target:
            break
        cells = _cell_state(space, grid, V, flux)

        def matvec(x, cells=cells, V=V):
            x = x.reshape(shape)
            N = np.zeros_like(V)
            N[inner_idx] = np.einsum("...a,...ar->...r", x, frame)
            dR = _hessian_apply_values(space, grid, V, flux, N, cells)[inner_idx]
            return np.einsum("...ar,rs,...s->...a", frame, G, dR).ravel()

        J = LinearOperator((size, size), matvec=matvec, dtype=float)
        counter = {"n": 0}

        def count(_):
            counter["n"] += 1

        step, info = cg(J, -F.ravel(), rtol=opts.linear_tol, atol=0.0,
                        maxiter=opts.max_linear_iter, callback=count)
        report.linear_iterations.append(counter["n"])
        step = step.reshape(shape)
        merit = float(np.linalg.norm(F))
        alpha = alpha0
        accepted = False
        for _ in range(opts.max_halvings + 1):
            trial = c + alpha * step
            Vt = values_of(trial)
            if _admissible(space, grid, Vt, flux, opts.h_floor):
                Ft, rt, _ = evaluate(Vt)
                if np.linalg.norm(Ft) <= (1 - 1e-4 * alpha) * merit:
                    accepted = True
                    break
            alpha *= 0.5
        report.iterations = it
        if not accepted:
            report.message = f"line search stalled at iteration {it}"
            break
        c, V, F, res = trial, Vt, Ft, rt
        report.residual_history.append(res)
        report.step_lengths.append(alpha)
        alpha0 = min(1.0, 2 * alpha)
        if info != 0 and not report.message:
            report.message = f"inner CG reached its iteration limit at iteration {it}"
    report.converged = res <= target
    if report.converged:
        report.message = report.message or "converged"
    elif not report.message:
        report.message = f"no convergence in {opts.max_iter} iterations"
    solved = reference.with_values(V)
    report.final_area = weighted_area(solved, flux)
    return solved, report


@dataclass
class ContinuationResult:
    sections: list[Section]
    reports: list[SolveReport]
    failed_stage: int | None = None

    @property
    def ok(self) -> bool:
        return self.failed_stage is None


def continuation_solve(references, flux: FluxClass, opts: SolveOptions | None = None, *,
                       max_step: float = np.inf) -> ContinuationResult:
    """Solve along a family of reference sections, warm-starting each stage.

    Stage k starts from the previous solution shifted by the difference of
    consecutive references, so its boundary values are those of reference k.
    The chain stops at the first stage that fails to converge.
    """
    references = list(references)
    for k in range(1, len(references)):
        prev, cur = references[k - 1], references[k]
        if prev.grid != cur.grid or prev.space != cur.space:
            raise ValueError(f"stage {k} uses a different grid or space")
        jump = np.abs(cur.values - prev.values)[cur.grid.boundary_mask].max()
        if jump >= max_step:
            raise ValueError(f"boundary data jump {jump:.3e} at stage {k} exceeds max_step {max_step:.3e}")
    result = ContinuationResult([], [])
    prev_solution = None
    for k, ref in enumerate(references):
        start = ref if prev_solution is None else ref.with_values(
            prev_solution.values + ref.values - references[k - 1].values)
        try:
            solved, report = solve_dirichlet(start, flux, opts)
        except ValueError as exc:
            result.reports.append(SolveReport(False, 0, message=str(exc)))
            result.failed_stage = k
            break
        result.reports.append(report)
        if not report.converged:
            result.failed_stage = k
            break
        result.sections.append(solved)
        prev_solution = solved
    return result
