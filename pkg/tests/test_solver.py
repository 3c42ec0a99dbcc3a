from __future__ import annotations

import numpy as np
import pytest

from wmaxlab import functional, solver
from wmaxlab.functional import DomainGrid, FluxClass
from wmaxlab.lattice import space_from_spec

from conftest import CALABI_POL, CALABI_SIGMA, CALABI_SPACE, NORMAL_DIR, calabi, perturbed_calabi

D4 = space_from_spec("diag(1,1,-1,-1)")
D5 = space_from_spec("diag(1,1,1,-1,-1)")


@pytest.mark.parametrize("kwargs", [{"tol_residual": 0}, {"damping": 0}, {"damping": 1.5},
                                    {"max_iter": -1}, {"linear_tol": 0}])
def test_options_validation(kwargs):
    with pytest.raises(ValueError):
        solver.SolveOptions(**kwargs)


def test_affine_builder_checks():
    grid = DomainGrid((0, 0), (1, 1), (5, 5))
    with pytest.raises(ValueError):
        solver.affine_section(grid, D4, np.eye(4)[3], np.eye(4)[3], np.eye(4)[:2])
    with pytest.raises(ValueError):
        solver.affine_section(grid, D4, np.eye(4)[3], np.zeros(4), [[1, 0, 0, 0], [1, 0, 0, 0]])
    s3 = solver.affine_section(DomainGrid((0, 0, 0), (1, 1, 1), (4, 4, 4)), D5, np.eye(5)[4], np.zeros(5),
                               np.eye(5)[:3])
    np.testing.assert_allclose(s3.values[1, 2, 3], [1 / 3, 2 / 3, 1, 0, 0])


def test_affine_area_is_scaled_euclidean_area():
    grid = DomainGrid((0, 0), (2, 1), (5, 5))
    section = solver.affine_section(grid, D4, np.eye(4)[3], np.zeros(4), [[1, 0, 0.5, 0], [0, 2, 0, 0]])
    gt = np.array([[0.75, 0], [0, 4]])
    area = functional.weighted_area(section, FluxClass.zero(4, h0=9.0))
    assert area == pytest.approx(3.0 * 2.0 * np.sqrt(np.linalg.det(gt)), rel=1e-14)


def test_calabi_builder_values():
    space = space_from_spec("diag(1,1,-1)")
    grid = DomainGrid((0, 1), (1, 2), (5, 5))
    section = solver.calabi_section(grid, space, [0, 0, 1], [1, 0, 0], [0, 1, 0])
    tau, mu = grid.coords()
    np.testing.assert_allclose(section.values, np.stack([tau, mu ** 2 / 2, 0 * tau], axis=-1))
    h = functional.weight_h(space, [0, 1, 0], section.values)
    np.testing.assert_allclose(h, mu ** 2)


@pytest.mark.parametrize("v,sigma,lo", [([1, 0, 0, 0], [1, 0, 0, 0], 1), ([0, 0, 1, 0], [0, 1, 0, 0], 1),
                                        ([1, 0, 0, 0], [0, 1, 0, 0], -1)])
def test_calabi_builder_rejects(v, sigma, lo):
    grid = DomainGrid((0, lo), (1, 2), (5, 5))
    with pytest.raises(ValueError):
        solver.calabi_section(grid, CALABI_SPACE, CALABI_POL, v, sigma)


LEF_SPACE = space_from_spec("diag(1,1,-1,-2)")
LEF_ARGS = dict(polarization=[0, 0, 1, 0], v1=[1, 0, 0, 0], v2=[0, 1, 0, 0], delta=[0, 0, 0, 1])


def test_lefschetz_model():
    grid = DomainGrid((-1, -1), (1, 1), (11, 11))
    section = solver.lefschetz_local_section(grid, LEF_SPACE, b=0.3 + 0.1j, **LEF_ARGS)
    assert np.all(section.values[5, 5] == 0)
    mirrored = section.values[::-1, ::-1]
    np.testing.assert_allclose(mirrored, solver.reflect(LEF_SPACE, LEF_ARGS["delta"], section.values), atol=1e-14)
    with pytest.raises(ValueError):
        solver.lefschetz_local_section(grid, LEF_SPACE, b=0, **LEF_ARGS)
    with pytest.raises(ValueError):
        solver.lefschetz_local_section(grid, LEF_SPACE, b=1, **{**LEF_ARGS, "v2": [0, 2, 0, 0]})


def test_affine_reference_is_already_critical():
    grid = DomainGrid((0, 0), (1, 1), (9, 9))
    ref = solver.affine_section(grid, D4, np.eye(4)[3], [1, 1, 0, 0], [[1, 0, 0.2, 0], [0, 1, 0.1, 0]])
    sol, report = solver.solve_dirichlet(ref, FluxClass.zero(4))
    assert report.converged
    assert report.iterations <= 1
    np.testing.assert_allclose(sol.values, ref.values, atol=1e-12)


def test_bad_reference_rejected_before_iterating():
    section, _ = calabi(9)
    with pytest.raises(ValueError):
        solver.solve_dirichlet(section, FluxClass(-CALABI_SIGMA))


def test_boundary_modes():
    section, flux = calabi(9)
    with pytest.raises(NotImplementedError):
        solver.solve_dirichlet(section, flux, boundary="mixed")
    with pytest.raises(ValueError):
        solver.solve_dirichlet(section, flux, boundary="neumann")


def test_perturbed_calabi_solve(solved_calabi):
    ref, sol, report, flux = solved_calabi
    assert report.converged
    assert report.residual_history[-1] <= 1e-10 * report.residual_scale
    # Dirichlet data pinned
    mask = ref.grid.boundary_mask
    assert np.array_equal(sol.values[mask], ref.values[mask])
    # graph gauge: the correction is normal to the reference
    inner = ref.grid.interior
    N = (sol.values - ref.values)[inner]
    G = ref.space.gram.astype(float)
    tangential = np.einsum("...ir,rs,...s->...i", ref.node_grads()[inner], G, N)
    assert np.abs(tangential).max() < 1e-12
    # close to the ansatz
    exact, _ = calabi(33)
    assert np.abs(sol.values - exact.values).max() < 0.05
    assert np.all(functional.node_status(sol, flux) == 0)


def test_solution_is_weakly_critical_for_normal_fields(solved_calabi):
    ref, sol, report, flux = solved_calabi
    rng = np.random.default_rng(11)
    inner = ref.grid.interior
    frame = functional.normal_frame(ref.space, ref.node_grads()[inner], ref.polarization)
    for _ in range(5):
        f = np.zeros_like(ref.values)
        f[inner] = np.einsum("...a,...ar->...r", rng.normal(size=frame.shape[:-1]), frame)
        f /= np.abs(f).max()
        assert abs(functional.weak_first_variation(sol, flux, f)) < 1e-9


def test_solution_independent_of_initial_damping():
    ref, flux = perturbed_calabi(13)
    a, ra = solver.solve_dirichlet(ref, flux, solver.SolveOptions(damping=1.0))
    b, rb = solver.solve_dirichlet(ref, flux, solver.SolveOptions(damping=0.3))
    assert ra.converged and rb.converged
    np.testing.assert_allclose(a.values, b.values, atol=1e-9)


def test_non_convergence_is_reported():
    ref, flux = perturbed_calabi(13)
    sol, report = solver.solve_dirichlet(ref, flux, solver.SolveOptions(max_iter=1))
    assert not report.converged
    assert report.iterations == 1
    assert "no convergence" in report.message


def test_continuation_edge_cases():
    ref, flux = perturbed_calabi(9)
    assert solver.continuation_solve([], flux).sections == []
    out = solver.continuation_solve([ref, ref, ref], flux)
    assert out.ok
    # later stages re-gauge against their own start, so agreement is to solver tolerance
    for s in out.sections[1:]:
        np.testing.assert_allclose(s.values, out.sections[0].values, atol=1e-8)


def test_continuation_monotone_area_drift():
    base, flux = calabi(9)
    tau, mu = base.grid.coords()
    bump = ((tau ** 2 - mu ** 4 / 6) / 3)[..., None] * NORMAL_DIR
    refs = [base.with_values(base.values + t * 0.05 * bump) for t in np.linspace(0, 1, 5)]
    out = solver.continuation_solve(refs, flux)
    assert out.ok
    areas = [r.final_area for r in out.reports]
    diffs = np.diff(areas)
    assert np.all(diffs > 0) or np.all(diffs < 0)


def test_continuation_step_guard_and_failure():
    base, flux = calabi(9)
    far = base.with_values(base.values + 1.0 * NORMAL_DIR)
    with pytest.raises(ValueError):
        solver.continuation_solve([base, far], flux, max_step=0.1)
    broken = base.with_values(base.values - 2 * base.values[..., 1:2] * np.eye(4)[1])
    out = solver.continuation_solve([base, broken], flux)
    assert out.failed_stage == 1
    assert len(out.sections) == 1
