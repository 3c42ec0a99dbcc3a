"""One test per acceptance criterion; each records a PASS/FAIL line shown in the run summary."""
from __future__ import annotations

import json
import shutil
import time
from pathlib import Path

import numpy as np
import pytest

from wmaxlab import cli, diagnostics, functional, gh, lattice, solver, walls
from wmaxlab.functional import DomainGrid, FluxClass

from conftest import (ACCEPTANCE_LINES, brute_force_norm_vectors, brute_force_scan, calabi, perturbed_calabi,
                      scan_fixtures)

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


def record(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


@pytest.fixture(scope="module")
def newton():
    ref, flux = perturbed_calabi(33, amplitude=1e-2)
    t0 = time.perf_counter()
    sol, rep = solver.solve_dirichlet(ref, flux, solver.SolveOptions(max_iter=20, tol_residual=1e-10))
    return ref, sol, rep, flux, time.perf_counter() - t0


def test_criterion_01_gradient_consistency():
    t0 = time.perf_counter()
    rep = cli.gradient_check(seed=2024, count=20, n=9, dim=2, s=1e-4)
    elapsed = time.perf_counter() - t0
    worst = rep["max_relative_error"]
    record(1, worst <= 1e-5 and elapsed < 10, f"max rel err {worst:.2e} over 20 sections in {elapsed:.2f}s")


def test_criterion_02_calabi_residual_order():
    t0 = time.perf_counter()
    norms = [functional.residual(*calabi(n)).raw_inf for n in (17, 33, 65)]
    elapsed = time.perf_counter() - t0
    ratios = [a / b for a, b in zip(norms, norms[1:])]
    ok = all(3.2 <= q <= 4.8 for q in ratios) and elapsed < 10
    record(2, ok, f"ratios {ratios[0]:.3f}, {ratios[1]:.3f} in {elapsed:.2f}s")


def test_criterion_03_affine_zero_flux_exact():
    worst = 0.0
    for dim, spec in ((2, "diag(1,1,-1,-1)"), (3, "diag(1,1,1,-1,-1)")):
        space = lattice.space_from_spec(spec)
        r = space.rank
        rng = np.random.default_rng(dim)
        grid = DomainGrid((0.0,) * dim, (1.0,) * dim, (9,) * dim)
        grads = np.zeros((dim, r))
        grads[:, :dim] = np.eye(dim) + 0.2 * rng.uniform(-1, 1, (dim, dim))
        grads[:, dim] = 0.3 * rng.uniform(-1, 1, dim)
        base = np.r_[np.ones(dim), 0.2, 0.0]
        section = solver.affine_section(grid, space, np.eye(r)[-1], base, grads)
        worst = max(worst, functional.residual(section, FluxClass.zero(r)).raw_inf)
    record(3, worst <= 1e-13, f"max |residual| {worst:.1e} over d = 2, 3")


def test_criterion_04_newton_solve(newton):
    _, _, rep, _, elapsed = newton
    hist = np.array(rep.residual_history)
    # pairs whose new residual already sits at the rounding floor say nothing about the rate
    floor = 1e-12 * rep.residual_scale
    pairs = [(a, b) for a, b in zip(hist, hist[1:]) if b > floor]
    C = max((b / a ** 2 for a, b in pairs), default=0.0)
    ok = (rep.converged and hist[-1] <= 1e-10 * rep.residual_scale and rep.iterations <= 8
          and C <= 1e3 and elapsed < 60)
    record(4, ok, f"{rep.iterations} iterations, history {', '.join(f'{x:.1e}' for x in hist)}, "
                  f"C {C:.2e}, {elapsed:.1f}s")


def test_criterion_05_hessian_negative(newton):
    _, sol, _, flux, _ = newton
    ext = functional.hessian_extreme(sol, flux, 50)
    record(5, ext.value < -1e-6, f"largest normalised Hessian value {ext.value:.4e} after {ext.iterations} steps")


def test_criterion_06_bakry_emery(newton):
    _, sol, _, flux, _ = newton
    rep = diagnostics.curvature_report(sol, flux)
    worst_rel = rep.worst_relative_eig()
    psd = bool(np.all(rep.min_eig >= -1e-8 * rep.scale))
    exact, eflux = calabi(17)
    erep = diagnostics.curvature_report(exact, eflux)
    mu = exact.grid.coords()[1][exact.grid.interior]
    eig = np.linalg.eigvalsh(erep.ric_be)
    target = np.stack([np.zeros_like(mu), 2 / mu ** 4], axis=-1)
    err = float(np.abs(eig - target).max())
    step = max(exact.grid.steps)
    record(6, psd and err <= step ** 2, f"worst min-eig/scale {worst_rel:.2e} on solve, exact eig err {err:.1e}")


def test_criterion_07_mean_curvature_identity(newton):
    _, sol, _, flux, _ = newton
    rep = diagnostics.curvature_report(sol, flux)
    step = max(sol.grid.steps)
    bound = 10 * (step ** 2 + 1e-10)
    record(7, rep.max_mean_defect <= bound, f"max defect {rep.max_mean_defect:.2e} vs bound {bound:.2e}")


def test_criterion_08_lattice_exactness():
    K = lattice.k3_lattice()
    rng = np.random.default_rng(8)
    delta = np.zeros(22, dtype=np.int64)
    delta[0], delta[1] = 1, -1          # U-part vector of norm -2
    assert lattice.inner(K, delta, delta) == -2
    bad = 0
    for _ in range(1000):
        v = rng.integers(-20, 21, 22)
        w = lattice.picard_lefschetz(K, delta, v)
        u = rng.integers(-20, 21, 22)
        if not np.array_equal(lattice.picard_lefschetz(K, delta, w), v):
            bad += 1
        if lattice.inner(K, w, lattice.picard_lefschetz(K, delta, u)) != lattice.inner(K, v, u):
            bad += 1
    sig, det = lattice.signature(K), lattice.determinant(K)
    mismatches = 0
    cases = [("U+diag(-2)", 3), ("diag(1,1,-1,-1)", 3), ("U+U", 3), ("diag(1,1,-1,-1,-2)", 3),
             ("U+U+diag(-2,-2)", 3), ("diag(2,-1,-1,-1,-1,-1)", 2)]
    for spec, height in cases:
        space = lattice.space_from_spec(spec)
        for target in (-2, 0, 2):
            got = [tuple(int(x) for x in v) for v in lattice.enumerate_norm_vectors(space, target, height)]
            mismatches += got != brute_force_norm_vectors(space.gram, target, height)
    ok = bad == 0 and sig == (3, 19, 0) and det == -1 and mismatches == 0
    record(8, ok, f"{bad} reflection failures, K3 signature {sig} det {det}, {mismatches} enumeration mismatches")


def _annulus() -> dict:
    return json.loads((SCENARIOS / "annulus_complex.json").read_text())


def _int_paths(obj, prefix):
    if isinstance(obj, dict):
        for k, v in obj.items():
            yield from _int_paths(v, prefix + (k,))
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            yield from _int_paths(v, prefix + (i,))
    elif isinstance(obj, int) and not isinstance(obj, bool):
        yield prefix


def test_criterion_09_walls():
    cx = walls.complex_from_dict(_annulus())
    base_ok = walls.validate_flux_jumps(cx).ok and walls.charge_conservation(cx)[0]
    total = missed = 0
    for section in ("chambers", "walls", "boundaries"):
        for path in _int_paths(_annulus()[section], (section,)):
            for delta in (1, -1):
                data = _annulus()
                target = data
                for key in path[:-1]:
                    target = target[key]
                target[path[-1]] += delta
                owner = data[path[0]][path[1]]["id"]
                total += 1
                try:
                    rep = walls.validate_complex(walls.complex_from_dict(data))
                except ValueError:
                    continue
                missed += rep.ok or owner not in rep.suspects
    c = np.array([1, -2, 0, 3])
    formula = all(np.array_equal(walls.orientifold_flux([(c, m)], "mu<0"), (2 - m) * c)
                  and np.array_equal(walls.orientifold_flux([(c, m)], "mu>0"), (m - 2) * c) for m in range(4))
    record(9, base_ok and missed == 0 and formula,
           f"annulus consistent {base_ok}, {total - missed}/{total} mutations caught, boundary formula {formula}")


def test_criterion_10_gibbons_hawking():
    taub_nut = gh.GHParams("A", 1.0, 0)
    box = ((1.0, 1.0, 1.0), (2.0, 2.0, 2.0))
    coarse = gh.gh_harmonicity_check(taub_nut, 0.1, box)
    fine = gh.gh_harmonicity_check(taub_nut, 0.05, box)
    ratio = coarse.max_abs / fine.max_abs
    r = np.geomspace(0.05, 50, 200)
    zero = all(np.all(gh.gh_potential(gh.GHParams(f, 0.0, k), r, 0j) == 0) for f, k in (("A", -1), ("D", 2)))
    rows = gh.gh_profile(gh.GHParams("A", 0.0, 0), gh.NeckParams(0.1, 1.0), r)
    cross = max(abs(hbar - h) / h for _, h, _, hbar in rows)
    ok = 3.0 <= ratio <= 5.0 and zero and cross <= 1e-12
    record(10, ok, f"Richardson ratio {ratio:.4f}, vanishing potentials {zero}, neck identity err {cross:.1e}")


def test_criterion_11_excess_class_scan():
    pad = np.eye(5)
    space = lattice.space_from_spec("diag(1,1,-1,-1,-2)")
    section = solver.calabi_section(DomainGrid((0, 1), (1, 2), (9, 9)), space, pad[3], pad[0], pad[1])
    res = diagnostics.excess_class_scan(section, FluxClass(pad[1]), pad[3], 1)
    nodes = {node for node, _ in res.hits}
    coverage = len(nodes) / int(np.prod(section.grid.n))
    agree = all(sorted(diagnostics.excess_class_scan(s, None, pol, h).hits)
                == brute_force_scan(s, pol, h, diagnostics.TOL_SCAN) for s, pol, h in scan_fixtures())
    ok = coverage == 1.0 and res.hit_classes() == [(0, 0, 0, 0, 1)] and agree
    record(11, ok, f"padded class found at {coverage:.0%} of nodes, brute-force agreement {agree}")


def test_criterion_12_determinism(tmp_path):
    differing = []
    names = sorted(p.name for p in SCENARIOS.glob("*.json"))
    for name in names:
        texts = []
        for k in range(2):
            work = tmp_path / f"{k}"
            work.mkdir(exist_ok=True)
            shutil.copy(SCENARIOS / name, work / name)
            data = json.loads((work / name).read_text())
            if "chambers" in data:
                report, _ = cli._walls_report(str(work / name), work)
            else:
                report, _ = cli.run_scenario(cli.load_scenario(work / name))
            texts.append(cli.dumps_report(report))
        if texts[0] != texts[1]:
            differing.append(name)
    record(12, not differing, f"{len(names) - len(differing)}/{len(names)} scenarios reproduce byte-identical reports")
