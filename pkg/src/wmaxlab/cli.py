"""Command line scenario runner.

Scenarios are JSON documents with a ``version`` field; unknown keys are
errors. Reports are JSON with sorted keys and floats rounded to 12
significant digits, so identical inputs give byte-identical output.

Exit codes: 0 all requested checks pass, 1 a check failed, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diagnostics, functional, gh, solver, walls
from .functional import DomainGrid, FluxClass, Section
from .lattice import BilinearSpace, space_from_spec

__all__ = ["main", "load_scenario", "Scenario", "ConfigError", "PROFILES", "build_reference"]

CONFIG_VERSION = 1
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class ConfigError(ValueError):
    """Invalid scenario; the message names the offending field."""


# ---------------------------------------------------------------------------
# scenario loading

PROFILES = ("constant", "linear", "bump", "jacobi_calabi", "random_bump")

_TOP_KEYS = {"version", "name", "lattice", "polarization", "flux", "domain", "reference",
             "boundary_perturbation", "solver", "diagnostics", "walls", "outputs", "seed"}
_SOLVER_KEYS = {"enabled", "boundary", "max_iter", "tol_residual", "damping", "h_floor",
                "linear_tol", "max_halvings", "max_linear_iter"}
_DIAG_KEYS = {"curvature", "hessian_iterations", "scan", "wall_locus", "refine"}
_REF_PARAMS = {
    "affine": {"base", "grads"},
    "calabi": {"v", "sigma"},
    "lefschetz": {"v1", "v2", "delta", "b"},
    "file": {"path"},
}


def _check_keys(obj, allowed, where: str):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = set(obj) - set(allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")


def _need(obj, key, where):
    if key not in obj:
        raise ConfigError(f"{where}.{key}: required field missing")
    return obj[key]


def _vector(x, rank, where) -> np.ndarray:
    try:
        arr = np.asarray(x, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected a list of numbers") from None
    if arr.shape != (rank,):
        raise ConfigError(f"{where}: expected {rank} entries, got shape {arr.shape}")
    return arr


@dataclass
class Perturbation:
    profile: str
    amplitude: float
    direction: np.ndarray


@dataclass
class Scenario:
    name: str
    space: BilinearSpace
    polarization: np.ndarray
    flux: FluxClass
    grid: DomainGrid
    reference: dict
    perturbations: list[Perturbation] = field(default_factory=list)
    solver: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    walls: dict | str | None = None
    outputs: dict = field(default_factory=dict)
    seed: int = 0
    base_dir: Path = Path(".")

    @property
    def solve_enabled(self) -> bool:
        return bool(self.solver.get("enabled", False))

    def solve_options(self) -> solver.SolveOptions:
        opts = {k: v for k, v in self.solver.items() if k not in ("enabled", "boundary")}
        return solver.SolveOptions(**opts)


def load_scenario(source, base_dir=None) -> Scenario:
    """Parse and validate a scenario from a path or an already-decoded dict."""
    if isinstance(source, (str, Path)):
        path = Path(source)
        try:
            data = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        base_dir = base_dir or path.parent
    else:
        data = source
    _check_keys(data, _TOP_KEYS, "scenario")
    if data.get("version") != CONFIG_VERSION:
        raise ConfigError(f"scenario.version: expected {CONFIG_VERSION}, got {data.get('version')!r}")
    try:
        space = space_from_spec(_need(data, "lattice", "scenario"))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"scenario.lattice: {exc}") from None
    r = space.rank
    pol = _vector(_need(data, "polarization", "scenario"), r, "scenario.polarization")
    if not np.any(pol):
        raise ConfigError("scenario.polarization: must be nonzero")

    fl = _need(data, "flux", "scenario")
    _check_keys(fl, {"analytic", "chern", "h0"}, "scenario.flux")
    h0 = float(fl.get("h0", 1.0))
    try:
        if "chern" in fl:
            chern = _vector(fl["chern"], r, "scenario.flux.chern")
            if not np.array_equal(chern, np.round(chern)):
                raise ConfigError("scenario.flux.chern: entries must be integers")
            flux = FluxClass.from_chern(chern.astype(np.int64), h0)
            if "analytic" in fl and not np.allclose(_vector(fl["analytic"], r, "scenario.flux.analytic"),
                                                    flux.analytic, rtol=0, atol=1e-12):
                raise ConfigError("scenario.flux: analytic must equal 2*pi*chern")
        else:
            flux = FluxClass(_vector(fl.get("analytic", np.zeros(r)), r, "scenario.flux.analytic"), None, h0)
        flux.check_polarized(space, pol)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"scenario.flux: {exc}") from None

    dom = _need(data, "domain", "scenario")
    _check_keys(dom, {"lo", "hi", "n"}, "scenario.domain")
    try:
        grid = DomainGrid(tuple(_need(dom, "lo", "scenario.domain")), tuple(_need(dom, "hi", "scenario.domain")),
                          tuple(_need(dom, "n", "scenario.domain")))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"scenario.domain: {exc}") from None

    ref = _need(data, "reference", "scenario")
    _check_keys(ref, {"kind", "params"}, "scenario.reference")
    kind = _need(ref, "kind", "scenario.reference")
    if kind not in _REF_PARAMS:
        raise ConfigError(f"scenario.reference.kind: expected one of {sorted(_REF_PARAMS)}, got {kind!r}")
    params = ref.get("params", {})
    _check_keys(params, _REF_PARAMS[kind], "scenario.reference.params")
    missing = _REF_PARAMS[kind] - set(params)
    if missing:
        raise ConfigError(f"scenario.reference.params: missing {sorted(missing)}")

    perts = []
    for i, p in enumerate(data.get("boundary_perturbation", [])):
        where = f"scenario.boundary_perturbation[{i}]"
        _check_keys(p, {"profile", "amplitude", "direction"}, where)
        prof = _need(p, "profile", where)
        if prof not in PROFILES:
            raise ConfigError(f"{where}.profile: expected one of {list(PROFILES)}, got {prof!r}")
        direction = _vector(_need(p, "direction", where), r, f"{where}.direction")
        if abs(direction @ space.gram.astype(float) @ pol) > 1e-12:
            raise ConfigError(f"{where}.direction: not orthogonal to the polarization")
        perts.append(Perturbation(prof, float(p.get("amplitude", 1.0)), direction))

    solver_cfg = data.get("solver", {})
    _check_keys(solver_cfg, _SOLVER_KEYS, "scenario.solver")
    if solver_cfg.get("boundary", "dirichlet") not in solver.BOUNDARY_MODES:
        raise ConfigError(f"scenario.solver.boundary: expected one of {list(solver.BOUNDARY_MODES)}")
    try:
        solver.SolveOptions(**{k: v for k, v in solver_cfg.items() if k not in ("enabled", "boundary")})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"scenario.solver: {exc}") from None

    diag_cfg = data.get("diagnostics", {})
    _check_keys(diag_cfg, _DIAG_KEYS, "scenario.diagnostics")
    if "scan" in diag_cfg:
        _check_keys(diag_cfg["scan"], {"height", "tol", "expect"}, "scenario.diagnostics.scan")
        if diag_cfg["scan"].get("expect", "clean") not in ("clean", "hits"):
            raise ConfigError("scenario.diagnostics.scan.expect: expected 'clean' or 'hits'")
    if "wall_locus" in diag_cfg:
        _check_keys(diag_cfg["wall_locus"], {"sigma", "level"}, "scenario.diagnostics.wall_locus")
        _vector(_need(diag_cfg["wall_locus"], "sigma", "scenario.diagnostics.wall_locus"), r,
                "scenario.diagnostics.wall_locus.sigma")

    outputs = data.get("outputs", {})
    _check_keys(outputs, {"fields_csv", "report_json", "plot_script"}, "scenario.outputs")
    seed = data.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("scenario.seed: expected an integer")
    return Scenario(str(data.get("name", "scenario")), space, pol, flux, grid, ref, perts, solver_cfg,
                    diag_cfg, data.get("walls"), outputs, seed, Path(base_dir or "."))


# ---------------------------------------------------------------------------
# building sections

def _unit_coords(grid: DomainGrid):
    return [(c - lo) / (hi - lo) for c, lo, hi in zip(grid.coords(), grid.lo, grid.hi)]


def _profile(name: str, grid: DomainGrid, rng: np.random.Generator) -> np.ndarray:
    coords = grid.coords()
    unit = _unit_coords(grid)
    if name == "constant":
        return np.ones(grid.n)
    if name == "linear":
        return coords[0]
    if name == "bump":
        return np.prod([np.sin(np.pi * t) for t in unit], axis=0)
    if name == "jacobi_calabi":
        if grid.dim != 2:
            raise ConfigError("profile jacobi_calabi needs a 2-dimensional domain")
        tau, mu = coords
        # solves mu^2 u_tt + u_mm = 0, the linearised equation for normal graphs over the Calabi section
        return (tau ** 2 - mu ** 4 / 6) / 3
    if name == "random_bump":
        out = np.zeros(grid.n)
        for modes in np.ndindex(*(3,) * grid.dim):
            term = rng.normal() / (1 + sum(modes)) ** 2
            for t, k in zip(unit, modes):
                term = term * np.sin((k + 1) * np.pi * t)
            out = out + term
        return out
    raise ConfigError(f"unknown profile {name!r}")


def _read_fields_csv(path: Path, grid: DomainGrid, rank: int) -> np.ndarray:
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    expected = int(np.prod(grid.n))
    if len(rows) != expected:
        raise ConfigError(f"{path}: expected {expected} rows, found {len(rows)}")
    try:
        vals = np.array([[float(row[f"H{j}"]) for j in range(rank)] for row in rows])
    except KeyError as exc:
        raise ConfigError(f"{path}: missing column {exc}") from None
    return vals.reshape(*grid.n, rank)


def build_reference(sc: Scenario) -> Section:
    kind = sc.reference["kind"]
    p = sc.reference.get("params", {})
    r = sc.space.rank
    where = "scenario.reference.params"
    try:
        if kind == "affine":
            grads = np.asarray(p["grads"], dtype=float)
            section = solver.affine_section(sc.grid, sc.space, sc.polarization,
                                            _vector(p["base"], r, f"{where}.base"), grads)
        elif kind == "calabi":
            section = solver.calabi_section(sc.grid, sc.space, sc.polarization,
                                            _vector(p["v"], r, f"{where}.v"), _vector(p["sigma"], r, f"{where}.sigma"))
        elif kind == "lefschetz":
            b = p["b"]
            b = complex(*b) if isinstance(b, (list, tuple)) else complex(b)
            section = solver.lefschetz_local_section(
                sc.grid, sc.space, sc.polarization, _vector(p["v1"], r, f"{where}.v1"),
                _vector(p["v2"], r, f"{where}.v2"), _vector(p["delta"], r, f"{where}.delta"), b)
        else:
            path = Path(p["path"])
            if not path.is_absolute():
                path = sc.base_dir / path
            section = Section(sc.grid, sc.space, sc.polarization, _read_fields_csv(path, sc.grid, r))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"scenario.reference ({kind}): {exc}") from None
    if sc.perturbations:
        rng = np.random.default_rng(sc.seed)
        values = section.values.copy()
        for pert in sc.perturbations:
            values += pert.amplitude * _profile(pert.profile, sc.grid, rng)[..., None] * pert.direction
        section = section.with_values(values)
    return section


# ---------------------------------------------------------------------------
# output helpers

def _clean(obj):
    """JSON-ready copy with floats rounded to 12 significant digits."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return None
        return float(f"{x:.12g}")
    return obj


def dumps_report(report: dict) -> str:
    return json.dumps(_clean(report), sort_keys=True, indent=2) + "\n"


def _emit(report: dict, path: str | None):
    text = dumps_report(report)
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _write_fields_csv(path, section: Section, flux: FluxClass, res: np.ndarray | None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    d, r = section.dim, section.space.rank
    coords = [c.ravel() for c in section.grid.coords()]
    vals = section.values.reshape(-1, r)
    h = np.asarray(functional.weight_h(section.space, flux.analytic, section.values, flux.h0)).ravel()
    det = np.linalg.det(functional.pairing_gram(section.space, section.node_grads())).ravel()
    rn = np.zeros(len(h)) if res is None else np.abs(res).max(axis=-1).ravel()
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"y{k}" for k in range(d)] + [f"H{j}" for j in range(r)] + ["h", "det_gt", "residual_norm"])
        for i in range(len(h)):
            row = [c[i] for c in coords] + list(vals[i]) + [h[i], det[i], rn[i]]
            w.writerow([f"{x:.12g}" for x in row])


# ---------------------------------------------------------------------------
# pipelines

def _residual_summary(section: Section, flux: FluxClass) -> tuple[dict, np.ndarray | None]:
    try:
        res = functional.residual(section, flux)
    except functional.DegenerateSectionError as exc:
        return {"skipped": str(exc)}, None
    return {
        "raw_inf": res.raw_inf,
        "projected_inf": res.projected_inf,
        "rhs_scale": res.rhs_scale,
        "area": functional.weighted_area(section, flux),
    }, res.raw


def _solve(sc: Scenario, ref: Section):
    boundary = sc.solver.get("boundary", "dirichlet")
    return solver.solve_dirichlet(ref, sc.flux, sc.solve_options(), boundary=boundary)


def _curvature(sc: Scenario, section: Section) -> tuple[dict, bool]:
    rep = diagnostics.curvature_report(section, sc.flux)
    summary = rep.summary()
    summary["gauss_check_max"] = float(diagnostics.gauss_check(section, sc.flux).max())
    ok = bool(np.all(rep.min_eig >= -1e-8 * np.maximum(rep.scale, 1e-300)))
    summary["psd_ok"] = ok
    return summary, ok


def _scan(sc: Scenario, section: Section, height: int, tol: float, expect: str) -> tuple[dict, bool]:
    res = diagnostics.excess_class_scan(section, sc.flux, sc.polarization, height, tol_scan=tol)
    nodes = int(np.prod(section.grid.n))
    by_class = {}
    for _, c in res.hits:
        by_class[c] = by_class.get(c, 0) + 1
    out = {
        "height": height,
        "tol": tol,
        "candidates": len(res.candidates),
        "hit_count": len(res.hits),
        "near_miss_count": len(res.near_misses),
        "hit_classes": [{"class": list(c), "nodes": n, "fraction": n / nodes} for c, n in sorted(by_class.items())],
        "expect": expect,
    }
    ok = res.clean if expect == "clean" else bool(res.hits)
    out["ok"] = ok
    return out, ok


def _walls_report(spec, base_dir: Path) -> tuple[dict, bool]:
    if isinstance(spec, str):
        path = Path(spec)
        cx = walls.load_complex(path if path.is_absolute() else base_dir / path)
    else:
        cx = walls.complex_from_dict(spec)
    rep = walls.validate_complex(cx)
    return rep.to_dict(), rep.ok


def convergence_table(sc: Scenario, levels: int) -> list[dict]:
    """Strong residual on the scenario grid and ``levels`` successive halvings of the step."""
    rows = []
    for level in range(levels + 1):
        grid = sc.grid if level == 0 else sc.grid.refined(2 ** level)
        section = build_reference(_with_grid(sc, grid))
        res = functional.residual(section, sc.flux)
        rows.append({"n": list(grid.n), "step": max(grid.steps), "raw_inf": res.raw_inf,
                     "projected_inf": res.projected_inf})
    for a, b in zip(rows, rows[1:]):
        b["ratio"] = a["raw_inf"] / b["raw_inf"] if b["raw_inf"] > 0 else None
    return rows


def _with_grid(sc: Scenario, grid: DomainGrid) -> Scenario:
    return dataclasses.replace(sc, grid=grid)


def run_scenario(sc: Scenario) -> tuple[dict, bool]:
    report: dict = {"scenario": sc.name, "seed": sc.seed, "grid": {"lo": sc.grid.lo, "hi": sc.grid.hi, "n": sc.grid.n}}
    checks = {}
    ref = build_reference(sc)
    section = ref
    if sc.solve_enabled:
        section, srep = _solve(sc, ref)
        report["solve"] = srep.to_dict()
        checks["solve_converged"] = srep.converged
    res_summary, raw = _residual_summary(section, sc.flux)
    report["residual"] = res_summary
    diag = sc.diagnostics
    if diag.get("curvature"):
        report["curvature"], checks["bakry_emery_psd"] = _curvature(sc, section)
    if diag.get("hessian_iterations"):
        ext = functional.hessian_extreme(section, sc.flux, int(diag["hessian_iterations"]))
        report["hessian_extreme"] = {"value": ext.value, "residual": ext.residual, "iterations": ext.iterations}
        checks["hessian_negative"] = ext.value < 0
    if "scan" in diag:
        s = diag["scan"]
        report["scan"], checks["scan"] = _scan(sc, section, int(s.get("height", 1)),
                                               float(s.get("tol", diagnostics.TOL_SCAN)), s.get("expect", "clean"))
    if diag.get("refine"):
        report["convergence"] = convergence_table(sc, int(diag["refine"]))
    if "wall_locus" in diag:
        wl = diagnostics.wall_locus_eval(section, diag["wall_locus"]["sigma"], float(diag["wall_locus"].get("level", 0.0)))
        report["wall_locus"] = {"level": wl.level, "crossing_cells": len(wl.crossing_cells),
                                "field_min": float(wl.field.min()), "field_max": float(wl.field.max())}
    if sc.walls is not None:
        report["walls"], checks["walls"] = _walls_report(sc.walls, sc.base_dir)
    report["checks"] = checks
    ok = all(checks.values())
    report["pass"] = ok
    if sc.outputs.get("fields_csv"):
        _write_fields_csv(sc.base_dir / sc.outputs["fields_csv"], section, sc.flux, raw)
    return report, ok


def _random_section(rng: np.random.Generator, n: int, dim: int):
    """Well-conditioned random polarized positive section in diag(1,1,-1,-1) (d=2) or
    diag(1,1,1,-1,-1) (d=3), polarization the last basis vector."""
    if dim == 2:
        space = space_from_spec("diag(1,1,-1,-1)")
    else:
        space = space_from_spec("diag(1,1,1,-1,-1)")
    r = space.rank
    pol = np.zeros(r)
    pol[-1] = 1.0
    grid = DomainGrid((0.0,) * dim, (1.0,) * dim, (n,) * dim)
    coords = grid.coords()
    grads = np.zeros((dim, r))
    grads[:, :dim] = np.eye(dim) + 0.1 * rng.uniform(-1, 1, (dim, dim))
    grads[:, dim] = 0.2 * rng.uniform(-1, 1, dim)
    base = np.zeros(r)
    base[:dim] = 1.5 + 0.5 * rng.uniform(size=dim)
    base[dim] = 0.3 * rng.uniform(-1, 1)
    values = base + sum(c[..., None] * g for c, g in zip(coords, grads))
    wiggle = np.zeros(r)
    wiggle[: dim + 1] = rng.uniform(-1, 1, dim + 1)
    phase = rng.uniform(0, 2 * np.pi, dim)
    freq = rng.uniform(1, 3, dim)
    values = values + 0.02 * np.prod([np.sin(f * c + ph) for f, c, ph in zip(freq, coords, phase)], axis=0)[..., None] * wiggle
    flux_vec = np.zeros(r)
    flux_vec[:dim] = 0.2 + 0.2 * rng.uniform(size=dim)
    flux_vec[dim] = 0.1 * rng.uniform(-1, 1)
    section = Section(grid, space, pol, values)
    f = np.zeros_like(values)
    f[grid.interior] = rng.normal(size=(*[k - 2 for k in grid.n], r))
    f[..., -1] = 0.0
    f /= np.abs(f).max()
    return section, FluxClass(flux_vec), f


def gradient_check(seed: int, count: int = 20, n: int = 9, dim: int = 2, s: float = 1e-4) -> dict:
    rng = np.random.default_rng(seed)
    errors = []
    for _ in range(count):
        section, flux, f = _random_section(rng, n, dim)
        exact = functional.weak_first_variation(section, flux, f)
        fd = functional.fd_first_variation(section, flux, f, s)
        errors.append(abs(exact - fd) / max(1.0, abs(fd)))
    return {"count": count, "n": n, "dim": dim, "fd_step": s, "max_relative_error": max(errors),
            "errors": errors, "pass": max(errors) <= 1e-5}


def hessian_check(seed: int, count: int = 10, n: int = 9, dim: int = 2, s: float = 1e-3) -> dict:
    rng = np.random.default_rng(seed)
    errors = []
    for _ in range(count):
        section, flux, f = _random_section(rng, n, dim)
        inner = section.grid.interior
        frame = functional.normal_frame(section.space, section.node_grads()[inner], section.polarization)
        N = np.zeros_like(f)
        N[inner] = np.einsum("...a,...ar->...r", rng.normal(size=frame.shape[:-1]), frame)
        N /= np.abs(N).max()
        exact = functional.hessian_quadratic(section, flux, N)
        fd = functional.fd_second_variation(section, flux, N, s)
        errors.append(abs(exact - fd) / max(1.0, abs(fd)))
    return {"count": count, "n": n, "dim": dim, "fd_step": s, "max_relative_error": max(errors),
            "errors": errors, "pass": max(errors) <= 1e-4}


# ---------------------------------------------------------------------------
# argument parsing

def _scenario_arg(args) -> Scenario:
    if not args.scenario:
        raise ConfigError("--scenario is required for this command")
    sc = load_scenario(args.scenario)
    if getattr(args, "dim", None) and args.dim != sc.grid.dim:
        raise ConfigError(f"--dim {args.dim} conflicts with the scenario's {sc.grid.dim}-dimensional domain")
    if getattr(args, "seed", None) is not None:
        sc.seed = args.seed
    return sc


def cmd_run(args) -> int:
    sc = _scenario_arg(args)
    report, ok = run_scenario(sc)
    out = args.out or (str(sc.base_dir / sc.outputs["report_json"]) if sc.outputs.get("report_json") else None)
    _emit(report, out)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_solve(args) -> int:
    sc = _scenario_arg(args)
    ref = build_reference(sc)
    section, rep = _solve(sc, ref)
    report = {"scenario": sc.name, "solve": rep.to_dict()}
    report["residual"], raw = _residual_summary(section, sc.flux)
    if args.fields:
        _write_fields_csv(args.fields, section, sc.flux, raw)
    _emit(report, args.out)
    return EXIT_OK if rep.converged else EXIT_FAIL


def cmd_residual(args) -> int:
    if args.scenario:
        sc = _scenario_arg(args)
    else:
        dim = args.dim or 2
        if dim == 2:
            base = {"lattice": "diag(1,1,-1,-1)", "polarization": [0, 0, 0, 1],
                    "flux": {"analytic": [0, 1, 0, 0]},
                    "domain": {"lo": [0, 1], "hi": [1, 2], "n": [17, 17]},
                    "reference": {"kind": "calabi", "params": {"v": [1, 0, 0, 0], "sigma": [0, 1, 0, 0]}}}
        else:
            base = {"lattice": "diag(1,1,1,-1,-1)", "polarization": [0, 0, 0, 0, 1],
                    "flux": {"analytic": [0, 0, 0, 0, 0]},
                    "domain": {"lo": [0, 0, 0], "hi": [1, 1, 1], "n": [9, 9, 9]},
                    "reference": {"kind": "affine", "params": {
                        "base": [1, 1, 1, 0, 0],
                        "grads": [[1, 0, 0, 0, 0], [0, 1, 0, 0, 0], [0, 0, 1, 0, 0]]}}}
        sc = load_scenario({"version": 1, "name": "calabi" if dim == 2 else "affine-3d", **base})
    rows = convergence_table(sc, args.refine)
    _emit({"scenario": sc.name, "table": rows}, args.out)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    report = gradient_check(args.seed or 0, args.count, args.n, args.dim or 2)
    _emit(report, args.out)
    return EXIT_OK if report["pass"] else EXIT_FAIL


def cmd_hesscheck(args) -> int:
    report = {"fd": hessian_check(args.seed or 0, args.count, args.n, args.dim or 2)}
    ok = report["fd"]["pass"]
    if args.scenario:
        sc = _scenario_arg(args)
        section = build_reference(sc)
        if sc.solve_enabled:
            section, srep = _solve(sc, section)
            report["solve_converged"] = srep.converged
            ok = ok and srep.converged
        ext = functional.hessian_extreme(section, sc.flux, args.iterations)
        report["extreme"] = {"value": ext.value, "residual": ext.residual, "iterations": ext.iterations,
                             "history": ext.history}
        ok = ok and ext.value < 0
    report["pass"] = ok
    _emit(report, args.out)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_ricci(args) -> int:
    sc = _scenario_arg(args)
    section = build_reference(sc)
    report = {"scenario": sc.name}
    if sc.solve_enabled:
        section, srep = _solve(sc, section)
        report["solve"] = srep.to_dict()
    report["curvature"], ok = _curvature(sc, section)
    _emit(report, args.out)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_scan(args) -> int:
    sc = _scenario_arg(args)
    section = build_reference(sc)
    if sc.solve_enabled:
        section, _ = _solve(sc, section)
    cfg = sc.diagnostics.get("scan", {})
    height = args.height if args.height is not None else int(cfg.get("height", 1))
    report, ok = _scan(sc, section, height, float(cfg.get("tol", diagnostics.TOL_SCAN)), cfg.get("expect", "clean"))
    _emit({"scenario": sc.name, "scan": report}, args.out)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_check_walls(args) -> int:
    path = Path(args.complex)
    try:
        report, ok = _walls_report(str(path.resolve()), path.parent)
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    _emit(report, args.out)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_gh_profile(args) -> int:
    params = gh.GHParams(args.family, args.A, args.index)
    neck = gh.NeckParams(args.epsilon, args.h0, args.multiplicity)
    radii = np.linspace(args.rmin, args.rmax, args.count)
    rows = gh.gh_profile(params, neck, radii)
    lines = ["r,h,psi_coeff,hbar"] + [",".join(f"{x:.12g}" for x in row) for row in rows]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if args.plot_script:
        data = args.out or "profile.csv"
        Path(args.plot_script).write_text(
            "set datafile separator ','\nset key autotitle columnhead\nset xlabel 'r'\n"
            f"plot '{data}' using 1:2 with lines, '' using 1:3 with lines, '' using 1:4 with lines\n")
    check = gh.gh_harmonicity_check(params, args.spacing, ((1, 1, 1), (2, 2, 2)))
    sys.stderr.write(f"harmonicity max|lap h| = {check.max_abs:.3e} (bound {check.bound:.3e})\n")
    return EXIT_OK if check.max_abs <= max(check.bound, 1e-12) else EXIT_FAIL


def cmd_lefschetz(args) -> int:
    sc = _scenario_arg(args)
    if sc.reference["kind"] != "lefschetz":
        raise ConfigError("scenario.reference.kind: lefschetz-model needs a lefschetz reference")
    section = build_reference(sc)
    delta = np.asarray(sc.reference["params"]["delta"], dtype=float)
    pairing = section.values @ sc.space.gram.astype(float) @ delta
    origin = tuple(int(np.argmin(np.abs(ax))) for ax in sc.grid.axes)
    report = {
        "scenario": sc.name,
        "equivariant": True,
        "value_at_origin_inf": float(np.abs(section.values[origin]).max()),
        "delta_pairing_range": [float(pairing.min()), float(pairing.max())],
        "node_status_counts": {str(k): int(v) for k, v in zip(*np.unique(functional.node_status(section, sc.flux), return_counts=True))},
    }
    _emit(report, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wmaxlab", description="Weighted maximal section toolkit")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", help="scenario JSON file")
    common.add_argument("--dim", type=int, choices=(2, 3), help="base dimension")
    common.add_argument("--seed", type=int, help="seed for randomized checks")
    common.add_argument("--out", help="report path (default stdout)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="run a full scenario pipeline")
    p.add_argument("config", nargs="?", help="scenario JSON file (alternative to --scenario)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("solve", parents=[common], help="Dirichlet solve of a scenario")
    p.add_argument("--fields", help="write the solved section as CSV")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("residual", parents=[common], help="strong residual under grid refinement")
    p.add_argument("--refine", type=int, default=2, help="number of halvings of the step")
    p.set_defaults(func=cmd_residual)

    for name, func, count in (("gradcheck", cmd_gradcheck, 20), ("hesscheck", cmd_hesscheck, 10)):
        p = sub.add_parser(name, parents=[common], help=f"finite-difference {name[:-5]} check on random sections")
        p.add_argument("--count", type=int, default=count)
        p.add_argument("--n", type=int, default=9, help="nodes per axis")
        if name == "hesscheck":
            p.add_argument("--iterations", type=int, default=50)
        p.set_defaults(func=func)

    p = sub.add_parser("ricci", parents=[common], help="curvature and Bakry-Emery report")
    p.set_defaults(func=cmd_ricci)

    p = sub.add_parser("scan-classes", parents=[common], help="scan for excess norm -2 classes")
    p.add_argument("--height", type=int)
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("check-walls", parents=[common], help="validate a chamber complex")
    p.add_argument("complex", help="chamber complex JSON file")
    p.set_defaults(func=cmd_check_walls)

    p = sub.add_parser("gh-profile", parents=[common], help="Gibbons-Hawking and neck profiles as CSV")
    p.add_argument("--family", default="A")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--A", type=float, default=1.0)
    p.add_argument("--epsilon", type=float, default=1e-2)
    p.add_argument("--h0", type=float, default=1.0)
    p.add_argument("--multiplicity", type=int, default=1)
    p.add_argument("--rmin", type=float, default=0.1)
    p.add_argument("--rmax", type=float, default=5.0)
    p.add_argument("--count", type=int, default=50)
    p.add_argument("--spacing", type=float, default=0.05)
    p.add_argument("--plot-script", help="also write a gnuplot script")
    p.set_defaults(func=cmd_gh_profile)

    p = sub.add_parser("lefschetz-model", parents=[common], help="build and check the Lefschetz local model")
    p.set_defaults(func=cmd_lefschetz)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None) and not args.scenario:
        args.scenario = args.config
    try:
        return args.func(args)
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_USAGE
    except NotImplementedError as exc:
        sys.stderr.write(f"not implemented: {exc}\n")
        return EXIT_USAGE
    except (ValueError, ArithmeticError) as exc:
        sys.stderr.write(f"{args.command}: {type(exc).__name__}: {exc}\n")
        return EXIT_FAIL


if __name__ == "__main__":
    raise SystemExit(main())
