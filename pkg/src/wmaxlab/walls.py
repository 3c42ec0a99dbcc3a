"""Chamber complexes: flux jumps across walls, orientifold boundary flux and
charge conservation.

Everything here works with integer Chern vectors c = [d theta] / 2 pi.

Orientation conventions (fixed here, used throughout):

* a wall is oriented so that its left chamber lies on its left; its cycle
  class enters the boundary of the left chamber with sign +1 and that of the
  right chamber with sign -1;
* across a wall the Chern vector jumps by ``sigma = chern(right) - chern(left)``;
* a boundary circle's cycle class is oriented as part of the boundary of its
  adjacent chamber.

Cycle classes are integer coefficient vectors in a chosen basis of 1-cycles
(a bare integer is read as a length-1 vector).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .functional import Section
from .lattice import BilinearSpace, rational_nullspace, space_from_spec
from .pointjet import pairing_gram

__all__ = [
    "Chamber",
    "Wall",
    "BoundaryComponent",
    "BoundaryCircle",
    "ChamberComplex",
    "MalformedComplexError",
    "JumpReport",
    "ChargeCertificate",
    "ComplexReport",
    "validate_flux_jumps",
    "orientifold_flux",
    "charge_conservation",
    "validate_complex",
    "involution_split",
    "boundary_section_check",
    "BoundaryCheck",
    "complex_from_dict",
    "complex_to_dict",
    "load_complex",
]

SIDES = {"-": -1, "mu<0": -1, "negative": -1, "+": 1, "mu>0": 1, "positive": 1}


class MalformedComplexError(ValueError):
    """Adjacency data that does not describe a chamber decomposition."""


def _ivec(x) -> tuple[int, ...]:
    arr = np.atleast_1d(np.asarray(x))
    if arr.ndim != 1:
        raise ValueError(f"expected an integer vector, got shape {arr.shape}")
    out = tuple(int(v) for v in arr)
    if not np.array_equal(np.asarray(out), arr):
        raise ValueError(f"expected integer entries, got {x!r}")
    return out


@dataclass(frozen=True)
class Chamber:
    id: str
    chern: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "chern", _ivec(self.chern))


@dataclass(frozen=True)
class Wall:
    id: str
    sigma: tuple[int, ...]
    left: str
    right: str
    cycle_class: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "sigma", _ivec(self.sigma))
        object.__setattr__(self, "cycle_class", _ivec(self.cycle_class))


@dataclass(frozen=True)
class BoundaryComponent:
    c_class: tuple[int, ...]
    m: int

    def __post_init__(self):
        object.__setattr__(self, "c_class", _ivec(self.c_class))
        if int(self.m) != self.m or self.m < 0:
            raise ValueError(f"multiplicity must be a non-negative integer, got {self.m!r}")
        object.__setattr__(self, "m", int(self.m))


@dataclass(frozen=True)
class BoundaryCircle:
    id: str
    adjacent: str
    components: tuple[BoundaryComponent, ...]
    cycle_class: tuple[int, ...]
    side: str = "+"

    def __post_init__(self):
        comps = tuple(c if isinstance(c, BoundaryComponent) else BoundaryComponent(*c) for c in self.components)
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "cycle_class", _ivec(self.cycle_class))
        if self.side not in SIDES:
            raise ValueError(f"unknown side {self.side!r}; use '+' (mu > 0) or '-' (mu < 0)")


@dataclass
class ChamberComplex:
    space: BilinearSpace
    polarization: tuple[int, ...]
    chambers: list[Chamber] = field(default_factory=list)
    walls: list[Wall] = field(default_factory=list)
    boundaries: list[BoundaryCircle] = field(default_factory=list)

    def __post_init__(self):
        self.polarization = _ivec(self.polarization)
        r = self.space.rank
        if len(self.polarization) != r:
            raise ValueError(f"polarization must have length {r}")
        for ch in self.chambers:
            if len(ch.chern) != r:
                raise ValueError(f"chamber {ch.id}: chern vector must have length {r}")
        G = self.space.gram
        for w in self.walls:
            if len(w.sigma) != r:
                raise ValueError(f"wall {w.id}: sigma must have length {r}")
            if int(np.asarray(w.sigma) @ G @ np.asarray(self.polarization)) != 0:
                raise ValueError(f"wall {w.id}: sigma is not orthogonal to the polarization")
        for b in self.boundaries:
            for comp in b.components:
                if len(comp.c_class) != r:
                    raise ValueError(f"boundary {b.id}: component class must have length {r}")
        lengths = {len(w.cycle_class) for w in self.walls} | {len(b.cycle_class) for b in self.boundaries}
        if len(lengths) > 1:
            raise ValueError(f"cycle classes have inconsistent lengths {sorted(lengths)}")
        ids = [c.id for c in self.chambers] + [w.id for w in self.walls] + [b.id for b in self.boundaries]
        dup = {i for i in ids if ids.count(i) > 1}
        if dup:
            raise ValueError(f"duplicate ids: {sorted(dup)}")

    @property
    def n_cycles(self) -> int:
        for item in (*self.walls, *self.boundaries):
            return len(item.cycle_class)
        return 0

    def chamber(self, cid: str) -> Chamber:
        for c in self.chambers:
            if c.id == cid:
                return c
        raise MalformedComplexError(f"no chamber with id {cid!r}")

    def adjacency_errors(self) -> list[str]:
        ids = {c.id for c in self.chambers}
        errs = []
        for w in self.walls:
            if w.left not in ids:
                errs.append(f"wall {w.id}: unknown left chamber {w.left!r}")
            if w.right not in ids:
                errs.append(f"wall {w.id}: unknown right chamber {w.right!r}")
            if w.left == w.right:
                errs.append(f"wall {w.id}: left and right chamber coincide")
        for b in self.boundaries:
            if b.adjacent not in ids:
                errs.append(f"boundary {b.id}: unknown adjacent chamber {b.adjacent!r}")
        return errs

    def with_cycle_basis(self, change) -> "ChamberComplex":
        """Re-express every cycle class through an integer change-of-basis matrix."""
        change = np.asarray(change, dtype=np.int64)
        walls = [Wall(w.id, w.sigma, w.left, w.right, change @ np.asarray(w.cycle_class)) for w in self.walls]
        bounds = [BoundaryCircle(b.id, b.adjacent, b.components, change @ np.asarray(b.cycle_class), b.side)
                  for b in self.boundaries]
        return ChamberComplex(self.space, self.polarization, list(self.chambers), walls, bounds)


# ---------------------------------------------------------------------------
# validation

@dataclass
class JumpReport:
    ok: bool
    violations: list[dict] = field(default_factory=list)


def validate_flux_jumps(cx: ChamberComplex) -> JumpReport:
    """Check chern(right) - chern(left) == sigma on every wall."""
    ids = {c.id: c for c in cx.chambers}
    out = []
    for w in cx.walls:
        if w.left not in ids or w.right not in ids or w.left == w.right:
            out.append({"wall": w.id, "reason": "bad adjacency"})
            continue
        jump = np.asarray(ids[w.right].chern) - np.asarray(ids[w.left].chern)
        if not np.array_equal(jump, w.sigma):
            out.append({"wall": w.id, "left": w.left, "right": w.right,
                        "jump": [int(x) for x in jump], "sigma": list(w.sigma)})
    return JumpReport(not out, out)


def orientifold_flux(components, side: str = "+", rank: int | None = None) -> np.ndarray:
    """Boundary Chern vector: sum (2 - m_i) c_i for mu < 0, sum (m_i - 2) c_i for mu > 0."""
    if side not in SIDES:
        raise ValueError(f"unknown side {side!r}")
    sign = SIDES[side]
    comps = [c if isinstance(c, BoundaryComponent) else BoundaryComponent(*c) for c in components]
    if not comps:
        if rank is None:
            raise ValueError("rank is required when there are no components")
        return np.zeros(rank, dtype=np.int64)
    total = np.zeros(len(comps[0].c_class), dtype=np.int64)
    for c in comps:
        total += sign * (c.m - 2) * np.asarray(c.c_class, dtype=np.int64)
    return total


def _boundary_flux(cx: ChamberComplex, b: BoundaryCircle) -> np.ndarray:
    return orientifold_flux(b.components, b.side, rank=cx.space.rank)


@dataclass
class ChargeCertificate:
    """Nonzero lattice-valued combination of 1-cycles, rows = lattice coefficients."""

    combination: np.ndarray
    boundary_mismatches: list[str] = field(default_factory=list)
    wall_mismatches: list[str] = field(default_factory=list)
    open_chambers: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "combination": self.combination.tolist(),
            "boundary_mismatches": self.boundary_mismatches,
            "wall_mismatches": self.wall_mismatches,
            "open_chambers": self.open_chambers,
        }


def _charge_combination(cx: ChamberComplex) -> np.ndarray:
    r, k = cx.space.rank, cx.n_cycles
    total = np.zeros((r, k), dtype=np.int64)
    for b in cx.boundaries:
        total += np.outer(_boundary_flux(cx, b), b.cycle_class)
    for w in cx.walls:
        total -= np.outer(w.sigma, w.cycle_class)
    return total


def charge_conservation(cx: ChamberComplex) -> tuple[bool, ChargeCertificate | None]:
    """Sum of boundary flux cycles minus wall sigma cycles must vanish.

    For a consistent complex this is the boundary of sum_i chern_i S_i: wall
    terms enter as (chern_left - chern_right) [wall] = -sigma [wall].
    """
    errs = cx.adjacency_errors()
    if errs:
        raise MalformedComplexError("; ".join(errs))
    comb = _charge_combination(cx)
    if not np.any(comb):
        return True, None
    cert = ChargeCertificate(comb)
    for b in cx.boundaries:
        if not np.array_equal(_boundary_flux(cx, b), cx.chamber(b.adjacent).chern):
            cert.boundary_mismatches.append(b.id)
    for w in cx.walls:
        jump = np.asarray(cx.chamber(w.right).chern) - np.asarray(cx.chamber(w.left).chern)
        if not np.array_equal(jump, w.sigma):
            cert.wall_mismatches.append(w.id)
    cert.open_chambers = _open_chambers(cx)
    return False, cert


def _open_chambers(cx: ChamberComplex) -> list[str]:
    """Chambers whose boundary cycle (walls and circles) is not zero in the cycle basis."""
    k = cx.n_cycles
    acc = {c.id: np.zeros(k, dtype=np.int64) for c in cx.chambers}
    for w in cx.walls:
        acc[w.left] += w.cycle_class
        acc[w.right] -= w.cycle_class
    for b in cx.boundaries:
        acc[b.adjacent] += b.cycle_class
    return [cid for cid, v in acc.items() if np.any(v)]


@dataclass
class ComplexReport:
    ok: bool
    jumps: JumpReport
    charge_ok: bool
    certificate: ChargeCertificate | None
    boundary_mismatches: list[str]
    open_chambers: list[str]
    suspects: list[str]

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "flux_jumps_ok": self.jumps.ok,
            "flux_jump_violations": self.jumps.violations,
            "charge_conservation_ok": self.charge_ok,
            "certificate": None if self.certificate is None else self.certificate.to_dict(),
            "boundary_mismatches": self.boundary_mismatches,
            "open_chambers": self.open_chambers,
            "suspects": self.suspects,
        }


def validate_complex(cx: ChamberComplex) -> ComplexReport:
    """All consistency checks at once, with the ids of the objects involved.

    Beyond jumps and charge conservation this compares each boundary's
    orientifold flux with its chamber and checks that every chamber's
    boundary cycle closes up, so that any single-entry change is caught.
    """
    jumps = validate_flux_jumps(cx)
    charge_ok, cert = charge_conservation(cx)
    mism = [b.id for b in cx.boundaries
            if not np.array_equal(_boundary_flux(cx, b), cx.chamber(b.adjacent).chern)]
    open_ch = _open_chambers(cx)
    suspects = set(mism) | set(open_ch)
    for v in jumps.violations:
        suspects.add(v["wall"])
        suspects.update(x for x in (v.get("left"), v.get("right")) if x)
    for bid in mism:
        suspects.add(next(b.adjacent for b in cx.boundaries if b.id == bid))
    for cid in open_ch:
        suspects.update(w.id for w in cx.walls if cid in (w.left, w.right))
        suspects.update(b.id for b in cx.boundaries if b.adjacent == cid)
    ok = jumps.ok and charge_ok and not mism and not open_ch
    return ComplexReport(ok, jumps, charge_ok, cert, mism, open_ch, sorted(suspects))


# ---------------------------------------------------------------------------
# involutions and the boundary condition

def involution_split(space: BilinearSpace, involution) -> tuple[np.ndarray, np.ndarray]:
    """Integer bases (rows) of the +1 and -1 eigenspaces of an involutive isometry."""
    M = np.asarray(involution)
    r = space.rank
    if M.shape != (r, r) or not np.array_equal(M, np.round(M)):
        raise ValueError(f"involution must be an integer {r}x{r} matrix")
    M = M.astype(np.int64)
    if not np.array_equal(M @ M, np.eye(r, dtype=np.int64)):
        raise ValueError("matrix does not square to the identity")
    G = space.gram
    if not np.array_equal(M.T @ G @ M, G):
        raise ValueError("matrix is not an isometry of the pairing")
    eye = np.eye(r, dtype=np.int64)
    plus = np.array(rational_nullspace(M - eye), dtype=np.int64).reshape(-1, r)
    minus = np.array(rational_nullspace(M + eye), dtype=np.int64).reshape(-1, r)
    if np.any(plus @ G @ minus.T):
        raise ValueError("eigenspaces are not orthogonal")
    return plus, minus


@dataclass
class BoundaryCheck:
    tangential_plus: float   # sup of the +1 part of the tangential derivative
    normal_minus: float      # sup of the -1 part of the gt-normal derivative

    @property
    def ok(self) -> bool:
        return self.tangential_plus == 0 and self.normal_minus == 0

    def within(self, tol: float) -> bool:
        return self.tangential_plus <= tol and self.normal_minus <= tol


def _edge_index(section: Section, edge) -> tuple[int, int]:
    axis, end = edge
    axis = int(axis)
    if not 0 <= axis < section.dim or end not in ("lo", "hi"):
        raise ValueError(f"edge must be (axis, 'lo'|'hi'), got {edge!r}")
    return axis, 0 if end == "lo" else section.grid.n[axis] - 1


def boundary_section_check(section: Section, minus_basis, plus_basis, edge) -> BoundaryCheck:
    """Sup-norms of the eigenspace components that admissible data must not have.

    Tangential derivatives along the face should lie in the -1 eigenspace and
    the gt-normal derivative in the +1 eigenspace. ``edge`` is ``(axis, 'lo'|'hi')``.
    """
    r = section.space.rank
    plus = np.asarray(plus_basis, dtype=float).reshape(-1, r)
    minus = np.asarray(minus_basis, dtype=float).reshape(-1, r)
    basis = np.concatenate([plus, minus])
    if basis.shape[0] != r or np.linalg.matrix_rank(basis) != r:
        raise ValueError("plus and minus bases must together form a basis of the space")
    axis, pos = _edge_index(section, edge)
    grads = np.take(section.node_grads(), pos, axis=axis)         # (*face, d, r)
    gt = pairing_gram(section.space, grads)
    gi = np.linalg.inv(gt)
    normal = np.einsum("...j,...jr->...r", gi[..., axis, :], grads) / np.sqrt(gi[..., axis, axis])[..., None]
    tangential = np.delete(grads, axis, axis=-2)                    # (*face, d-1, r)

    def split(x):
        coef = np.linalg.solve(basis.T, np.moveaxis(x, -1, 0).reshape(r, -1)).T
        p = coef[:, :plus.shape[0]] @ plus
        m = coef[:, plus.shape[0]:] @ minus
        return p.reshape(x.shape), m.reshape(x.shape)

    tan_plus, _ = split(tangential)
    _, nor_minus = split(normal)
    return BoundaryCheck(float(np.abs(tan_plus).max(initial=0.0)), float(np.abs(nor_minus).max(initial=0.0)))


# ---------------------------------------------------------------------------
# file format

def complex_from_dict(data: dict) -> ChamberComplex:
    allowed = {"version", "lattice", "polarization", "chambers", "walls", "boundaries"}
    unknown = set(data) - allowed
    if unknown:
        raise ValueError(f"unknown keys in chamber complex: {sorted(unknown)}")
    space = space_from_spec(data["lattice"])
    chambers = [Chamber(c["id"], c["chern"]) for c in data.get("chambers", [])]
    walls = [Wall(w["id"], w["sigma"], w["left"], w["right"], w["cycle_class"]) for w in data.get("walls", [])]
    bounds = []
    for b in data.get("boundaries", []):
        comps = tuple(BoundaryComponent(c["c_class"], c["m"]) for c in b.get("components", []))
        bounds.append(BoundaryCircle(b["id"], b["adjacent"], comps, b["cycle_class"], b.get("side", "+")))
    return ChamberComplex(space, data["polarization"], chambers, walls, bounds)


def complex_to_dict(cx: ChamberComplex) -> dict:
    return {
        "version": 1,
        "lattice": cx.space.to_dict(),
        "polarization": list(cx.polarization),
        "chambers": [{"id": c.id, "chern": list(c.chern)} for c in cx.chambers],
        "walls": [{"id": w.id, "sigma": list(w.sigma), "left": w.left, "right": w.right,
                   "cycle_class": list(w.cycle_class)} for w in cx.walls],
        "boundaries": [{"id": b.id, "adjacent": b.adjacent, "side": b.side,
                        "cycle_class": list(b.cycle_class),
                        "components": [{"c_class": list(c.c_class), "m": c.m} for c in b.components]}
                       for b in cx.boundaries],
    }


def load_complex(path) -> ChamberComplex:
    return complex_from_dict(json.loads(Path(path).read_text()))
