"""Exact arithmetic for indefinite integral bilinear forms.

Vectors are plain 1-D numpy arrays of coefficients in the standard basis of a
:class:`BilinearSpace`. Integer inputs are paired exactly (Python integers);
float inputs go through numpy.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "BilinearSpace",
    "DimensionError",
    "hyperbolic_plane",
    "e8_minus",
    "k3_lattice",
    "diagonal",
    "direct_sum",
    "space_from_spec",
    "inner",
    "gram_matrix",
    "signature",
    "determinant",
    "orthocomplement",
    "rational_nullspace",
    "enumerate_norm_vectors",
    "picard_lefschetz",
]

_INT64_LIMIT = 2**62

E8_CARTAN = (
    (2, -1, 0, 0, 0, 0, 0, 0),
    (-1, 2, -1, 0, 0, 0, 0, 0),
    (0, -1, 2, -1, 0, 0, 0, -1),
    (0, 0, -1, 2, -1, 0, 0, 0),
    (0, 0, 0, -1, 2, -1, 0, 0),
    (0, 0, 0, 0, -1, 2, -1, 0),
    (0, 0, 0, 0, 0, -1, 2, 0),
    (0, 0, -1, 0, 0, 0, 0, 2),
)


class DimensionError(ValueError):
    """Vector length does not match the rank of its space."""


@dataclass(frozen=True)
class BilinearSpace:
    """A symmetric integer Gram matrix with a label."""

    name: str
    gram: np.ndarray = field(repr=False, compare=False)

    def __post_init__(self):
        g = np.array(self.gram, dtype=np.int64)
        if g.ndim != 2 or g.shape[0] != g.shape[1] or g.shape[0] == 0:
            raise ValueError(f"gram of {self.name!r} must be a non-empty square matrix")
        if not np.array_equal(g, g.T):
            raise ValueError(f"gram of {self.name!r} is not symmetric")
        g.setflags(write=False)
        object.__setattr__(self, "gram", g)

    @property
    def rank(self) -> int:
        return int(self.gram.shape[0])

    def basis(self, i: int) -> np.ndarray:
        e = np.zeros(self.rank, dtype=np.int64)
        e[i] = 1
        return e

    def to_dict(self) -> dict:
        return {"name": self.name, "rank": self.rank, "gram": self.gram.tolist()}

    def __eq__(self, other):
        if not isinstance(other, BilinearSpace):
            return NotImplemented
        return self.name == other.name and np.array_equal(self.gram, other.gram)

    def __hash__(self):
        return hash((self.name, self.gram.tobytes()))


def hyperbolic_plane() -> BilinearSpace:
    return BilinearSpace("U", np.array([[0, 1], [1, 0]]))


def e8_minus() -> BilinearSpace:
    """Negative definite E8 lattice (negated Cartan matrix)."""
    return BilinearSpace("E8-", -np.array(E8_CARTAN))


def diagonal(*entries: int) -> BilinearSpace:
    entries = tuple(int(e) for e in entries)
    return BilinearSpace(f"diag({','.join(map(str, entries))})", np.diag(entries))


def direct_sum(*spaces: BilinearSpace, name: str | None = None) -> BilinearSpace:
    n = sum(s.rank for s in spaces)
    g = np.zeros((n, n), dtype=np.int64)
    k = 0
    for s in spaces:
        g[k:k + s.rank, k:k + s.rank] = s.gram
        k += s.rank
    return BilinearSpace(name or "+".join(s.name for s in spaces), g)


def k3_lattice() -> BilinearSpace:
    """H^2(K3, Z) as U^3 + E8(-1)^2: rank 22, signature (3, 19, 0)."""
    u, e = hyperbolic_plane(), e8_minus()
    return direct_sum(u, u, u, e, e, name="K3")


_DIAG_RE = re.compile(r"^diag\(([-+0-9,\s]+)\)$")


def space_from_spec(spec) -> BilinearSpace:
    """Build a space from a name ("U", "E8-", "K3", "diag(1,-1)", sums with '+')
    or from a mapping ``{name, rank, gram}``."""
    if isinstance(spec, BilinearSpace):
        return spec
    if isinstance(spec, dict):
        unknown = set(spec) - {"name", "rank", "gram"}
        if unknown:
            raise ValueError(f"unknown lattice keys: {sorted(unknown)}")
        if "gram" not in spec:
            if "name" in spec:
                return space_from_spec(spec["name"])
            raise ValueError("lattice spec needs 'gram' or 'name'")
        space = BilinearSpace(spec.get("name", "custom"), np.array(spec["gram"]))
        if "rank" in spec and int(spec["rank"]) != space.rank:
            raise ValueError(f"declared rank {spec['rank']} != gram size {space.rank}")
        return space
    if not isinstance(spec, str):
        raise TypeError(f"cannot build a lattice from {spec!r}")
    text = spec.replace(" ", "")
    parts = _split_sum(text)
    if len(parts) > 1:
        return direct_sum(*(space_from_spec(p) for p in parts), name=text)
    builtins = {"U": hyperbolic_plane, "E8-": e8_minus, "K3": k3_lattice}
    if text in builtins:
        return builtins[text]()
    m = _DIAG_RE.match(text)
    if m:
        return diagonal(*(int(x) for x in m.group(1).split(",") if x))
    raise ValueError(f"unknown lattice name {spec!r}")


def _split_sum(text: str) -> list[str]:
    # split on '+' outside parentheses; "E8-" keeps its trailing minus
    parts, depth, cur = [], 0, ""
    for ch in text:
        depth += ch == "("
        depth -= ch == ")"
        if ch == "+" and depth == 0 and cur:
            parts.append(cur)
            cur = ""
        else:
            cur += ch
    parts.append(cur)
    return parts


def _check_len(space: BilinearSpace, *vs: np.ndarray) -> None:
    for v in vs:
        if v.shape[-1] != space.rank:
            raise DimensionError(f"vector of length {v.shape[-1]} in rank-{space.rank} space {space.name}")


def _is_integral(v: np.ndarray) -> bool:
    return v.dtype.kind in "iub" or v.dtype == object


def inner(space: BilinearSpace, u, v):
    """u^T G v. Exact for integer inputs; broadcasts over leading axes for floats."""
    u = np.asarray(u)
    v = np.asarray(v)
    _check_len(space, u, v)
    if u.ndim == 1 and v.ndim == 1 and _is_integral(u) and _is_integral(v):
        gv = [sum(int(gij) * int(vj) for gij, vj in zip(row, v) if gij) for row in space.gram]
        return sum(int(ui) * x for ui, x in zip(u, gv))
    return np.einsum("...i,ij,...j->...", u, space.gram.astype(float), v)


def gram_matrix(space: BilinearSpace, vectors: Sequence) -> list[list]:
    """Exact Gram matrix of integer vectors, as nested Python ints."""
    return [[inner(space, a, b) for b in vectors] for a in vectors]


def _congruence_diagonal(matrix) -> list[Fraction]:
    """Diagonal of an exact congruence diagonalisation (symmetric pivoting)."""
    a = [[Fraction(int(x)) if not isinstance(x, Fraction) else x for x in row] for row in matrix]
    n = len(a)
    diag: list[Fraction] = []
    active = list(range(n))
    while active:
        piv = next((i for i in active if a[i][i] != 0), None)
        if piv is None:
            pair = next(((i, j) for i in active for j in active if i < j and a[i][j] != 0), None)
            if pair is None:
                diag.extend(Fraction(0) for _ in active)
                break
            i, j = pair
            # row/col i += row/col j makes a[i][i] = 2 a[i][j] != 0
            for k in range(n):
                a[i][k] += a[j][k]
            for k in range(n):
                a[k][i] += a[k][j]
            piv = i
        p = a[piv][piv]
        others = [k for k in active if k != piv]
        for r in others:
            f = a[r][piv] / p
            if f:
                for c in others:
                    a[r][c] -= f * a[piv][c]
        for r in others:
            a[r][piv] = a[piv][r] = Fraction(0)
        diag.append(p)
        active = others
    return diag


def signature(space_or_gram) -> tuple[int, int, int]:
    """Inertia (p, n, z) by exact rational congruence, no floating eigenvalues."""
    g = space_or_gram.gram.tolist() if isinstance(space_or_gram, BilinearSpace) else space_or_gram
    d = _congruence_diagonal(g)
    return (sum(x > 0 for x in d), sum(x < 0 for x in d), sum(x == 0 for x in d))


def determinant(space_or_gram) -> int:
    g = space_or_gram.gram.tolist() if isinstance(space_or_gram, BilinearSpace) else space_or_gram
    a = [[Fraction(int(x)) for x in row] for row in g]
    n = len(a)
    det = Fraction(1)
    for c in range(n):
        p = next((r for r in range(c, n) if a[r][c] != 0), None)
        if p is None:
            return 0
        if p != c:
            a[c], a[p] = a[p], a[c]
            det = -det
        det *= a[c][c]
        for r in range(c + 1, n):
            f = a[r][c] / a[c][c]
            if f:
                for k in range(c, n):
                    a[r][k] -= f * a[c][k]
    assert det.denominator == 1
    return int(det)


def _primitive(v: Iterable[Fraction]) -> np.ndarray:
    v = list(v)
    den = math.lcm(*(x.denominator for x in v)) if v else 1
    ints = [int(x * den) for x in v]
    g = math.gcd(*ints) or 1
    first = next((x for x in ints if x), 0)
    sign = -1 if first < 0 else 1
    return np.array([sign * x // g for x in ints], dtype=np.int64)


def rational_nullspace(rows) -> list[np.ndarray]:
    """Integer basis of {x : rows @ x = 0} via exact reduced row echelon form."""
    a = [[Fraction(int(x)) for x in row] for row in rows]
    if not a:
        return []
    ncols = len(a[0])
    pivots = []
    r = 0
    for c in range(ncols):
        p = next((i for i in range(r, len(a)) if a[i][c] != 0), None)
        if p is None:
            continue
        a[r], a[p] = a[p], a[r]
        pv = a[r][c]
        a[r] = [x / pv for x in a[r]]
        for i in range(len(a)):
            if i != r and a[i][c] != 0:
                f = a[i][c]
                a[i] = [x - f * y for x, y in zip(a[i], a[r])]
        pivots.append(c)
        r += 1
        if r == len(a):
            break
    free = [c for c in range(ncols) if c not in pivots]
    basis = []
    for fcol in free:
        x = [Fraction(0)] * ncols
        x[fcol] = Fraction(1)
        for row, pc in enumerate(pivots):
            x[pc] = -a[row][fcol]
        basis.append(_primitive(x))
    return basis


def orthocomplement(space: BilinearSpace, v) -> list[np.ndarray]:
    """Integer basis of {u : inner(u, v) = 0}."""
    v = np.asarray(v)
    _check_len(space, v)
    if not np.any(v):
        raise ValueError("orthocomplement of the zero vector is undefined")
    w = [sum(int(g) * int(x) for g, x in zip(row, v)) for row in space.gram]
    if not any(w):
        return [space.basis(i) for i in range(space.rank)]
    return rational_nullspace([w])


def _canonical_sign(vecs: np.ndarray) -> np.ndarray:
    first = np.argmax(vecs != 0, axis=1)
    lead = vecs[np.arange(len(vecs)), first]
    return vecs * np.where(lead < 0, -1, 1)[:, None]


def enumerate_norm_vectors(space: BilinearSpace, target_norm: int, height: int,
                           max_box: int = 50_000_000) -> list[np.ndarray]:
    """All integer v with max|v_i| <= height and v.v = target_norm, one per +-v pair.

    The representative kept is the one whose first nonzero coefficient is
    positive. Output is sorted lexicographically. Raises ``OverflowError`` when
    int64 could overflow and ``ValueError`` when the box exceeds ``max_box``.
    """
    r = space.rank
    height = int(height)
    if height < 0:
        raise ValueError("height must be non-negative")
    if height == 0:
        return []
    gmax = int(np.abs(space.gram).max())
    if gmax * height * height * r * r >= _INT64_LIMIT or abs(int(target_norm)) >= _INT64_LIMIT:
        raise OverflowError("lattice enumeration would overflow int64")
    side = 2 * height + 1
    if side**r > max_box:
        raise ValueError(f"coefficient box {side}^{r} exceeds max_box={max_box}")
    g = space.gram
    hits = []
    # split coordinates: enumerate the tail block fully and loop over the head
    tail = min(r, max(1, int(math.log(2e5) / math.log(side))))
    head = r - tail
    rng = np.arange(-height, height + 1, dtype=np.int64)
    tail_box = np.array(list(itertools.product(rng, repeat=tail)), dtype=np.int64).reshape(-1, tail)
    g_tt = g[head:, head:]
    tail_norm = np.einsum("ni,ij,nj->n", tail_box, g_tt, tail_box)
    g_ht = g[:head, head:]
    for h_coeffs in itertools.product(rng.tolist(), repeat=head):
        hv = np.array(h_coeffs, dtype=np.int64)
        hn = int(hv @ g[:head, :head] @ hv) if head else 0
        cross = 2 * (tail_box @ (hv @ g_ht)) if head else 0
        mask = hn + cross + tail_norm == target_norm
        if np.any(mask):
            sel = tail_box[mask]
            full = np.hstack([np.broadcast_to(hv, (len(sel), head)), sel])
            hits.append(full)
    if not hits:
        return []
    allv = np.vstack(hits)
    allv = allv[np.any(allv != 0, axis=1)]
    allv = np.unique(_canonical_sign(allv), axis=0)
    return [row.copy() for row in allv]


def picard_lefschetz(space: BilinearSpace, delta, v) -> np.ndarray:
    """Reflection v -> v + (delta.v) delta in a (-2)-class ``delta``."""
    delta = np.asarray(delta)
    v = np.asarray(v)
    _check_len(space, delta, v)
    if not _is_integral(delta):
        raise ValueError("delta must be an integral class")
    if inner(space, delta, delta) != -2:
        raise ValueError("Picard-Lefschetz reflection needs delta.delta = -2")
    if _is_integral(v):
        c = inner(space, delta, v)
        return np.array([int(x) + c * int(d) for x, d in zip(v, delta)], dtype=np.int64)
    return v + inner(space, delta.astype(float), v) * delta
