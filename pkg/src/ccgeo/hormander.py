"""Weighted vector-field systems, commutator generation, and span checks.

A weighted system is a list of (field, formal degree) pairs on a box
chart, optionally restricted to the half space {x_n >= 0}.  Iterated
right-nested brackets of the generators are enumerated up to a given
order, and spanning of the tangent space is certified through maximal
n-column determinants.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from .symexpr import Const, Expr, VField, lie_bracket, to_string

__all__ = [
    "Box",
    "WeightedSystem",
    "CommutatorEntry",
    "HormanderCertificate",
    "HormanderReport",
    "bracket_entry",
    "enumerate_commutators",
    "build_Z_system",
    "check_span_at",
    "check_hormander",
]

#: determinants below 1e-12 times the column scale are treated as zero
DET_FLOOR = 1e-12

#: above this many candidate columns the subset scan switches to greedy
EXHAUSTIVE_LIMIT = 12


@dataclass(frozen=True)
class Box:
    """Axis-aligned box chart, optionally restricted to {x_n >= 0}."""

    half_widths: tuple[float, ...]
    center: tuple[float, ...] = ()
    has_boundary: bool = False

    def __post_init__(self):
        if not self.center:
            object.__setattr__(self, "center", (0.0,) * len(self.half_widths))
        if len(self.center) != len(self.half_widths):
            raise ValueError("center and half_widths must share length")
        if any(h <= 0 for h in self.half_widths):
            raise ValueError("half widths must be positive")

    @property
    def dim(self) -> int:
        return len(self.half_widths)

    def contains(self, points: np.ndarray, inflate: float = 1.0, tol: float = 1e-9) -> np.ndarray:
        """Per-point box membership; the half-space cut is checked separately."""
        points = np.asarray(points, dtype=float)
        hw = np.asarray(self.half_widths) * inflate
        c = np.asarray(self.center)
        return np.all(np.abs(points - c) <= hw + tol, axis=-1)

    def grid(self, per_axis: int = 11) -> np.ndarray:
        """Uniform grid over the chart (restricted to x_n >= 0 if bounded)."""
        axes = []
        for i, (h, c) in enumerate(zip(self.half_widths, self.center)):
            lo, hi = c - h, c + h
            if self.has_boundary and i == self.dim - 1:
                lo = max(lo, 0.0)
            axes.append(np.linspace(lo, hi, per_axis))
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def boundary_grid(self, per_axis: int = 11) -> np.ndarray:
        """Grid on the boundary slice {x_n = 0}."""
        if not self.has_boundary:
            raise ValueError("chart has no boundary")
        axes = [
            np.linspace(c - h, c + h, per_axis)
            for h, c in zip(self.half_widths[:-1], self.center[:-1])
        ]
        if not axes:
            return np.zeros((1, 1))
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=-1)
        return np.hstack([pts, np.zeros((len(pts), 1))])


@dataclass(frozen=True)
class WeightedSystem:
    """Hormander vector fields with formal degrees on a box chart."""

    fields: tuple[tuple[VField, int], ...]
    box: Box
    density: Expr = Const(1.0)
    words: tuple[tuple[int, ...], ...] | None = None  # bracket provenance, if derived

    def __post_init__(self):
        if not self.fields:
            raise ValueError("need at least one field")
        n = self.box.dim
        for vf, d in self.fields:
            if vf.dim != n:
                raise ValueError("field dimension does not match chart")
            if d < 1:
                raise ValueError("formal degrees must be >= 1")

    @property
    def n(self) -> int:
        return self.box.dim

    @property
    def r(self) -> int:
        return len(self.fields)

    @property
    def degrees(self) -> tuple[int, ...]:
        return tuple(d for _, d in self.fields)

    @property
    def max_degree(self) -> int:
        return max(self.degrees)

    def vfields(self) -> tuple[VField, ...]:
        return tuple(vf for vf, _ in self.fields)

    def density_at(self, points: np.ndarray) -> np.ndarray:
        return self.density.eval_many(np.asarray(points, dtype=float))

    def validate_density(self, per_axis: int = 9) -> None:
        vals = self.density.eval_many(self.box.grid(per_axis))
        if not np.all(np.isfinite(vals)) or vals.min() <= 0:
            raise ValueError(f"density is not strictly positive on the chart (min {vals.min()})")

    def augmented(self, word: tuple[int, ...]) -> "WeightedSystem":
        """Adjoin the iterated bracket of `word` (1-based indices) as a new generator."""
        entry = bracket_entry(self, word)
        return replace(self, fields=self.fields + ((entry.field, entry.degree),), words=None)


@dataclass(frozen=True)
class CommutatorEntry:
    """An iterated bracket [W_w1,[W_w2,[...]]] with its additive degree."""

    field: VField
    degree: int
    word: tuple[int, ...]
    is_zero: bool = False


@dataclass(frozen=True)
class HormanderCertificate:
    point: tuple[float, ...]
    order: int
    gamma0: float
    witness: tuple[int, ...]  # column indices into the entry list
    valid: bool


@dataclass(frozen=True)
class HormanderReport:
    ok: bool
    order: int | None
    min_gamma0: float
    failures: tuple[tuple[float, ...], ...] = field(default_factory=tuple)


def bracket_entry(sys: WeightedSystem, word: tuple[int, ...]) -> CommutatorEntry:
    """Iterated right-nested bracket of a 1-based generator word."""
    vfs = sys.vfields()
    degs = sys.degrees
    f = vfs[word[-1] - 1]
    for j in reversed(word[:-1]):
        f = lie_bracket(vfs[j - 1], f)
    return CommutatorEntry(f, sum(degs[j - 1] for j in word), word, f.is_zero())


def _canonical_key(vf: VField) -> str:
    s = ", ".join(to_string(c) for c in vf.components)
    sneg = ", ".join(to_string(c) for c in vf.negated().components)
    return min(s, sneg)


def enumerate_commutators(sys: WeightedSystem, m: int) -> list[CommutatorEntry]:
    """All right-nested bracket words of length <= m, lexicographic order.

    Structurally equal fields (up to sign, after constant folding) of equal
    degree collapse to the first word producing them; identically zero
    fields are kept once per degree with `is_zero` set.
    """
    if m < 1:
        raise ValueError("order must be >= 1")
    out: list[CommutatorEntry] = []
    seen: set[tuple[int, str]] = set()
    r = sys.r
    for length in range(1, m + 1):
        for word in itertools.product(range(1, r + 1), repeat=length):
            if length > 1 and word[-1] == word[-2]:
                continue  # innermost [W, W] vanishes identically
            entry = bracket_entry(sys, word)
            key = (entry.degree, _canonical_key(entry.field))
            if key in seen:
                continue
            seen.add(key)
            out.append(entry)
    return out


def _numerically_zero(vf: VField, box: Box, scale: float, per_axis: int = 7) -> bool:
    vals = vf.eval_many(box.grid(per_axis))
    vals = vals[np.all(np.isfinite(vals), axis=-1)]
    return len(vals) > 0 and np.abs(vals).max() <= 1e-12 * max(1.0, scale)


def build_Z_system(sys: WeightedSystem, m: int) -> WeightedSystem:
    """Derived system of commutators with degree <= m * max formal degree.

    Contains the generators themselves; duplicates (up to sign) and fields
    that vanish identically on the chart are dropped.
    """
    cap = m * sys.max_degree
    entries = enumerate_commutators(sys, m)
    scale = 1.0
    kept: list[tuple[VField, int]] = []
    words: list[tuple[int, ...]] = []
    for e in entries:
        if e.degree > cap or e.is_zero:
            continue
        if len(e.word) > 1 and _numerically_zero(e.field, sys.box, scale):
            continue
        kept.append((e.field, e.degree))
        words.append(e.word)
    return WeightedSystem(tuple(kept), sys.box, sys.density, words=tuple(words))


def _subset_dets(columns: np.ndarray, combos: np.ndarray) -> np.ndarray:
    """|det| for each column subset; columns has shape (q, ..., n)."""
    mats = columns[combos]  # (n_combos, n, ..., n)
    mats = np.moveaxis(mats, 1, -1)  # (..., n, n) with subset as last axis
    return np.abs(np.linalg.det(mats))


def _greedy_witness(cols: np.ndarray, n: int, rng: np.random.Generator) -> tuple[float, tuple[int, ...]]:
    """Volume-maximizing greedy pivot selection with random restarts."""
    q = len(cols)
    best_det, best_idx = 0.0, tuple(range(n))
    for restart in range(3):
        order = np.arange(q) if restart == 0 else rng.permutation(q)
        chosen: list[int] = []
        basis = np.zeros((n, 0))
        for _ in range(n):
            resid = cols[order].T - basis @ (basis.T @ cols[order].T)
            norms = np.linalg.norm(resid, axis=0)
            k = int(np.argmax(norms))
            if norms[k] <= 0:
                break
            chosen.append(int(order[k]))
            v = resid[:, k] / norms[k]
            basis = np.hstack([basis, v[:, None]])
        if len(chosen) == n:
            d = abs(np.linalg.det(cols[chosen].T))
            if d > best_det:
                best_det, best_idx = d, tuple(sorted(chosen))
    return best_det, best_idx


def check_span_at(entries: list[CommutatorEntry], p, order: int | None = None) -> HormanderCertificate:
    """Certificate that the entry fields span R^n at p.

    gamma0 is the maximal |det| over n-column subsets (exhaustive when the
    candidate count is at most EXHAUSTIVE_LIMIT, greedy pivoting above) and
    the verdict uses a scale-aware floor.
    """
    if not entries:
        raise ValueError("no entries")
    live = [e for e in entries if not e.is_zero]
    n = live[0].field.dim if live else entries[0].field.dim
    p = tuple(float(v) for v in p)
    if len(p) != n:
        raise ValueError("point dimension mismatch")
    order = order if order is not None else max((len(e.word) for e in entries), default=1)
    cols = np.array([e.field.eval_at(p) for e in live], dtype=float)
    live_idx = [i for i, e in enumerate(entries) if not e.is_zero]
    if len(cols) < n:
        return HormanderCertificate(p, order, 0.0, (), False)
    col_scale = float(np.linalg.norm(cols, axis=1).max())
    if len(cols) <= EXHAUSTIVE_LIMIT:
        combos = np.array(list(itertools.combinations(range(len(cols)), n)))
        dets = np.abs(np.linalg.det(cols[combos].transpose(0, 2, 1)))
        k = int(np.argmax(dets))
        gamma0, witness = float(dets[k]), tuple(combos[k])
    else:
        gamma0, witness = _greedy_witness(cols, n, np.random.default_rng(0))
    valid = col_scale > 0 and gamma0 > DET_FLOOR * max(col_scale, 1e-300) ** n
    return HormanderCertificate(p, order, gamma0, tuple(live_idx[i] for i in witness), valid)


def check_hormander(
    sys: WeightedSystem,
    m_max: int,
    grid: np.ndarray | None = None,
    per_axis: int = 11,
) -> HormanderReport:
    """Smallest order m <= m_max certified at every grid point.

    Returns the grid minimum of gamma0 at that order (the uniform spanning
    constant); on failure, reports the points where the largest tried order
    still fails.
    """
    pts = sys.box.grid(per_axis) if grid is None else np.asarray(grid, dtype=float)
    failures: list[tuple[float, ...]] = []
    for m in range(1, m_max + 1):
        entries = [e for e in enumerate_commutators(sys, m) if not e.is_zero]
        if not entries:
            continue
        n = sys.n
        cols = np.stack([e.field.eval_many(pts) for e in entries])  # (q, P, n)
        col_scale = np.linalg.norm(cols, axis=2).max(axis=0)  # (P,)
        q = len(entries)
        if q < n:
            continue
        best = np.zeros(len(pts))
        if q <= EXHAUSTIVE_LIMIT:
            for combo in itertools.combinations(range(q), n):
                mats = np.stack([cols[j] for j in combo], axis=-1)  # (P, n, n)
                best = np.maximum(best, np.abs(np.linalg.det(mats)))
        else:
            for i, p in enumerate(pts):
                best[i], _ = _greedy_witness(cols[:, i, :], n, np.random.default_rng(0))
        ok = best > DET_FLOOR * np.maximum(col_scale, 1e-300) ** n
        if np.all(ok):
            return HormanderReport(True, m, float(best.min()))
        if m == m_max:
            failures = [tuple(p) for p in pts[~ok][:16]]
    return HormanderReport(False, None, 0.0, tuple(failures))
