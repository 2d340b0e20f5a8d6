"""Non-characteristic boundary degree and the induced boundary system.

On a chart with boundary {x_n = 0}, the minimal commutator degree
transversal to the boundary is computed pointwise; where it is locally
constant the standard correction procedure applies: a distinguished
transversal generator X_0 is subtracted from every capped commutator so
the remainder is boundary-tangent, and restricting the tangent fields to
{x_n = 0} yields a weighted system on the boundary whose metric is
Lipschitz equivalent to the restricted ambient one.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ccmetric import MetricEstimate, cc_distance
from .hormander import (
    Box,
    CommutatorEntry,
    WeightedSystem,
    build_Z_system,
    check_span_at,
    enumerate_commutators,
)
from .symexpr import Const, Expr, VField, div, lie_bracket, mul, sub, to_string

__all__ = [
    "CharacteristicError",
    "BoundaryDegreeReport",
    "BoundarySystem",
    "deg_boundary",
    "build_boundary_system",
    "boundary_metric",
    "bracket_closure_residual",
    "export_scenario",
]

#: relative threshold below which an n-th component counts as tangent
TANGENCY_RTOL = 1e-10


class CharacteristicError(RuntimeError):
    pass


@dataclass(frozen=True)
class BoundaryDegreeReport:
    point: tuple[float, ...]
    deg: int
    witness: CommutatorEntry
    locally_constant: bool
    noncharacteristic: bool
    probe_radius: float
    probe_degs: tuple[int, ...]


@dataclass(frozen=True)
class BoundarySystem:
    """Output of the boundary construction at a non-characteristic point."""

    parent: WeightedSystem
    order: int
    x0: tuple[float, ...]
    radius: float
    deg: int
    j0: int  # index of the distinguished generator in parent.fields
    omega: int  # sign of the distinguished n-th component at x0
    distinguished: tuple[VField, int]  # (X_0, d_0)
    x_entries: tuple[tuple[VField, int, tuple[int, ...], bool], ...]  # ambient X_j
    btilde: tuple[Expr, ...]
    v_entries: tuple[tuple[VField, int, bool], ...]  # boundary fields with zero flags
    v_system: WeightedSystem  # nonzero boundary fields on the (n-1)-chart
    x_system: WeightedSystem  # X_0 followed by the nonzero tangent fields
    tangency_residual: float
    span_floor: float


def _nontangent(entry_field: VField, p, rtol: float = TANGENCY_RTOL) -> bool:
    v = entry_field.eval_at(p)
    return abs(v[-1]) > rtol * max(1.0, float(np.linalg.norm(v)))


def _deg_at(entries, p, m) -> tuple[int, CommutatorEntry] | None:
    best: tuple[int, CommutatorEntry] | None = None
    for e in entries:
        if e.is_zero or not _nontangent(e.field, p):
            continue
        if best is None or e.degree < best[0]:
            best = (e.degree, e)
    return best


def _probe_offsets(n_tangential: int, radius: float, per_axis: int = 5) -> np.ndarray:
    axes = [np.linspace(-radius, radius, per_axis)] * n_tangential
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _boundary_probes(sys: WeightedSystem, xp: np.ndarray, radius: float, per_axis: int = 5) -> np.ndarray:
    offs = _probe_offsets(sys.n - 1, radius, per_axis)
    pts = np.hstack([xp[:-1] + offs, np.zeros((len(offs), 1))])
    keep = sys.box.contains(pts)
    return pts[keep]


def deg_boundary(
    sys: WeightedSystem,
    xp,
    m: int,
    probe_radius: float = 0.05,
    per_axis: int = 5,
) -> BoundaryDegreeReport:
    """Minimal transversal commutator degree at a boundary point.

    The witness is the entry of minimal degree whose n-th component at xp
    is largest relative to the field's size; the degree is probed on a
    tangential grid of the given radius to decide local constancy.
    """
    if not sys.box.has_boundary:
        raise ValueError("system chart has no boundary")
    xp = np.asarray(xp, dtype=float)
    if abs(xp[-1]) > 1e-12:
        raise ValueError("point is not on the boundary {x_n = 0}")
    entries = enumerate_commutators(sys, m)
    best = _deg_at(entries, xp, m)
    if best is None:
        raise CharacteristicError(f"no transversal commutator up to order {m} at {tuple(xp)}")
    deg = best[0]
    candidates = [e for e in entries if not e.is_zero and e.degree == deg and _nontangent(e.field, xp)]

    def ratio(e):
        v = e.field.eval_at(xp)
        return abs(v[-1]) / max(np.linalg.norm(v), 1e-300)

    witness = max(candidates, key=ratio)
    probe_degs = []
    locally_constant = True
    for q in _boundary_probes(sys, xp, probe_radius, per_axis):
        b = _deg_at(entries, q, m)
        if b is None:
            locally_constant = False
            probe_degs.append(-1)
            continue
        probe_degs.append(b[0])
        if b[0] != deg:
            locally_constant = False
    return BoundaryDegreeReport(
        point=tuple(xp),
        deg=deg,
        witness=witness,
        locally_constant=locally_constant,
        noncharacteristic=locally_constant,
        probe_radius=probe_radius,
        probe_degs=tuple(probe_degs),
    )


def build_boundary_system(
    sys: WeightedSystem,
    x0,
    m: int,
    probe_radius: float = 0.05,
    per_axis: int = 5,
) -> BoundarySystem:
    """Run the correction procedure at a non-characteristic boundary point.

    Steps: derive the capped commutator system, pick the distinguished
    minimal-degree transversal generator X_0, subtract b~_j X_0 from each
    entry so it becomes boundary tangent (b~ constant in x_n), and restrict
    the tangential parts to the boundary slice.
    """
    if sys.n < 2:
        raise ValueError("boundary construction needs dimension >= 2")
    x0 = np.asarray(x0, dtype=float)
    report = deg_boundary(sys, x0, m, probe_radius, per_axis)
    if not report.noncharacteristic:
        raise CharacteristicError(
            f"{tuple(x0)} is characteristic: boundary degree is not locally constant "
            f"(probe degrees {report.probe_degs})"
        )
    n = sys.n
    candidates = [
        j
        for j, (vf, d) in enumerate(sys.fields)
        if d == report.deg and _nontangent(vf, x0)
    ]
    if not candidates:
        raise CharacteristicError(
            f"no generator of degree {report.deg} is transversal at {tuple(x0)}"
        )

    def ratio(j):
        v = sys.fields[j][0].eval_at(x0)
        return abs(v[-1]) / max(np.linalg.norm(v), 1e-300)

    j0 = max(candidates, key=ratio)
    X0, d0 = sys.fields[j0]
    x0n_val = float(X0.eval_at(x0)[-1])
    omega = 1 if x0n_val > 0 else -1

    entries_all = enumerate_commutators(sys, m)
    radius = probe_radius
    while True:
        probes = _boundary_probes(sys, x0, radius, per_axis)
        x0n = np.array([X0.eval_at(q)[-1] for q in probes])
        floor = max(1e-10, 0.05 * abs(x0n_val))
        degs_ok = all(
            (b := _deg_at(entries_all, q, m)) is not None and b[0] == report.deg for q in probes
        )
        if np.abs(x0n).min() >= floor and degs_ok:
            break
        radius *= 0.5
        if radius < 1e-3:
            raise CharacteristicError(
                f"distinguished component vanishes arbitrarily close to {tuple(x0)}"
            )

    zsys = build_Z_system(sys, m)
    den = X0.nth.subst(n, 0.0)
    x_entries: list[tuple[VField, int, tuple[int, ...], bool]] = []
    btilde: list[Expr] = []
    grid2d = _neighborhood_grid(sys, x0, radius)
    for (zf, zd), word in zip(zsys.fields, zsys.words):
        if zd < d0:
            b: Expr = Const(0.0)
        else:
            b = div(zf.nth.subst(n, 0.0), den)
        comps = tuple(sub(zf.components[k], mul(b, X0.components[k])) for k in range(n))
        xf = VField(comps)
        vals = xf.eval_many(grid2d)
        vals = vals[np.all(np.isfinite(vals), axis=-1)]
        zscale = max(1.0, float(np.abs(zf.eval_many(grid2d)).max()))
        is_zero = xf.is_zero() or (len(vals) > 0 and float(np.abs(vals).max()) <= 1e-10 * zscale)
        x_entries.append((xf, zd, word, is_zero))
        btilde.append(b)

    bdry = _boundary_probes(sys, x0, radius, per_axis=7)
    tangency = 0.0
    for xf, zd, word, is_zero in x_entries:
        vals = xf.eval_many(bdry)
        scale = max(1.0, float(np.abs(vals).max()))
        tangency = max(tangency, float(np.abs(vals[:, -1]).max()) / scale)

    v_entries: list[tuple[VField, int, bool]] = []
    for xf, zd, word, is_zero in x_entries:
        comps = tuple(c.subst(n, 0.0) for c in xf.components[: n - 1])
        vf = VField(comps)
        vals = vf.eval_many(bdry[:, : n - 1])
        vzero = vf.is_zero() or float(np.abs(vals).max()) <= 1e-10
        v_entries.append((vf, zd, is_zero or vzero))

    vbox = Box(
        half_widths=(radius,) * (n - 1),
        center=tuple(float(c) for c in x0[: n - 1]),
        has_boundary=False,
    )
    v_fields = tuple((vf, d) for vf, d, z in v_entries if not z)
    if not v_fields:
        raise CharacteristicError("all boundary fields vanish; nothing spans the boundary")
    v_system = WeightedSystem(v_fields, vbox, density=sys.density.subst(n, 0.0))

    span_floor = np.inf
    pseudo = [CommutatorEntry(vf, d, (i + 1,)) for i, (vf, d) in enumerate(v_fields)]
    for q in bdry[:, : n - 1]:
        cert = check_span_at(pseudo, q)
        span_floor = min(span_floor, cert.gamma0)
        if not cert.valid:
            raise CharacteristicError(f"boundary fields do not span at {tuple(q)}")

    xbox = Box(
        half_widths=tuple([radius] * (n - 1) + [radius]),
        center=tuple(float(c) for c in x0[: n - 1]) + (0.0,),
        has_boundary=True,
    )
    x_fields = ((X0, d0),) + tuple((xf, d) for xf, d, w, z in x_entries if not z)
    x_system = WeightedSystem(x_fields, xbox, density=sys.density)

    return BoundarySystem(
        parent=sys,
        order=m,
        x0=tuple(x0),
        radius=radius,
        deg=report.deg,
        j0=j0,
        omega=omega,
        distinguished=(X0, d0),
        x_entries=tuple(x_entries),
        btilde=tuple(btilde),
        v_entries=tuple(v_entries),
        v_system=v_system,
        x_system=x_system,
        tangency_residual=tangency,
        span_floor=float(span_floor),
    )


def _neighborhood_grid(sys: WeightedSystem, x0: np.ndarray, radius: float, per_axis: int = 5) -> np.ndarray:
    axes = [np.linspace(c - radius, c + radius, per_axis) for c in x0[:-1]]
    axes.append(np.linspace(0.0, radius, 3))
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([mm.ravel() for mm in mesh], axis=-1)
    return pts[sys.box.contains(pts)]


def bracket_closure_residual(bsys: BoundarySystem, per_axis: int = 5) -> float:
    """Worst residual of [V_j, V_k] against span{V_l : d_l <= d_j + d_k}.

    The weak form of the closure identity for the boundary fields; exact
    coefficients are not computed, only representability at grid points.
    """
    fields = bsys.v_system.fields
    grid = bsys.v_system.box.grid(per_axis)
    worst = 0.0
    for j, (vj, dj) in enumerate(fields):
        for k2, (vk, dk) in enumerate(fields):
            if k2 <= j:
                continue
            br = lie_bracket(vj, vk)
            if br.is_zero():
                continue
            cols_fields = [vf for vf, d in fields if d <= dj + dk]
            for q in grid:
                target = br.eval_at(q)
                scale = max(1.0, float(np.linalg.norm(target)))
                if not cols_fields:
                    worst = max(worst, float(np.linalg.norm(target)) / scale)
                    continue
                a = np.stack([vf.eval_at(q) for vf in cols_fields], axis=1)
                coef, *_ = np.linalg.lstsq(a, target, rcond=None)
                worst = max(worst, float(np.linalg.norm(a @ coef - target)) / scale)
    return worst


def boundary_metric(bsys: BoundarySystem, xp, yp, tol: float = 0.05, **kwargs) -> MetricEstimate:
    """CC distance on the boundary driven by the restricted system."""
    xp = np.asarray(xp, dtype=float)
    yp = np.asarray(yp, dtype=float)
    n = bsys.parent.n
    if len(xp) == n:
        if abs(xp[-1]) > 1e-12 or abs(yp[-1]) > 1e-12:
            raise ValueError("boundary points must have x_n = 0")
        xp, yp = xp[: n - 1], yp[: n - 1]
    return cc_distance(bsys.v_system, xp, yp, mode="intrinsic", tol=tol, **kwargs)


def export_scenario(bsys: BoundarySystem, name: str, deltas=(0.2, 0.1, 0.05), seed: int = 7) -> str:
    """Boundary system as scenario text, re-ingestable by the CLI loader."""
    v = bsys.v_system
    lines = [
        f"# boundary restriction of a {bsys.parent.n}-dimensional system at x0 = {bsys.x0}",
        f"name = {name}",
        f"dim = {v.n}",
        "box = " + " ".join(repr(h) for h in v.box.half_widths),
        "center = " + " ".join(repr(c) for c in v.box.center),
        "boundary = false",
        f"m = {bsys.order}",
    ]
    for vf, d in v.fields:
        comps = ", ".join(to_string(c) for c in vf.components)
        lines.append(f'field = "{comps}" degree = {d}')
    lines.append(f'density = "{to_string(v.density)}"')
    lines.append("probe = " + " ".join(repr(float(c)) for c in v.box.center))
    lines.append("delta = " + " ".join(repr(float(d)) for d in deltas))
    lines.append(f"seed = {seed}")
    return "\n".join(lines) + "\n"
