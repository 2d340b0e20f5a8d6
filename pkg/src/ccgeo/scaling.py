"""Volume functional, scaling maps, pullback fields, and their checks.

Lambda(x, delta) is the maximal density-weighted determinant of n scaled
commutators; it is comparable to the ball volume and exactly controls
doubling.  The scaling map composes exponentials of a zeta-maximal
commutator basis, with the distinguished transversal field straightened
to +/- d/dt_n near the boundary; pulled-back generators stay uniformly
Hormander across scales, which is verified numerically on cube grids.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .boundary import BoundarySystem
from .ccmetric import BOUNDARY_TOL, reach_graph, sample_ball
from .flows import FlowConfig, rk4_flow
from .hormander import CommutatorEntry, WeightedSystem, build_Z_system, check_span_at
from .symexpr import Const, VField, div, mul

__all__ = [
    "LambdaReport",
    "ScalingMap",
    "SandwichReport",
    "UniformHormanderReport",
    "compute_lambda",
    "doubling_ratio",
    "select_basis",
    "build_scaling_map",
    "pullback_field",
    "numeric_bracket",
    "verify_sandwich",
    "verify_uniform_hormander",
]


@dataclass(frozen=True)
class LambdaReport:
    x: tuple[float, ...]
    delta: float
    value: float
    argmax: tuple[int, ...]
    table: tuple[tuple[tuple[int, ...], float], ...]


def _entry_columns(fields, x) -> np.ndarray:
    return np.stack([vf.eval_at(x) for vf, _ in fields])  # (q, n)


def compute_lambda(
    sys: WeightedSystem,
    x,
    delta: float,
    m: int,
    zsys: WeightedSystem | None = None,
) -> LambdaReport:
    """Max over n-subsets of the density-weighted scaled determinant.

    Candidates are the derived commutators of degree <= m * max degree;
    the scan is exhaustive.
    """
    x = np.asarray(x, dtype=float)
    z = zsys if zsys is not None else build_Z_system(sys, m)
    n = sys.n
    pseudo = [CommutatorEntry(vf, d, (i + 1,)) for i, (vf, d) in enumerate(z.fields)]
    cert = check_span_at(pseudo, x)
    if not cert.valid:
        raise ValueError(f"Hormander certificate invalid at {tuple(x)} (gamma0 = {cert.gamma0})")
    if delta == 0.0:
        return LambdaReport(tuple(x), 0.0, 0.0, (), ())
    h = float(sys.density.eval(x))
    cols = _entry_columns(z.fields, x)
    degs = np.array(z.degrees)
    table = []
    best_val, best_idx = -1.0, ()
    for combo in itertools.combinations(range(len(cols)), n):
        idx = np.array(combo)
        val = h * abs(np.linalg.det(cols[idx].T)) * float(delta ** degs[idx].sum())
        table.append((combo, val))
        if val > best_val:
            best_val, best_idx = val, combo
    return LambdaReport(tuple(x), float(delta), best_val, best_idx, tuple(table))


def doubling_ratio(sys: WeightedSystem, x, delta: float, m: int, zsys=None) -> float:
    """Lambda(x, 2 delta) / Lambda(x, delta); bounded by 2^(n m max d)."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    z = zsys if zsys is not None else build_Z_system(sys, m)
    lo = compute_lambda(sys, x, delta, m, zsys=z)
    if lo.value == 0.0:
        raise ValueError("Lambda vanishes; certificate failure")
    hi = compute_lambda(sys, x, 2.0 * delta, m, zsys=z)
    return hi.value / lo.value


def select_basis(
    fields,
    x,
    delta: float,
    zeta: float = 0.75,
    distinguished: int | None = None,
    prev: tuple[int, ...] | None = None,
) -> tuple[int, ...]:
    """Indices of an n-column basis with scaled determinant >= zeta * max.

    With a distinguished index, only subsets containing it qualify and it
    is reported last; a previous selection is kept while it stays within
    the zeta margin (hysteresis across delta ladders).
    """
    if not 0.0 < zeta <= 1.0:
        raise ValueError("zeta must be in (0, 1]")
    fields = list(fields)
    x = np.asarray(x, dtype=float)
    n = len(x)
    cols = _entry_columns(fields, x)
    degs = np.array([d for _, d in fields])
    vals: dict[tuple[int, ...], float] = {}
    for combo in itertools.combinations(range(len(fields)), n):
        idx = np.array(combo)
        vals[combo] = abs(np.linalg.det(cols[idx].T)) * float(delta ** degs[idx].sum())
    max_val = max(vals.values())
    if max_val <= 0:
        raise ValueError("no spanning subset")

    def order(combo):
        if distinguished is None:
            return combo
        rest = tuple(i for i in combo if i != distinguished)
        return rest + (distinguished,)

    if prev is not None and tuple(sorted(prev)) in vals and vals[tuple(sorted(prev))] >= zeta * max_val:
        return order(tuple(sorted(prev)))
    pool = vals if distinguished is None else {c: v for c, v in vals.items() if distinguished in c}
    best = max(pool, key=lambda c: pool[c])
    if pool[best] < zeta * max_val:
        raise ValueError(
            f"no subset within zeta = {zeta} of the maximal determinant "
            f"({pool[best]:.3e} vs {max_val:.3e})"
        )
    return order(best)


@dataclass
class ScalingMap:
    """Composition of exponentials turning the delta-ball into a unit cube.

    Near the boundary: psi(t) = exp(t_n omega d^{deg0} X0~) o
    exp(sum_{k<n} t_k d^{deg_k} X_k)(x) with X0~ normalized so its n-th
    component is identically omega; in the interior the single combined
    exponential over the selected basis is used.
    """

    kind: str  # "interior" | "near_boundary"
    x: np.ndarray
    delta: float
    basis: tuple[tuple[VField, int], ...]  # tangential slots (all slots if interior)
    distinguished: tuple[VField, int] | None
    omega: int
    cfg: FlowConfig
    zeta: float
    indices: tuple[int, ...]
    gain: float = 1.0
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return len(self.x)

    def __call__(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        single = t.ndim == 1
        T = t[None] if single else t
        key = ("eval", T.tobytes())
        out = self._cache.get(key)
        if out is None:
            out = self._eval(T)
            if len(self._cache) > 256:
                self._cache.clear()
            self._cache[key] = out
        return out[0] if single else out

    def _eval(self, T: np.ndarray) -> np.ndarray:
        B = len(T)
        n = self.n
        P = np.tile(self.x, (B, 1))
        k_slots = len(self.basis)
        coeff = T[:, :k_slots] * np.array([self.delta**d for _, d in self.basis])
        vfs = [vf for vf, _ in self.basis]

        def vel(pts):
            w = np.stack([vf.eval_many(pts) for vf in vfs], axis=1)  # (B, k, n)
            return np.einsum("bk,bkn->bn", coeff, w)

        if np.any(coeff):
            P = rk4_flow(vel, P, 1.0, self.cfg, n_steps=self.cfg.steps_per_unit)
        if self.distinguished is not None:
            x0f, d0 = self.distinguished
            times = T[:, n - 1] * self.omega * self.delta**d0
            P = rk4_flow(lambda pts: x0f.eval_many(pts), P, times, self.cfg)
        return P

    def jacobian(self, u: np.ndarray) -> np.ndarray:
        """Central-difference Jacobians d psi(u), batched over rows of u."""
        u = np.asarray(u, dtype=float)
        single = u.ndim == 1
        U = u[None] if single else u
        key = ("jac", U.tobytes())
        out = self._cache.get(key)
        if out is None:
            B, n = U.shape
            h = 1e-5 * (1.0 + np.abs(U).max(axis=1))  # (B,)
            pert = []
            for i in range(n):
                e = np.zeros(n)
                e[i] = 1.0
                pert.append(U + h[:, None] * e)
                pert.append(U - h[:, None] * e)
            stacked = self._eval(np.concatenate(pert, axis=0))
            cols = []
            for i in range(n):
                plus = stacked[2 * i * B : (2 * i + 1) * B]
                minus = stacked[(2 * i + 1) * B : (2 * i + 2) * B]
                cols.append((plus - minus) / (2 * h[:, None]))
            out = np.stack(cols, axis=-1)  # (B, n, n)
            self._cache[key] = out
        return out[0] if single else out

    def invert(self, y: np.ndarray, max_iter: int = 50, tol: float = 1e-10):
        """Damped Newton inversion from t = 0; returns (t, converged)."""
        y = np.asarray(y, dtype=float)
        single = y.ndim == 1
        Y = y[None] if single else y
        B, n = Y.shape
        T = np.zeros((B, n))
        ok = np.ones(B, dtype=bool)
        res = self._eval(T) - Y
        for _ in range(max_iter):
            norms = np.linalg.norm(res, axis=1)
            active = ok & (norms > 1e-12)
            if not active.any():
                break
            try:
                J = self.jacobian(T[active])
                step = np.linalg.solve(J, (-res[active])[..., None])[..., 0]
            except np.linalg.LinAlgError:
                ok[active] = False
                break
            scale = np.ones(step.shape[0])
            tact = T[active]
            ract = res[active]
            done_step = np.zeros(step.shape[0], dtype=bool)
            for _ in range(5):
                trial = tact + scale[:, None] * step
                rtrial = self._eval(trial) - Y[active]
                better = np.linalg.norm(rtrial, axis=1) < np.linalg.norm(ract, axis=1)
                upd = better & ~done_step
                tact[upd] = trial[upd]
                ract[upd] = rtrial[upd]
                done_step |= better
                if done_step.all():
                    break
                scale[~done_step] *= 0.5
            T[active] = tact
            res[active] = ract
            ok[active] &= done_step | (np.linalg.norm(ract, axis=1) <= 1e-12)
            if np.abs(step).max() <= tol:
                break
        converged = ok & (np.linalg.norm(res, axis=1) <= 1e-7 * max(1.0, self.delta))
        return (T[0], bool(converged[0])) if single else (T, converged)


def build_scaling_map(
    source: WeightedSystem | BoundarySystem,
    x,
    delta: float,
    m: int | None = None,
    zeta: float = 0.75,
    cfg: FlowConfig | None = None,
    delta_cap: float = 0.5,
    prev: tuple[int, ...] | None = None,
    steps_per_unit: int = 128,
    gain: float = 1.0,
) -> ScalingMap:
    """Scaling map at (x, delta) from a weighted or boundary system.

    A BoundarySystem (with x on the boundary slice) produces the
    near-boundary map with the distinguished field normalized so that its
    pullback is exactly omega d/dt_n; a plain system produces the interior
    map from its capped commutator basis.  `gain` rescales the
    parametrization (unit cube to a gain-cube of the raw exponential);
    the working value making the unit cube image sit inside the ball is
    fixture calibrated and absorbed into the map's fields, so pullback
    identities hold for the stored basis exactly as stated.
    """
    x = np.asarray(x, dtype=float)
    if delta <= 0 or delta > delta_cap:
        raise ValueError(f"delta must be in (0, {delta_cap}]")
    if not 0.0 < gain <= 1.0:
        raise ValueError("gain must be in (0, 1]")
    if isinstance(source, BoundarySystem):
        if abs(x[-1]) > 1e-12:
            raise ValueError("near-boundary maps are anchored at boundary points")
        parent = source.parent
        cfg = cfg or FlowConfig(parent.box, steps_per_unit=steps_per_unit)
        x0f, d0 = source.distinguished
        omega = source.omega
        denom = mul(Const(float(omega)), x0f.nth)
        x0norm = VField(tuple(div(c, denom) for c in x0f.components))
        if gain != 1.0:
            x0norm = x0norm.scaled(gain)
        tang = [(vf, d) for vf, d, w, z in source.x_entries if not z]
        fields = tang + [(x0f, d0)]
        idx = select_basis(fields, x, delta, zeta, distinguished=len(fields) - 1, prev=prev)
        basis = tuple(
            (fields[i][0].scaled(gain) if gain != 1.0 else fields[i][0], fields[i][1])
            for i in idx[:-1]
        )
        smap = ScalingMap(
            kind="near_boundary",
            x=x,
            delta=float(delta),
            basis=basis,
            distinguished=(x0norm, d0),
            omega=omega,
            cfg=cfg,
            zeta=zeta,
            indices=idx,
            gain=gain,
        )
    else:
        zsys = source if source.words is not None else build_Z_system(source, m if m else 2)
        cfg = cfg or FlowConfig(source.box, steps_per_unit=steps_per_unit)
        idx = select_basis(zsys.fields, x, delta, zeta, prev=prev)
        basis = tuple(
            (zsys.fields[i][0].scaled(gain) if gain != 1.0 else zsys.fields[i][0], zsys.fields[i][1])
            for i in idx
        )
        smap = ScalingMap(
            kind="interior",
            x=x,
            delta=float(delta),
            basis=basis,
            distinguished=None,
            omega=1,
            cfg=cfg,
            zeta=zeta,
            indices=idx,
            gain=gain,
        )
    if not np.allclose(smap(np.zeros(len(x))), x, atol=1e-10):
        raise RuntimeError("scaling map does not fix the base point")
    j0 = smap.jacobian(np.zeros(len(x)))
    if not np.isfinite(np.linalg.det(j0)) or abs(np.linalg.det(j0)) < 1e-300:
        raise RuntimeError("scaling map is singular at t = 0")
    return smap


def pullback_field(smap: ScalingMap, V, scale: float):
    """Numerical pullback u -> (d psi(u))^{-1} (scale * V)(psi(u)).

    V may be a VField or a callable on point batches; the result is a
    callable on parameter batches.
    """
    fn = V.eval_many if isinstance(V, VField) else V

    def pulled(U):
        U = np.asarray(U, dtype=float)
        single = U.ndim == 1
        UU = U[None] if single else U
        J = smap.jacobian(UU)
        vals = fn(smap(UU)) * scale
        out = np.linalg.solve(J, vals[..., None])[..., 0]
        return out[0] if single else out

    return pulled


def numeric_bracket(F, G, h: float = 1e-4):
    """Finite-difference Lie bracket of two numerical vector fields."""

    def jac(fn, U):
        B, n = U.shape
        cols = []
        for i in range(n):
            e = np.zeros(n)
            e[i] = h
            cols.append((fn(U + e) - fn(U - e)) / (2 * h))
        return np.stack(cols, axis=-1)  # (B, n, n)

    def br(U):
        U = np.asarray(U, dtype=float)
        single = U.ndim == 1
        UU = U[None] if single else U
        f0, g0 = F(UU), G(UU)
        out = np.einsum("bij,bj->bi", jac(G, UU), f0) - np.einsum("bij,bj->bi", jac(F, UU), g0)
        return out[0] if single else out

    return br


@dataclass(frozen=True)
class SandwichReport:
    x: tuple[float, ...]
    delta: float
    eta1: float
    c0: float
    xi1: float
    outer_fraction: float
    outer_pass: bool
    inner_fractions: tuple[tuple[float, float], ...]  # (xi, pass fraction)
    newton_failures: int
    counterexamples: tuple[tuple[float, ...], ...]

    @property
    def passed(self) -> bool:
        return self.outer_pass and self.xi1 > 0.0


def verify_sandwich(
    sys: WeightedSystem,
    smap: ScalingMap,
    eta1: float = 0.25,
    n_outer: int = 256,
    n_inner: int = 256,
    xi_ladder=None,
    seed: int = 0,
    tol: float = 0.1,
    oracle_cells: int = 24,
    min_fraction: float = 0.99,
) -> SandwichReport:
    """Two-sided ball/cube containment check for one scaling map.

    Outer: psi-images of the eta1-cube must lie in the intrinsic ball at
    delta (1 + tol), tested by oracle reachability dilated by one grid
    cell (the oracle's own surface quantization).  Inner: extrinsic ball
    samples at trial xi * delta, intersected with the chart, must invert
    into the eta1-cube; the largest passing xi is reported.
    """
    x = smap.x
    delta = smap.delta
    n = smap.n
    rng = np.random.default_rng([seed, 17])
    c0 = 0.0 if smap.kind == "near_boundary" else -1.0
    if smap.kind == "interior" and sys.box.has_boundary:
        probe = sample_ball(sys, x, delta, 256, K=8, seed=seed, mode="extrinsic")
        if probe.endpoints[probe.feasible][:, -1].min() <= 0:
            raise ValueError(
                "interior map ball touches the boundary; anchor the map at a boundary point"
            )

    U = rng.uniform(-eta1, eta1, size=(n_outer, n))
    if c0 > -1.0:
        U[:, -1] = np.abs(U[:, -1]) * (1.0 - c0) + c0 * eta1  # t_n in [c0*eta1, eta1]
    pts = smap(U)
    cloud = sample_ball(sys, x, delta * (1 + tol), 512, K=8, seed=seed + 1, mode="intrinsic")
    ref = np.vstack([cloud.feasible_endpoints(), x[None]])
    extent = np.maximum(ref.max(axis=0) - ref.min(axis=0), 1e-6)
    graph = reach_graph(sys, x, delta * (1 + tol), mode="intrinsic", res=extent * 1.3 / oracle_cells)
    member = graph.contains(pts, dilate=1)
    outer_fraction = float(member.mean())
    outer_pass = outer_fraction >= min_fraction
    counterexamples = tuple(tuple(p) for p in pts[~member][:5])

    if xi_ladder is None:
        xi_ladder = [eta1 * f for f in (1.0, 0.5, 0.25, 0.125, 0.0625)]
    inner_fractions = []
    xi1 = 0.0
    failures = 0
    for xi in xi_ladder:
        ball = sample_ball(sys, x, xi * delta, n_inner, K=8, seed=seed + 2, mode="extrinsic")
        ends = ball.feasible_endpoints()
        if sys.box.has_boundary:
            ends = ends[ends[:, -1] >= -BOUNDARY_TOL]
        if len(ends) == 0:
            inner_fractions.append((xi, 0.0))
            continue
        T, okm = smap.invert(ends)
        failures += int((~okm).sum())
        Tc = T[okm]
        if len(Tc) == 0:
            inner_fractions.append((xi, 0.0))
            continue
        inside = np.all(np.abs(Tc) <= eta1 * (1 + 1e-6), axis=1)
        if c0 > -1.0:
            inside &= Tc[:, -1] >= c0 * eta1 - 1e-6
        frac = float(inside.mean())
        inner_fractions.append((xi, frac))
        if frac >= min_fraction and xi > xi1:
            xi1 = xi
    return SandwichReport(
        x=tuple(x),
        delta=delta,
        eta1=eta1,
        c0=c0,
        xi1=xi1,
        outer_fraction=outer_fraction,
        outer_pass=outer_pass,
        inner_fractions=tuple(inner_fractions),
        newton_failures=failures,
        counterexamples=counterexamples,
    )


@dataclass(frozen=True)
class UniformHormanderReport:
    floors: tuple[float, ...]  # per map: min over grid of max subset |det|
    overall_floor: float
    sup_magnitude: float
    order: int


def verify_uniform_hormander(
    maps,
    sys: WeightedSystem,
    m: int,
    grid_half: float = 0.5,
    per_axis: int = 3,
    bracket_h: float = 1e-4,
) -> UniformHormanderReport:
    """Uniform spanning of pulled-back generators across scaling maps.

    For each map the generators are pulled back, bracketed numerically up
    to order m, and the min-over-grid max-subset determinant recorded; the
    report carries the min over all maps (the uniformity floor) and the
    sup of the pulled-back field magnitudes (boundedness clause).
    """
    floors = []
    sup_mag = 0.0
    for smap in maps:
        n = smap.n
        axes = [np.linspace(-grid_half, grid_half, per_axis)] * n
        mesh = np.meshgrid(*axes, indexing="ij")
        grid = np.stack([mm.ravel() for mm in mesh], axis=-1)
        base = [
            pullback_field(smap, vf, smap.delta**d)
            for vf, d in sys.fields
        ]
        fields = list(base)
        prev = [(i, fn) for i, fn in enumerate(base)]
        for order in range(2, m + 1):
            new = []
            for i, bi in enumerate(base):
                for tag, g in prev:
                    if order == 2 and tag <= i:
                        continue  # self and antisymmetric duplicates
                    br = numeric_bracket(bi, g, h=bracket_h)
                    fields.append(br)
                    new.append((i, br))
            prev = new
        cols = np.stack([fn(grid) for fn in fields])  # (q, P, n)
        sup_mag = max(sup_mag, float(np.abs(cols[: len(base)]).max()))
        best = np.zeros(len(grid))
        for combo in itertools.combinations(range(len(fields)), n):
            mats = np.stack([cols[j] for j in combo], axis=-1)
            best = np.maximum(best, np.abs(np.linalg.det(mats)))
        floors.append(float(best.min()))
    return UniformHormanderReport(
        floors=tuple(floors),
        overall_floor=min(floors) if floors else 0.0,
        sup_magnitude=sup_mag,
        order=m,
    )
