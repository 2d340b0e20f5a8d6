"""ODE flow maps of vector fields and composite commutator flows.

All integration is fixed-step RK4 so that repeated runs produce
byte-identical output; the error budget of the toolkit is dominated by
sampling, not by the integrator.  Trajectories that leave the guarded
chart (the domain box inflated by 25%) abort with FlowExcursionError.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .hormander import Box, WeightedSystem
from .symexpr import VField

__all__ = [
    "FlowConfig",
    "FlowExcursionError",
    "BracketWordFlow",
    "rk4_flow",
    "exp_flow",
    "exp_flow_many",
    "commutator_flow_C",
    "flow_D",
    "flow_E",
    "map_F",
]


class FlowExcursionError(RuntimeError):
    """Trajectory left the guarded domain or became non-finite."""

    def __init__(self, message: str, point=None):
        super().__init__(message)
        self.point = point


@dataclass(frozen=True)
class FlowConfig:
    """Fixed-step RK4 configuration with a guarded integration domain."""

    box: Box
    steps_per_unit: int = 256
    guard_factor: float = 1.25

    def __post_init__(self):
        if self.steps_per_unit < 16:
            raise ValueError("steps_per_unit must be >= 16")
        if self.guard_factor <= 0:
            raise ValueError("guard factor must be positive")

    @classmethod
    def for_system(cls, sys: WeightedSystem, steps_per_unit: int = 256) -> "FlowConfig":
        return cls(box=sys.box, steps_per_unit=steps_per_unit)

    def with_steps(self, steps_per_unit: int) -> "FlowConfig":
        return replace(self, steps_per_unit=steps_per_unit)


def _guard_ok(cfg: FlowConfig, pts: np.ndarray) -> np.ndarray:
    finite = np.all(np.isfinite(pts), axis=-1)
    inside = cfg.box.contains(pts, inflate=cfg.guard_factor)
    return finite & inside


def rk4_flow(velocity, p0: np.ndarray, times, cfg: FlowConfig, n_steps: int | None = None) -> np.ndarray:
    """Integrate y' = velocity(y) from rows of p0 over per-row times.

    velocity maps an array of shape (B, n) to velocities of the same
    shape; `times` is a scalar or a length-B array.  Raises
    FlowExcursionError if any row leaves the guarded box.
    """
    y = np.array(p0, dtype=float)
    single = y.ndim == 1
    if single:
        y = y[None, :]
    t = np.broadcast_to(np.asarray(times, dtype=float), (len(y),)).astype(float)
    tmax = float(np.abs(t).max())
    if tmax == 0.0:
        return y[0].copy() if single else y
    if n_steps is None:
        n_steps = max(1, math.ceil(tmax * cfg.steps_per_unit))
    dt = (t / n_steps)[:, None]
    for _ in range(n_steps):
        k1 = velocity(y)
        k2 = velocity(y + 0.5 * dt * k1)
        k3 = velocity(y + 0.5 * dt * k2)
        k4 = velocity(y + dt * k3)
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        ok = _guard_ok(cfg, y)
        if not np.all(ok):
            bad = int(np.argmin(ok))
            raise FlowExcursionError(f"trajectory left guarded domain at {y[bad]}", y[bad])
    return y[0] if single else y


def field_velocity(vf: VField):
    return lambda pts: vf.eval_many(pts)


def exp_flow(X: VField, t: float, p, cfg: FlowConfig) -> np.ndarray:
    """Endpoint of the flow e^{tX} p."""
    return rk4_flow(field_velocity(X), np.asarray(p, dtype=float), t, cfg)


def exp_flow_many(X: VField, times, pts: np.ndarray, cfg: FlowConfig) -> np.ndarray:
    return rk4_flow(field_velocity(X), pts, times, cfg)


def commutator_flow_C(l: int, t: float, S, p, cfg: FlowConfig) -> np.ndarray:
    """Composite flow whose leading behavior is the iterated bracket.

    C_1(t, S1) = e^{t S1} and recursively
    C_l(t) = e^{-t S_l} o C_{l-1}^{-1} o e^{t S_l} o C_{l-1},
    so that C_l(t) x = x + t^l [S_1,[S_2,[...,[S_{l-1},S_l]]]](x) + O(t^{l+1}).
    """
    S = list(S)
    if l < 1 or len(S) < l:
        raise ValueError("need l >= 1 fields")
    return _apply_C(l, t, S, np.asarray(p, dtype=float), cfg)


def _apply_C(l: int, t: float, S, p: np.ndarray, cfg: FlowConfig) -> np.ndarray:
    if l == 1:
        return exp_flow(S[0], t, p, cfg)
    q = _apply_C(l - 1, t, S, p, cfg)
    q = exp_flow(S[l - 1], t, q, cfg)
    q = _apply_C_inv(l - 1, t, S, q, cfg)
    return exp_flow(S[l - 1], -t, q, cfg)


def _apply_C_inv(l: int, t: float, S, p: np.ndarray, cfg: FlowConfig) -> np.ndarray:
    if l == 1:
        return exp_flow(S[0], -t, p, cfg)
    q = exp_flow(S[l - 1], t, p, cfg)
    q = _apply_C(l - 1, t, S, q, cfg)
    q = exp_flow(S[l - 1], -t, q, cfg)
    return _apply_C_inv(l - 1, t, S, q, cfg)


@dataclass(frozen=True)
class BracketWordFlow:
    """A bracket word over an extended generator list with flow machinery.

    `generators[0]` is the distinguished transversal field; `word` indexes
    into `generators` and `target` is the iterated bracket
    [g_{w_1},[g_{w_2},[...]]].  The sign-reversed flow variant flips the
    generator at `flip_pos`, which must not be the distinguished one.
    """

    generators: tuple[VField, ...]
    word: tuple[int, ...]
    target: VField
    flip_pos: int

    @property
    def k(self) -> int:
        return len(self.word)

    @classmethod
    def make(cls, generators, word, flip_pos: int | None = None) -> "BracketWordFlow":
        generators = tuple(generators)
        word = tuple(int(i) for i in word)
        if not word:
            raise ValueError("empty word")
        f = generators[word[-1]]
        for j in reversed(word[:-1]):
            f = generators[j].bracket(f)
        if flip_pos is None:
            nondist = [i for i, g in enumerate(word) if g != 0]
            flip_pos = nondist[0] if nondist else -1
        if flip_pos >= 0 and word[flip_pos] == 0:
            raise ValueError("cannot flip the distinguished generator")
        return cls(generators, word, f, flip_pos)


def flow_D(bwf: BracketWordFlow, sign: int, t: float, p, cfg: FlowConfig) -> np.ndarray:
    """D^+(t) = C_k(t, g_{w_1}, ..., g_{w_k}); D^- flips one non-distinguished slot.

    Leading behavior: D^{+/-}(t) p = p +/- t^k * target(p) + O(t^{k+1}).
    """
    if t < 0:
        raise ValueError("flow_D takes t >= 0; use flow_E for signed arguments")
    fields = [bwf.generators[i] for i in bwf.word]
    if sign < 0:
        if bwf.flip_pos < 0:
            raise ValueError("word has no non-distinguished generator to flip")
        fields[bwf.flip_pos] = fields[bwf.flip_pos].negated()
    return commutator_flow_C(bwf.k, t, fields, p, cfg)


def flow_E(bwf: BracketWordFlow, t: float, p, cfg: FlowConfig) -> np.ndarray:
    """C^1 reparametrization with d/dt|_0 E(t) p = target(p)."""
    if t == 0.0:
        return np.asarray(p, dtype=float).copy()
    return flow_D(bwf, 1 if t > 0 else -1, abs(t) ** (1.0 / bwf.k), p, cfg)


def map_F(y, basis, t, cfg: FlowConfig) -> np.ndarray:
    """F_y(t) = e^{t_1 g_0} E_2(t_2) ... E_n(t_n) y.

    basis[0] must be the length-one word of the distinguished generator;
    the Jacobian of F_y at t = 0 is the column matrix of the targets.
    """
    basis = list(basis)
    t = np.asarray(t, dtype=float)
    if len(basis) != len(t):
        raise ValueError("need one bracket word per coordinate")
    if basis[0].word != (0,):
        raise ValueError("basis[0] must be the distinguished generator word (0,)")
    p = np.asarray(y, dtype=float)
    for j in range(len(basis) - 1, 0, -1):
        p = flow_E(basis[j], float(t[j]), p, cfg)
    return exp_flow(basis[0].generators[0], float(t[0]), p, cfg)
