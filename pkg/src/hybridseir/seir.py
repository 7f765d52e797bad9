"""Reaction-diffusion SEIR model on a P1 mesh.

Fractions ``s, e, i, r`` are stored together as one ``(4, V)`` array; the
population density ``n`` is static. Time stepping is IMEX: reaction explicit,
diffusion implicit, homogeneous Neumann boundary (natural, no boundary term).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .fem import FemContext, subdomain_integrals
from .mesh import Mesh

log = logging.getLogger(__name__)

COMPARTMENTS = ("s", "e", "i", "r")
UNDERSHOOT_WARN = 1e-6


class ParameterError(ValueError):
    pass


@dataclass(frozen=True)
class EpidemicParams:
    """Rates in 1/day, diffusion in km^2/day, Allee constants in persons/km^2."""

    sigma: float
    phi_e: float
    phi_i: float
    beta_i: float
    beta_e: float
    diffusion: float
    allee_A: float = 0.0
    allee_n0: float | None = None

    def __post_init__(self):
        if self.allee_n0 is None:
            object.__setattr__(self, "allee_n0", 1.5 * self.allee_A)
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v) or v < 0:
                raise ParameterError(f"{f.name} must be finite and non-negative, got {v}")
        if self.allee_n0 < 1.5 * self.allee_A * (1 - 1e-12):
            raise ParameterError(
                f"allee_n0={self.allee_n0} violates allee_n0 >= 1.5 * allee_A = {1.5 * self.allee_A}")

    @property
    def fit_vector(self) -> np.ndarray:
        """The identified parameters ``(sigma, phi_e, phi_i, beta)``."""
        return np.array([self.sigma, self.phi_e, self.phi_i, self.beta_i])

    def with_fit_vector(self, p) -> "EpidemicParams":
        sigma, phi_e, phi_i, beta = (float(x) for x in p)
        return replace(self, sigma=sigma, phi_e=phi_e, phi_i=phi_i, beta_i=beta, beta_e=beta)

    def to_dict(self) -> dict:
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}


@dataclass(frozen=True)
class ParamSchedule:
    """Piecewise-constant parameters; entry k is active on ``[start_k, start_{k+1})``."""

    starts: tuple
    params: tuple

    def __post_init__(self):
        starts = tuple(float(s) for s in self.starts)
        object.__setattr__(self, "starts", starts)
        object.__setattr__(self, "params", tuple(self.params))
        if not starts or starts[0] != 0.0:
            raise ParameterError("schedule must start at day 0")
        if len(starts) != len(self.params):
            raise ParameterError("schedule starts and params differ in length")
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ParameterError(f"schedule start days must be strictly increasing, got {starts}")

    @classmethod
    def constant(cls, params: EpidemicParams) -> "ParamSchedule":
        return cls((0.0,), (params,))

    def index_at(self, t: float) -> int:
        k = 0
        for j, s in enumerate(self.starts):
            if s <= t + 1e-9:
                k = j
        return k

    def at(self, t: float) -> EpidemicParams:
        return self.params[self.index_at(t)]


def allee_factor(n, A, n0):
    """Density-dependent transmission factor ``1 - A / (n + n0)``.

    Requires ``n >= 0`` and ``n0 >= 1.5 A`` so that the result lies in ``[1/3, 1]``.
    ``A = n0 = 0`` switches the effect off.
    """
    n = np.asarray(n, dtype=float)
    if A < 0 or n0 < 1.5 * A * (1 - 1e-12):
        raise ParameterError(f"need n0 >= 1.5 A >= 0, got A={A}, n0={n0}")
    if np.any(n < 0):
        raise ParameterError("population density must be non-negative")
    if A == 0:
        return np.ones_like(n)[()]
    return (1.0 - A / (n + n0))[()]


def reaction_rates(y, n, params: EpidemicParams, allee=None):
    """Pointwise SEIR reaction terms.

    ``y`` holds ``(s, e, i, r)`` along axis 0 (any trailing shape); returns
    the four rates in the same layout. The rates sum to zero exactly.
    """
    s, e, i, _ = y
    F = allee_factor(n, params.allee_A, params.allee_n0) if allee is None else allee
    infection = F * s * (params.beta_e * e + params.beta_i * i)
    incubation = params.sigma * e
    rec_e = params.phi_e * e
    rec_i = params.phi_i * i
    ds = -infection
    de = infection - incubation - rec_e
    di = incubation - rec_i
    # removed is written as the negated sum so the four rates cancel exactly
    dr = -(ds + de + di)
    return np.stack([ds, de, di, dr])


@dataclass
class SeirState:
    time: float
    y: np.ndarray          # (4, V) fractions s, e, i, r
    n: np.ndarray          # (V,) persons / km^2

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.n = np.asarray(self.n, dtype=float)
        if self.y.shape != (4, self.n.size):
            raise ValueError(f"state shape {self.y.shape} does not match density of length {self.n.size}")

    s = property(lambda self: self.y[0])
    e = property(lambda self: self.y[1])
    i = property(lambda self: self.y[2])
    r = property(lambda self: self.y[3])

    @classmethod
    def from_fractions(cls, s, e, i, r, n, time=0.0, check=True):
        n = np.asarray(n, dtype=float)
        y = np.stack([np.broadcast_to(np.asarray(c, dtype=float), n.shape) for c in (s, e, i, r)])
        state = cls(time, y.copy(), n)
        if check:
            dev = state.sum_deviation()
            if dev > 1e-8:
                raise ValueError(f"s+e+i+r deviates from 1 by {dev:.3e}")
        return state

    def sum_deviation(self) -> float:
        return float(np.abs(self.y.sum(axis=0) - 1.0).max()) if self.n.size else 0.0

    def min_fraction(self) -> float:
        return float(self.y.min()) if self.n.size else 0.0

    def copy(self) -> "SeirState":
        return SeirState(self.time, self.y.copy(), self.n.copy())


@dataclass
class Trajectory:
    """Recorded aggregate rows plus optional field snapshots."""

    columns: list
    rows: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)   # (time, SeirState)
    warnings: list = field(default_factory=list)
    final_state: object = None

    def append(self, row: dict):
        if self.rows and row["time"] <= self.rows[-1]["time"]:
            raise ValueError("trajectory times must be strictly increasing")
        self.rows.append(row)

    @property
    def times(self) -> np.ndarray:
        return np.array([r["time"] for r in self.rows])

    def column(self, name) -> np.ndarray:
        return np.array([r[name] for r in self.rows])

    def __len__(self):
        return len(self.rows)


def aggregate_row(mesh: Mesh, state: SeirState) -> dict:
    """Compartment totals ``int y n dx`` and per-subdomain infectious counts."""
    row = {"time": round(float(state.time), 10)}
    totals = {}
    for name, comp in zip("SEIR", state.y):
        per = subdomain_integrals(mesh, comp, state.n)
        totals[name] = per
        row[name] = float(sum(per.values()))
    row["N"] = row["S"] + row["E"] + row["I"] + row["R"]
    for lab, v in totals["I"].items():
        row[f"I_{lab}"] = v
    row["sum_dev"] = state.sum_deviation()
    row["min_fraction"] = state.min_fraction()
    return row


def pde_columns(mesh: Mesh) -> list:
    return ["time", "S", "E", "I", "R", "N"] + [f"I_{l}" for l in mesh.labels] + ["sum_dev", "min_fraction"]


def imex_rhs(ctx: FemContext, y, dt, rates):
    """Right-hand sides ``M (y + dt R)`` for every compartment, shape (V, k)."""
    return np.asarray(ctx.M @ (y + dt * rates).T)


def step_full_pde(state: SeirState, params: EpidemicParams, dt: float, ctx: FemContext,
                  allee=None) -> SeirState:
    """One IMEX step ``(M + dt K) y' = M (y + dt R(y))`` for all four compartments."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    R = reaction_rates(state.y, state.n, params, allee)
    solve = ctx.step_solver(dt, params.diffusion)
    y_new = solve(imex_rhs(ctx, state.y, dt, R)).T
    return SeirState(state.time + dt, np.ascontiguousarray(y_new), state.n)


def time_grid(t_end: float, dt: float) -> list:
    """Step sizes covering ``[0, t_end]``; the last one is shortened if needed."""
    if t_end < 0 or dt <= 0:
        raise ValueError("need t_end >= 0 and dt > 0")
    n = int(math.floor(t_end / dt + 1e-9))
    steps = [dt] * n
    rest = t_end - n * dt
    if rest > 1e-9 * max(dt, 1.0):
        steps.append(rest)
    return steps


def run_full_pde(mesh: Mesh, initial: SeirState, schedule: ParamSchedule, t_end: float,
                 dt: float = 0.1, record_every: int = 1, snapshot_every: int = 0,
                 ctx: FemContext | None = None) -> Trajectory:
    """Integrate the full PDE model, switching parameters at schedule boundaries."""
    if isinstance(schedule, EpidemicParams):
        schedule = ParamSchedule.constant(schedule)
    ctx = ctx or FemContext(mesh)
    traj = Trajectory(pde_columns(mesh))
    state = initial.copy()
    traj.append(aggregate_row(mesh, state))
    if snapshot_every:
        traj.snapshots.append((state.time, state.copy()))
    allee_cache = {}
    steps = time_grid(t_end, dt)
    worst = 0.0
    for k, h in enumerate(steps, start=1):
        p = schedule.at(state.time)
        key = (p.allee_A, p.allee_n0)
        if key not in allee_cache:
            allee_cache[key] = allee_factor(state.n, p.allee_A, p.allee_n0)
        state = step_full_pde(state, p, h, ctx, allee=allee_cache[key])
        worst = min(worst, state.min_fraction())
        last = k == len(steps)
        if k % record_every == 0 or last:
            traj.append(aggregate_row(mesh, state))
        if snapshot_every and (k % snapshot_every == 0 or last):
            traj.snapshots.append((state.time, state.copy()))
    if worst < -UNDERSHOOT_WARN:
        msg = f"fraction undershoot {worst:.3e}; consider a smaller dt"
        log.warning(msg)
        traj.warnings.append(msg)
    traj.final_state = state
    return traj
