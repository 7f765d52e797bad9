"""Hybrid model: a P1 reaction-diffusion region coupled to a well-mixed ODE region.

The two regions exchange information once per step. The PDE side sees the
ODE means, predicted to the new time level with the previous step's flux, as
Dirichlet data on the interface (imposed by a penalty term), and
the ODE side receives the diffusive flux of the new PDE fields across the
interface, divided by the ODE region's area.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fem import FemContext, FluxOperator, interface_edge_mass, subdomain_integrals
from .mesh import HybridSplit, Mesh
from .seir import (
    UNDERSHOOT_WARN,
    EpidemicParams,
    ParamSchedule,
    SeirState,
    Trajectory,
    aggregate_row,
    allee_factor,
    imex_rhs,
    pde_columns,
    reaction_rates,
    time_grid,
)

log = logging.getLogger(__name__)

DEFAULT_PENALTY = 1e6


@dataclass
class OdeCompartment:
    """Mean fractions of the well-mixed region."""

    y: np.ndarray            # (4,) s2, e2, i2, r2
    n2_mean: float           # persons / km^2
    omega2_area: float       # km^2

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).reshape(4)
        if self.omega2_area <= 0:
            raise ValueError("ODE region area must be positive")

    @property
    def population(self) -> float:
        return self.n2_mean * self.omega2_area

    @property
    def totals(self) -> np.ndarray:
        return self.y * self.population

    @classmethod
    def from_totals(cls, S2, E2, I2, R2, omega2_area):
        """Initial means ``S2(0)/N2`` etc. for a region of given area."""
        tot = np.array([S2, E2, I2, R2], dtype=float)
        N2 = tot.sum()
        if N2 <= 0:
            raise ValueError("ODE region population must be positive")
        return cls(tot / N2, N2 / omega2_area, omega2_area)

    @classmethod
    def from_fields(cls, mesh: Mesh, state: SeirState, triangles):
        """Average the full-mesh fields over the given (removed) triangles."""
        f = state.y[:, mesh.triangles[triangles]]             # (4, T, 3)
        d = state.n[mesh.triangles[triangles]]                # (T, 3)
        area = mesh.triangle_areas[triangles]
        tot = (area / 12.0 * (f.sum(-1) * d.sum(-1) + (f * d).sum(-1))).sum(axis=1)
        return cls.from_totals(*tot, omega2_area=float(area.sum()))

    def copy(self):
        return OdeCompartment(self.y.copy(), self.n2_mean, self.omega2_area)


def ode_rhs(ode: OdeCompartment, params: EpidemicParams, flux=None) -> np.ndarray:
    """Mean-field SEIR rates with the Allee factor at the mean density, minus ``flux / |Omega2|``."""
    F = allee_factor(ode.n2_mean, params.allee_A, params.allee_n0)
    rates = reaction_rates(ode.y, ode.n2_mean, params, allee=F)
    if flux is not None:
        rates = rates - np.asarray(flux, dtype=float) / ode.omega2_area
    return rates


def apply_interface_dirichlet(A, rhs, values, penalty, edge_mass):
    """Penalty imposition of interface values.

    Adds ``penalty * edge_mass`` to the diagonal of ``A`` and
    ``penalty * edge_mass * value`` to ``rhs``. ``rhs`` may hold several
    columns, one per entry of ``values``.
    """
    if penalty < 0:
        raise ValueError("penalty must be non-negative")
    if penalty == 0:
        return A, rhs
    w = penalty * np.asarray(edge_mass, dtype=float)
    values = np.asarray(values, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    new_rhs = rhs + (np.outer(w, values) if rhs.ndim == 2 else w * values)
    return A + sp.diags(w), new_rhs


@dataclass
class HybridState:
    time: float
    pde: SeirState | None
    ode: OdeCompartment | None
    flux: np.ndarray = field(default_factory=lambda: np.zeros(4))

    def copy(self):
        return HybridState(self.time,
                           self.pde.copy() if self.pde is not None else None,
                           self.ode.copy() if self.ode is not None else None,
                           self.flux.copy())


class HybridModel:
    """Stepping machinery for one PDE mesh with an interface edge set.

    ``pde_mesh=None`` gives the pure ODE model; ``interface`` empty (or no ODE
    compartment in the state) gives the full PDE model. ``zero_bc`` switches
    off both coupling directions.
    """

    def __init__(self, pde_mesh: Mesh | None, interface=None, penalty=DEFAULT_PENALTY,
                 zero_bc=False, ctx: FemContext | None = None):
        self.mesh = pde_mesh
        self.penalty = float(penalty)
        self.zero_bc = bool(zero_bc)
        self.coupled = False
        self._allee = {}
        if pde_mesh is None:
            self.ctx = None
            self.interface = np.empty((0, 2), dtype=np.int64)
            return
        self.ctx = ctx or FemContext(pde_mesh)
        self.interface = np.empty((0, 2), dtype=np.int64) if interface is None else np.asarray(interface)
        self.coupled = len(self.interface) > 0
        if self.coupled:
            self.flux_op = FluxOperator(pde_mesh, self.interface)
            self.edge_mass = interface_edge_mass(pde_mesh, self.interface)

    @classmethod
    def from_split(cls, split: HybridSplit, **kw):
        return cls(split.pde_mesh, split.interface, **kw)

    def _allee_for(self, n, p):
        key = (p.allee_A, p.allee_n0)
        if key not in self._allee:
            self._allee[key] = allee_factor(n, p.allee_A, p.allee_n0)
        return self._allee[key]

    def penalty_active(self, params: EpidemicParams, has_ode: bool) -> bool:
        # without diffusion there is no interface coupling to enforce
        return (self.mesh is not None and self.coupled and has_ode and not self.zero_bc
                and self.penalty > 0 and params.diffusion > 0)

    def interface_flux(self, y, params: EpidemicParams) -> np.ndarray:
        """Four compartment fluxes ``int_Gamma nu1 . D grad y do``."""
        if self.mesh is None or not self.coupled or self.zero_bc:
            return np.zeros(4)
        return self.flux_op(y, params.diffusion)

    def step(self, state: HybridState, params: EpidemicParams, dt: float) -> HybridState:
        if dt <= 0:
            raise ValueError("dt must be positive")
        ode = state.ode
        pde = state.pde
        flux = np.zeros(4)
        if pde is not None:
            R = reaction_rates(pde.y, pde.n, params, self._allee_for(pde.n, params))
            rhs = imex_rhs(self.ctx, pde.y, dt, R)
            if self.penalty_active(params, ode is not None):
                # Dirichlet data at the new time level: ODE means advanced with last step's flux
                target = ode.y + dt * ode_rhs(ode, params, state.flux)
                w = self.penalty * self.edge_mass
                rhs = rhs + np.outer(w, target)
                solve = self.ctx.step_solver(dt, params.diffusion, w, key=("penalty", self.penalty))
            else:
                solve = self.ctx.step_solver(dt, params.diffusion)
            y_new = np.ascontiguousarray(solve(rhs).T)
            pde = SeirState(pde.time + dt, y_new, pde.n)
            if ode is not None:
                flux = self.interface_flux(y_new, params)
        if ode is not None:
            ode = OdeCompartment(ode.y + dt * ode_rhs(ode, params, flux), ode.n2_mean, ode.omega2_area)
        return HybridState(state.time + dt, pde, ode, flux)


def step_hybrid(state: HybridState, params: EpidemicParams, dt: float, model: HybridModel) -> HybridState:
    """Staggered step: PDE with interface penalty, then flux, then explicit ODE update."""
    return model.step(state, params, dt)


def hybrid_columns(mesh: Mesh | None) -> list:
    pde = [] if mesh is None else [f"pde_{c}" for c in pde_columns(mesh)[1:]]
    return (["time", "S", "E", "I", "R", "N"] + pde
            + ["ode_S", "ode_E", "ode_I", "ode_R", "ode_sum_dev",
               "flux_s", "flux_e", "flux_i", "flux_r"])


def hybrid_row(model: HybridModel, state: HybridState) -> dict:
    row = {"time": round(float(state.time), 10)}
    tot = np.zeros(4)
    if state.pde is not None:
        pr = aggregate_row(model.mesh, state.pde)
        for k, v in pr.items():
            if k != "time":
                row[f"pde_{k}"] = v
        tot += [pr["S"], pr["E"], pr["I"], pr["R"]]
    ode_tot = state.ode.totals if state.ode is not None else np.zeros(4)
    for name, v in zip("SEIR", ode_tot):
        row[f"ode_{name}"] = float(v)
    row["ode_sum_dev"] = float(abs(state.ode.y.sum() - 1.0)) if state.ode is not None else 0.0
    tot += ode_tot
    for name, v in zip("SEIR", tot):
        row[name] = float(v)
    row["N"] = float(tot.sum())
    for name, v in zip("seir", state.flux):
        row[f"flux_{name}"] = float(v)
    return row


def run_hybrid(model: HybridModel, initial: HybridState, schedule: ParamSchedule, t_end: float,
               dt: float = 0.1, record_every: int = 1, snapshot_every: int = 0) -> Trajectory:
    """Integrate the hybrid model, recording PDE aggregates and ODE totals."""
    if isinstance(schedule, EpidemicParams):
        schedule = ParamSchedule.constant(schedule)
    traj = Trajectory(hybrid_columns(model.mesh))
    state = initial.copy()
    traj.append(hybrid_row(model, state))
    if snapshot_every and state.pde is not None:
        traj.snapshots.append((state.time, state.pde.copy()))
    steps = time_grid(t_end, dt)
    worst = 0.0
    for k, h in enumerate(steps, start=1):
        p = schedule.at(state.time)
        state = model.step(state, p, h)
        if state.pde is not None:
            worst = min(worst, state.pde.min_fraction())
        if state.ode is not None:
            worst = min(worst, float(state.ode.y.min()))
        last = k == len(steps)
        if k % record_every == 0 or last:
            traj.append(hybrid_row(model, state))
        if snapshot_every and state.pde is not None and (k % snapshot_every == 0 or last):
            traj.snapshots.append((state.time, state.pde.copy()))
    if worst < -UNDERSHOOT_WARN:
        msg = f"fraction undershoot {worst:.3e}; consider a smaller dt"
        log.warning(msg)
        traj.warnings.append(msg)
    traj.final_state = state
    return traj


def hybrid_initial(mesh: Mesh, split: HybridSplit, state: SeirState) -> HybridState:
    """Split a full-mesh initial state into its PDE restriction and ODE means."""
    pde = SeirState(state.time, state.y[:, split.vertex_map], state.n[split.vertex_map])
    ode = OdeCompartment.from_fields(mesh, state, split.ode_triangles)
    return HybridState(state.time, pde, ode)


def pde_subdomain_infectious(model: HybridModel, state: HybridState) -> dict:
    return subdomain_integrals(model.mesh, state.pde.i, state.pde.n)
