"""Forward sensitivities of the SEIR PDE with respect to ``p = (sigma, phi_e, phi_i, beta)``.

``beta`` stands for both infection rates (``beta_e = beta_i``). The
variational equations for ``d(s, e, i)/dp_m`` share the diffusion operator and
the Neumann boundary of the base model and start from zero; they are
advanced with the same IMEX scheme, reusing the base step's factorization.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fem import FemContext, integrate_weighted, subdomain_integrals
from .mesh import Mesh
from .seir import EpidemicParams, SeirState, allee_factor, imex_rhs, reaction_rates, step_full_pde

PARAM_NAMES = ("sigma", "phi_e", "phi_i", "beta")


@dataclass
class SensitivityState:
    base: SeirState
    sens: np.ndarray        # (4 params, 3 fields s/e/i, V)

    @classmethod
    def start(cls, base: SeirState) -> "SensitivityState":
        return cls(base.copy(), np.zeros((4, 3, base.n.size)))

    @property
    def time(self):
        return self.base.time


def _check_beta(params: EpidemicParams):
    if params.beta_e != params.beta_i:
        raise ValueError("sensitivities assume beta_e == beta_i")


def sensitivity_reaction_rates(base_y, sens, params: EpidemicParams, m=None, allee=None, n=None):
    """Reaction parts of the variational equations.

    ``base_y`` holds ``(s, e, i[, r])``; ``sens`` holds ``(ds, de, di)`` for one
    parameter (shape (3, ...)) when ``m`` in 1..4 is given, or for all four
    (shape (4, 3, ...)) when ``m`` is None. The Allee factor comes from
    ``allee`` or is evaluated at density ``n``.
    """
    _check_beta(params)
    if m is not None and m not in (1, 2, 3, 4):
        raise ValueError(f"parameter index m must be in 1..4, got {m}")
    s, e, i = base_y[0], base_y[1], base_y[2]
    F = allee if allee is not None else allee_factor(n, params.allee_A, params.allee_n0)
    beta = params.beta_i
    q = e + i
    forcing = np.zeros((4, 3) + np.shape(s))
    forcing[0, 1] = -e          # sigma: exposed leave ...
    forcing[0, 2] = e           # ... and become infectious
    forcing[1, 1] = -e          # phi_e
    forcing[2, 2] = -i          # phi_i
    forcing[3, 0] = -F * s * q  # beta
    forcing[3, 1] = F * s * q

    S = np.asarray(sens, dtype=float)
    single = m is not None
    if single:
        S = S[None]
    ds, de, di = S[:, 0], S[:, 1], S[:, 2]
    lin_inf = F * beta * (q * ds + s * (de + di))
    out = np.empty_like(S)
    out[:, 0] = -lin_inf
    out[:, 1] = lin_inf - (params.sigma + params.phi_e) * de
    out[:, 2] = params.sigma * de - params.phi_i * di
    if single:
        return out[0] + forcing[m - 1]
    return out + forcing


def step_with_sensitivities(state: SensitivityState, params: EpidemicParams, dt: float, ctx: FemContext,
                            allee=None) -> SensitivityState:
    """Advance base fields and all 12 sensitivity fields by one IMEX step."""
    _check_beta(params)
    base = state.base
    F = allee if allee is not None else allee_factor(base.n, params.allee_A, params.allee_n0)
    V = base.n.size
    R = reaction_rates(base.y, base.n, params, allee=F)
    RS = sensitivity_reaction_rates(base.y, state.sens, params, allee=F)
    y_all = np.concatenate([base.y, state.sens.reshape(12, V)])
    r_all = np.concatenate([R, RS.reshape(12, V)])
    solve = ctx.step_solver(dt, params.diffusion)
    out = np.ascontiguousarray(solve(imex_rhs(ctx, y_all, dt, r_all)).T)
    new_base = SeirState(base.time + dt, out[:4], base.n)
    return SensitivityState(new_base, out[4:].reshape(4, 3, V))


def jacobian_row(state: SensitivityState, mesh: Mesh, label: int, m: int) -> float:
    """``d I_l / d p_m = int_{Omega_l} n d i / d p_m dx``."""
    if m not in (1, 2, 3, 4):
        raise ValueError(f"parameter index m must be in 1..4, got {m}")
    return integrate_weighted(mesh, state.sens[m - 1, 2], state.base.n, [label])


def infectious_and_jacobian(mesh: Mesh, state: SensitivityState):
    """Subdomain infectious counts (L,) and their parameter derivatives (L, 4)."""
    labels = mesh.labels
    per = subdomain_integrals(mesh, state.base.i, state.base.n)
    I = np.array([per[l] for l in labels])
    J = np.empty((len(labels), 4))
    for m in range(4):
        d = subdomain_integrals(mesh, state.sens[m, 2], state.base.n)
        J[:, m] = [d[l] for l in labels]
    return I, J


def sample_steps(sample_times, dt) -> list:
    steps = []
    for t in sample_times:
        k = int(round(t / dt))
        if abs(k * dt - t) > 1e-9 * max(1.0, t):
            raise ValueError(f"sample time {t} is not a multiple of dt={dt}")
        steps.append(k)
    if any(b <= a for a, b in zip(steps, steps[1:])) or (steps and steps[0] < 0):
        raise ValueError("sample times must be non-negative and strictly increasing")
    return steps


def simulate_with_sensitivities(mesh: Mesh, initial: SeirState, params: EpidemicParams, sample_times,
                                dt=0.1, ctx: FemContext | None = None):
    """Run base + sensitivity system; return ``(I (K, L), J (K, L, 4), final SensitivityState)``."""
    ctx = ctx or FemContext(mesh)
    steps = sample_steps(sample_times, dt)
    F = allee_factor(initial.n, params.allee_A, params.allee_n0)
    st = SensitivityState.start(initial)
    I = np.empty((len(steps), len(mesh.labels)))
    J = np.empty((len(steps), len(mesh.labels), 4))
    k = 0
    for j, target in enumerate(steps):
        while k < target:
            st = step_with_sensitivities(st, params, dt, ctx, allee=F)
            k += 1
        I[j], J[j] = infectious_and_jacobian(mesh, st)
    return I, J, st


def simulate_infectious(mesh: Mesh, initial: SeirState, params: EpidemicParams, sample_times,
                        dt=0.1, ctx: FemContext | None = None):
    """Base model only: subdomain infectious counts at the sample times, shape (K, L)."""
    ctx = ctx or FemContext(mesh)
    steps = sample_steps(sample_times, dt)
    F = allee_factor(initial.n, params.allee_A, params.allee_n0)
    st = initial.copy()
    I = np.empty((len(steps), len(mesh.labels)))
    k = 0
    for j, target in enumerate(steps):
        while k < target:
            st = step_full_pde(st, params, dt, ctx, allee=F)
            k += 1
        per = subdomain_integrals(mesh, st.i, st.n)
        I[j] = [per[l] for l in mesh.labels]
    return I, st

