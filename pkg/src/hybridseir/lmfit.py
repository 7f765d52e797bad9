"""Parameter identification with a damped Levenberg-Marquardt iteration.

Two damping mechanisms: ``lambda1`` is added to the normal-equation
diagonal just enough to make it strictly diagonally dominant, and ``lambda2``
scales the step; it is halved after a step that fails to reduce the
weighted residual and reset to 1 after a successful one. A separate
halving keeps iterates componentwise positive.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .fem import FemContext
from .mesh import Mesh
from .seir import EpidemicParams, SeirState
from .sensitivity import simulate_infectious, simulate_with_sensitivities

log = logging.getLogger(__name__)

VID_WEIGHT = 2.0
MAX_HALVINGS = 8          # consecutive rejections before lambda2 is reset to 1
MAX_POSITIVE_HALVINGS = 200


class ForwardModelError(RuntimeError):
    pass


@dataclass
class FitProblem:
    targets: np.ndarray          # (K, L) persons
    sample_times: np.ndarray     # (K,) days
    vid: np.ndarray              # (L,) bool
    p0: np.ndarray               # (sigma, phi_e, phi_i, beta), all > 0
    max_iterations: int = 100
    residual_tolerance: float = 0.0

    def __post_init__(self):
        self.targets = np.atleast_2d(np.asarray(self.targets, dtype=float))
        self.sample_times = np.asarray(self.sample_times, dtype=float).ravel()
        self.vid = np.asarray(self.vid, dtype=bool).ravel()
        self.p0 = np.asarray(self.p0, dtype=float).ravel()
        K, L = self.targets.shape
        if len(self.sample_times) != K or len(self.vid) != L:
            raise ValueError("targets must have shape (len(sample_times), len(vid))")
        if K * L < len(self.p0):
            raise ValueError(f"underdetermined fit: {K * L} residuals for {len(self.p0)} parameters")
        if np.any(self.targets < 0):
            raise ValueError("targets must be non-negative")
        if np.any(self.p0 <= 0):
            raise ValueError("initial parameters must be strictly positive")

    @property
    def weights(self) -> np.ndarray:
        """Residual weights flattened time-major, matching ``F.ravel()``."""
        w = np.where(self.vid, VID_WEIGHT, 1.0)
        return np.tile(w, len(self.sample_times))


# forward(p) -> (I (K, L), J (K, L, 4) or None)
ForwardModel = Callable[[np.ndarray], tuple]


def weighted_residual(p, problem: FitProblem, forward: ForwardModel, with_jacobian=False):
    """``w * (I(t_k; p) - target)`` flattened; optionally with the weighted Jacobian."""
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0):
        raise ValueError("parameters must be strictly positive")
    I, J = forward(p)
    w = problem.weights
    F = w * (np.asarray(I) - problem.targets).ravel()
    if not with_jacobian:
        return F
    if J is None:
        raise ForwardModelError("forward model returned no Jacobian")
    return F, w[:, None] * np.asarray(J).reshape(F.size, -1)


def choose_lambda1(JtJ) -> float:
    """Smallest shift making ``JtJ + lambda1 I`` strictly diagonally dominant, plus ``1e-12 trace``."""
    A = np.asarray(JtJ, dtype=float)
    diag = np.diag(A)
    off = np.abs(A).sum(axis=1) - np.abs(diag)
    eps = 1e-12 * np.trace(A)
    return float(max(0.0, np.max(off - diag)) + eps)


def strictly_diagonally_dominant(A) -> bool:
    A = np.asarray(A)
    d = np.abs(np.diag(A))
    return bool(np.all(d > np.abs(A).sum(axis=1) - d))


def lm_step(J, F, lambda1):
    """Solve ``(J^T J + lambda1 I) dp = -J^T F``."""
    J = np.asarray(J, dtype=float)
    A = J.T @ J + lambda1 * np.eye(J.shape[1])
    return np.linalg.solve(A, -J.T @ np.asarray(F, dtype=float))


@dataclass
class LmRecord:
    iteration: int
    p: np.ndarray
    residual: float
    lambda1: float
    lambda2: float
    accepted: bool


@dataclass
class LmResult:
    p: np.ndarray
    residual: float
    trace: list = field(default_factory=list)
    status: str = "max_iterations"

    @property
    def accepted(self) -> list:
        return [r for r in self.trace if r.accepted]

    @property
    def accepted_iterations(self) -> int:
        return len(self.accepted) - 1


COORDINATES = ("linear", "log", "whitened-log")


class Coordinates:
    """Map between iteration variables ``q`` and physical parameters ``p``.

    ``linear``: ``q = p``. ``log``: ``p = exp(q)``. ``whitened-log``:
    ``p = exp(log p0 + T q)`` with ``T = V S^-1`` from the SVD of the weighted
    log-Jacobian at ``p0``, so the normal matrix starts as the identity and
    the diagonal-dominance shift stays small while columns remain
    decorrelated. The damping loop itself is the same in all three.
    """

    def __init__(self, kind: str, p0, J0_weighted=None):
        if kind not in COORDINATES:
            raise ValueError(f"coordinates must be one of {COORDINATES}, got {kind!r}")
        self.kind = kind
        self.p0 = np.asarray(p0, dtype=float)
        self.T = np.eye(len(self.p0))
        if kind == "whitened-log":
            if J0_weighted is None:
                raise ValueError("whitened coordinates need the initial Jacobian")
            _, S, Vt = np.linalg.svd(np.asarray(J0_weighted) * self.p0, full_matrices=False)
            S = np.maximum(S, 1e-12 * max(S[0], np.finfo(float).tiny))
            self.T = Vt.T / S

    def q0(self):
        if self.kind == "linear":
            return self.p0.copy()
        return np.log(self.p0) if self.kind == "log" else np.zeros_like(self.p0)

    def to_p(self, q):
        if self.kind == "linear":
            return np.asarray(q, dtype=float).copy()
        if self.kind == "log":
            return np.exp(q)
        return np.exp(np.log(self.p0) + self.T @ q)

    def jacobian(self, q, J):
        """Chain rule ``dF/dq`` from ``dF/dp`` (columns = parameters)."""
        if self.kind == "linear":
            return J
        p = self.to_p(q)
        return (J * p) if self.kind == "log" else (J * p) @ self.T


def lm_iterate(problem: FitProblem, forward: ForwardModel, lambda1_rule=choose_lambda1,
               coordinates: str = "linear") -> LmResult:
    """Modified Levenberg-Marquardt loop.

    A trial point that does not lower ``||F||`` is discarded and the step from
    the current point is retried with half the step length. After
    ``MAX_HALVINGS`` consecutive rejections ``lambda2`` is reset to 1; a second
    such run without progress stops with status ``"stagnated"``. Trial points
    with a non-positive component are pulled back by halving a separate step
    factor. ``coordinates`` selects the variables the loop iterates on
    (see :class:`Coordinates`); the trace always reports physical parameters.
    """
    p = problem.p0.copy()
    F, J = weighted_residual(p, problem, forward, with_jacobian=True)
    coords = Coordinates(coordinates, p, J)
    q = coords.q0()
    J = coords.jacobian(q, J)
    norm = float(np.linalg.norm(F))
    result = LmResult(p.copy(), norm)
    result.trace.append(LmRecord(0, p.copy(), norm, 0.0, 1.0, True))
    lam2 = 1.0
    retry = False
    halvings = 0
    resets = 0
    for it in range(1, problem.max_iterations + 1):
        if norm <= problem.residual_tolerance:
            result.status = "converged"
            break
        lam1 = lambda1_rule(J.T @ J)
        dq = lm_step(J, F, lam1)

        lam2_pos = lam2
        trial_q = q + lam2_pos * dq
        n_pos = 0
        while np.any(coords.to_p(trial_q) <= 0):
            n_pos += 1
            if n_pos > MAX_POSITIVE_HALVINGS:
                result.status = "no_positive_step"
                return result
            lam2_pos *= 0.5
            trial_q = q + lam2_pos * dq
        if retry:
            lam2 = lam2_pos
        trial = coords.to_p(trial_q)

        try:
            F_new, J_new = weighted_residual(trial, problem, forward, with_jacobian=True)
            norm_new = float(np.linalg.norm(F_new))
        except (FloatingPointError, np.linalg.LinAlgError):
            norm_new = np.inf
        if not np.isfinite(norm_new):
            norm_new = np.inf

        accepted = norm_new < norm
        result.trace.append(LmRecord(it, trial.copy(), norm_new, lam1, lam2_pos, accepted))
        log.debug("LM %d: p=%s |F|=%.6e lambda1=%.3e lambda2=%.3e %s", it, trial, norm_new, lam1,
                  lam2_pos, "accepted" if accepted else "rejected")
        if accepted:
            q, p, F, norm = trial_q, trial, F_new, norm_new
            J = coords.jacobian(q, J_new)
            result.p, result.residual = p.copy(), norm
            lam2, retry, halvings, resets = 1.0, False, 0, 0
            continue
        lam2 *= 0.5
        retry = True
        halvings += 1
        if halvings >= MAX_HALVINGS:
            resets += 1
            if resets >= 2:
                result.status = "stagnated"
                return result
            lam2, halvings = 1.0, 0
    else:
        if norm <= problem.residual_tolerance:
            result.status = "converged"
    return result


class PdeForwardModel:
    """Full-PDE forward model with analytic (sensitivity) Jacobian.

    ``base`` supplies the non-fitted parameters (diffusion, Allee constants).
    """

    def __init__(self, mesh: Mesh, initial: SeirState, base: EpidemicParams, sample_times, dt=0.1,
                 ctx: FemContext | None = None):
        self.mesh = mesh
        self.initial = initial
        self.base = base
        self.sample_times = np.asarray(sample_times, dtype=float)
        self.dt = dt
        self.ctx = ctx or FemContext(mesh)
        self.evaluations = 0

    def __call__(self, p):
        self.evaluations += 1
        params = self.base.with_fit_vector(p)
        I, J, _ = simulate_with_sensitivities(self.mesh, self.initial, params, self.sample_times,
                                              self.dt, self.ctx)
        if not (np.all(np.isfinite(I)) and np.all(np.isfinite(J))):
            raise FloatingPointError("non-finite forward model output")
        return I, J

    def final_state(self, p) -> SeirState:
        params = self.base.with_fit_vector(p)
        _, st = simulate_infectious(self.mesh, self.initial, params, self.sample_times, self.dt, self.ctx)
        return st


class FiniteDifferenceForward:
    """Wrap ``values(p) -> (K, L)`` with a central-difference Jacobian.

    Components at (or numerically near) zero use a forward difference.
    """

    def __init__(self, values: Callable, rel_step=1e-4, abs_step=1e-8):
        self.values = values
        self.rel_step = rel_step
        self.abs_step = abs_step

    def __call__(self, p):
        p = np.asarray(p, dtype=float)
        I = np.asarray(self.values(p))
        J = np.empty(I.shape + (len(p),))
        for m in range(len(p)):
            h = max(self.rel_step * abs(p[m]), self.abs_step)
            up = p.copy()
            up[m] += h
            if p[m] - h > 0:
                dn = p.copy()
                dn[m] -= h
                J[..., m] = (np.asarray(self.values(up)) - np.asarray(self.values(dn))) / (2 * h)
            else:
                J[..., m] = (np.asarray(self.values(up)) - I) / h
        return I, J


class HybridValues:
    """Infectious counts of a hybrid run: one column per PDE subdomain, then the ODE region."""

    def __init__(self, model, initial, base: EpidemicParams, sample_times, dt=0.1):
        from .sensitivity import sample_steps

        self.model = model
        self.initial = initial
        self.base = base
        self.steps = sample_steps(sample_times, dt)
        self.dt = dt

    def __call__(self, p):
        from .hybrid import pde_subdomain_infectious

        params = self.base.with_fit_vector(p)
        state = self.initial.copy()
        labels = self.model.mesh.labels if self.model.mesh is not None else []
        out = np.empty((len(self.steps), len(labels) + 1))
        k = 0
        for j, target in enumerate(self.steps):
            while k < target:
                state = self.model.step(state, params, self.dt)
                k += 1
            if labels:
                per = pde_subdomain_infectious(self.model, state)
                out[j, :-1] = [per[l] for l in labels]
            out[j, -1] = state.ode.totals[2]
        if not np.all(np.isfinite(out)):
            raise FloatingPointError("non-finite hybrid model output")
        return out


def merge_ode_columns(targets, vid, ode_labels):
    """Move the columns of ODE subdomains (1-based labels) into one summed last column."""
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    vid = np.asarray(vid, dtype=bool)
    ode = np.zeros(targets.shape[1], dtype=bool)
    ode[np.asarray(sorted(ode_labels)) - 1] = True
    merged = np.column_stack([targets[:, ~ode], targets[:, ode].sum(axis=1)])
    return merged, np.append(vid[~ode], vid[ode].any())


@dataclass
class SegmentFit:
    start: float
    end: float
    params: EpidemicParams
    result: LmResult


def fit_segments(mesh: Mesh, initial: SeirState, base_params, starts, targets_by_segment, vid,
                 dt=0.1, max_iterations=100, residual_tolerance=0.0, p0=None,
                 coordinates="whitened-log"):
    """Fit each time interval in turn, carrying the end state into the next one.

    ``base_params`` is one EpidemicParams per segment (supplying diffusion and
    Allee constants, and the initial guess when ``p0`` is None).
    ``targets_by_segment[j]`` is ``(times relative to segment start, (K, L) targets)``.
    """
    state = initial.copy()
    fits = []
    ctx = FemContext(mesh)
    for j, (start, base) in enumerate(zip(starts, base_params)):
        times, targets = targets_by_segment[j]
        guess = base.fit_vector if p0 is None else np.asarray(p0[j], dtype=float)
        problem = FitProblem(targets, times, vid, guess, max_iterations, residual_tolerance)
        fwd = PdeForwardModel(mesh, state, base, times, dt, ctx)
        res = lm_iterate(problem, fwd, coordinates=coordinates)
        fitted = base.with_fit_vector(res.p)
        end = start + float(times[-1])
        fits.append(SegmentFit(start, end, fitted, res))
        state = fwd.final_state(res.p)
        state.time = end
    return fits


def format_report(result: LmResult, names=("sigma", "phi_e", "phi_i", "beta")) -> str:
    lines = [f"# status: {result.status}",
             "iteration " + " ".join(names) + " residual lambda1 lambda2 accepted"]
    for r in result.trace:
        ps = " ".join(f"{v:.10e}" for v in r.p)
        lines.append(f"{r.iteration} {ps} {r.residual:.10e} {r.lambda1:.6e} {r.lambda2:.6e} "
                     f"{'yes' if r.accepted else 'no'}")
    return "\n".join(lines) + "\n"
