"""Initial fields from aggregated subdomain counts or from point populations.

Population density is a non-negative combination of isotropic Gaussians.
Compartment fractions use the same Gaussians divided by the fitted density,
``y(x) = sum_k w_k G_k(x) / n(x)``, so a compartment whose counts are
proportional to the population comes out spatially constant.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.optimize
import scipy.sparse as sp
from scipy.spatial import cKDTree
from scipy.special import logsumexp
import scipy.sparse.linalg as spla

from .fem import assemble_stiffness, lumped_mass
from .mesh import Mesh
from .seir import SeirState


class InitialFitError(ValueError):
    pass


@dataclass(frozen=True)
class GaussianBasis:
    centers: np.ndarray   # (L~, 2) km
    std_dev: float        # km

    def __post_init__(self):
        object.__setattr__(self, "centers", np.atleast_2d(np.asarray(self.centers, dtype=float)))
        if self.std_dev <= 0:
            raise ValueError("Gaussian std_dev must be positive")

    def __len__(self):
        return len(self.centers)

    def log_evaluate(self, points) -> np.ndarray:
        """``log G_k(x)`` for points (P, 2), shape (P, L~)."""
        d2 = ((np.asarray(points)[:, None, :] - self.centers[None, :, :]) ** 2).sum(-1)
        return -d2 / (2.0 * self.std_dev**2) - np.log(2.0 * np.pi * self.std_dev**2)

    def evaluate(self, points) -> np.ndarray:
        return np.exp(self.log_evaluate(points))

    @classmethod
    def at_centroids(cls, mesh: Mesh, std_dev: float, extra_centers=None) -> "GaussianBasis":
        """One Gaussian per subdomain at its area centroid, plus optional extra centers."""
        c = [mesh.subdomains[l].centroid for l in mesh.labels]
        if extra_centers is not None:
            c.extend(np.atleast_2d(extra_centers))
        return cls(np.array(c), std_dev)


@dataclass(frozen=True)
class ProvinceData:
    """Per-subdomain counts, ordered by subdomain label 1..L."""

    population: np.ndarray
    infectious: np.ndarray
    removed: np.ndarray
    sigma_e: float = 1.0    # exposed = sigma_e * infectious; no published value

    def __post_init__(self):
        for name in ("population", "infectious", "removed"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if np.any(self.susceptible < 0) or np.any(self.infectious < 0) or np.any(self.removed < 0):
            raise InitialFitError("province counts inconsistent: need N >= (1 + sigma_e) I + R >= 0")

    @property
    def exposed(self) -> np.ndarray:
        return self.sigma_e * self.infectious

    @property
    def susceptible(self) -> np.ndarray:
        return self.population - (1.0 + self.sigma_e) * self.infectious - self.removed


def nodal_subdomain_integrals(mesh: Mesh, basis_nodal, density=None) -> np.ndarray:
    """``int_{Omega_l} b_k [n] dx`` for nodal basis values (V, K); returns (L, K)."""
    B = np.asarray(basis_nodal, dtype=float)
    d = np.ones(mesh.vertex_count) if density is None else np.asarray(density, dtype=float)
    bt = B[mesh.triangles]                        # (T, 3, K)
    dt = d[mesh.triangles]                        # (T, 3)
    per_tri = (mesh.triangle_areas / 12.0)[:, None] * (
        bt.sum(1) * dt.sum(1)[:, None] + np.einsum("tjk,tj->tk", bt, dt))
    out = np.zeros((len(mesh.labels), B.shape[1]))
    np.add.at(out, mesh.triangle_labels - 1, per_tri)
    return out


def basis_subdomain_integrals(basis: GaussianBasis, mesh: Mesh, density=None) -> np.ndarray:
    """Matrix of ``int_{Omega_l} G_k(x) [n(x)] dx`` (rows: subdomains, columns: Gaussians).

    Gaussians enter through their P1 interpolants so that the entries are
    exactly the integrals of the nodal fields later built from them.
    """
    return nodal_subdomain_integrals(mesh, basis.evaluate(mesh.vertices), density)


def nnls(A, b, maxiter=None):
    """``min ||A x - b||`` subject to ``x >= 0`` (Lawson-Hanson active set, via SciPy).

    Returns ``(x, residual_norm)``.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    try:
        x, _ = scipy.optimize.nnls(A, b, maxiter=maxiter)
    except RuntimeError as exc:
        raise InitialFitError(f"NNLS did not converge: {exc}") from None
    return x, float(np.linalg.norm(A @ x - b))


def fit_weights(integrals, targets, nonneg=True):
    """Weights matching subdomain integrals to targets.

    With ``nonneg`` this is a non-negative least-squares fit; otherwise an
    exact solve for square nonsingular systems and least squares else.
    Basis functions invisible to every subdomain (all-zero column) are pinned
    to zero with a warning. Returns ``(weights, residual_norm)``.
    """
    A = np.asarray(integrals, dtype=float)
    b = np.asarray(targets, dtype=float)
    if A.ndim != 2 or A.shape[0] != b.size:
        raise ValueError(f"integrals {A.shape} do not match {b.size} targets")
    w = np.zeros(A.shape[1])
    visible = np.any(A != 0, axis=0)
    if not visible.all():
        warnings.warn(f"basis functions {np.flatnonzero(~visible).tolist()} have zero integral "
                      "over every subdomain; weights pinned to 0", stacklevel=2)
    Av = A[:, visible]
    if nonneg:
        w[visible], _ = nnls(Av, b)
    elif Av.shape[0] == Av.shape[1]:
        w[visible] = np.linalg.solve(Av, b)
    else:
        w[visible] = np.linalg.lstsq(Av, b, rcond=None)[0]
    return w, float(np.linalg.norm(A @ w - b))


@dataclass
class InitialFit:
    state: SeirState
    weights: dict           # "n", "s", "e", "i" -> weight vectors
    residuals: dict


def fraction_basis(basis: GaussianBasis, mesh: Mesh, n_weights) -> np.ndarray:
    """Nodal values of ``G_k / n`` with ``n = sum_j n_weights_j G_j``, computed in log space."""
    logG = basis.log_evaluate(mesh.vertices)
    w = np.asarray(n_weights, dtype=float)
    if not np.any(w > 0):
        raise InitialFitError("population weights are all zero")
    with np.errstate(divide="ignore"):
        log_n = logsumexp(logG + np.log(w)[None, :], axis=1)
    return np.exp(logG - log_n[:, None])


def build_initial_state(mesh: Mesh, basis: GaussianBasis, data: ProvinceData, nonneg=True) -> InitialFit:
    """Fit ``n`` and the ``s, e, i`` fractions to province counts; ``r`` is the complement."""
    L = len(mesh.labels)
    if data.population.size != L:
        raise InitialFitError(f"province data has {data.population.size} rows, mesh has {L} subdomains")
    G = basis.evaluate(mesh.vertices)
    w_n, res_n = fit_weights(nodal_subdomain_integrals(mesh, G), data.population, nonneg)
    n = G @ w_n
    if np.any(n <= 0):
        # Gaussian tails underflow far from every center
        n = np.maximum(n, np.finfo(float).tiny)
    Phi = fraction_basis(basis, mesh, w_n)
    A = nodal_subdomain_integrals(mesh, Phi, n)
    weights = {"n": w_n}
    residuals = {"n": res_n}
    fields = {}
    for name, target in (("s", data.susceptible), ("e", data.exposed), ("i", data.infectious)):
        weights[name], residuals[name] = fit_weights(A, target, nonneg)
        fields[name] = Phi @ weights[name]
    r = 1.0 - fields["s"] - fields["e"] - fields["i"]
    if r.min() < -1e-6:
        raise InitialFitError(f"fitted fractions exceed 1 (r min {r.min():.3e}); targets inconsistent")
    state = SeirState.from_fractions(fields["s"], fields["e"], fields["i"], r, n)
    return InitialFit(state, weights, residuals)


STATUSES = ("S", "E", "I", "R")


def ingest_point_population(points, statuses, mesh: Mesh, smooth=True, pseudo_time=None) -> SeirState:
    """Map individuals to their nearest vertex and build densities and fractions.

    Counts per status are optionally smoothed by one implicit lumped-mass
    diffusion step with pseudo-time ``h^2`` (``h`` the mean edge length).
    Vertices without population get the smallest positive density and are
    labelled removed so that ``s + e + i + r = 1`` everywhere.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    statuses = list(statuses)
    if len(pts) == 0:
        raise ValueError("no points to ingest")
    if len(statuses) != len(pts):
        raise ValueError("one status per point required")
    try:
        comp = np.array([STATUSES.index(str(s).upper()) for s in statuses])
    except ValueError:
        raise ValueError(f"status must be one of {STATUSES}") from None
    _, nearest = cKDTree(mesh.vertices).query(pts)
    counts = np.zeros((4, mesh.vertex_count))
    np.add.at(counts, (comp, nearest), 1.0)

    ml = lumped_mass(mesh)
    if smooth:
        tau = mesh.mean_edge_length**2 if pseudo_time is None else pseudo_time
        A = sp.csc_matrix(sp.diags(ml) + tau * assemble_stiffness(mesh, 1.0))
        dens = spla.splu(A).solve(counts.T).T
        dens = np.maximum(dens, 0.0)
    else:
        dens = counts / ml
    n = dens.sum(axis=0)
    y = np.zeros_like(dens)
    occupied = n > 0
    y[:, occupied] = dens[:, occupied] / n[occupied]
    y[3, ~occupied] = 1.0
    n = np.where(occupied, n, np.finfo(float).tiny)
    return SeirState(0.0, y, n)
