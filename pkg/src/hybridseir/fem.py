"""Linear (P1) finite element kernels on triangular meshes."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Mesh, edge_lengths


class SolverError(RuntimeError):
    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


_LOCAL_MASS = (np.ones((3, 3)) + np.eye(3)) / 12.0


def _scatter(mesh: Mesh, local: np.ndarray) -> sp.csr_matrix:
    """Sum per-triangle (T, 3, 3) blocks into a global CSR matrix."""
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    n = mesh.vertex_count
    A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    A.eliminate_zeros()
    return A


def assemble_mass(mesh: Mesh, weight=None) -> sp.csr_matrix:
    """Mass matrix for ``int u v dx``, or ``int u v w dx`` for a nodal weight ``w``.

    The weighted form is integrated exactly (cubic integrand) using
    ``int l_i l_j l_k = 2A a!b!c!/(a+b+c+2)!``.
    """
    area = mesh.triangle_areas
    if weight is None:
        local = area[:, None, None] * _LOCAL_MASS
        return _scatter(mesh, local)
    w = np.asarray(weight, dtype=float)
    if w.shape != (mesh.vertex_count,):
        raise ValueError(f"weight has length {w.size}, mesh has {mesh.vertex_count} vertices")
    wt = w[mesh.triangles]                     # (T, 3)
    s = wt.sum(axis=1)
    # i == j: A/30 (2 w_i + sum w) ; i != j: A/60 (w_i + w_j + sum w)
    local = (wt[:, :, None] + wt[:, None, :] + s[:, None, None]) / 60.0
    idx = np.arange(3)
    local[:, idx, idx] = (2.0 * wt + s[:, None]) / 30.0
    return _scatter(mesh, area[:, None, None] * local)


def lumped_mass(mesh: Mesh) -> np.ndarray:
    """Nodal areas (row sums of the mass matrix)."""
    out = np.zeros(mesh.vertex_count)
    np.add.at(out, mesh.triangles.ravel(), np.repeat(mesh.triangle_areas / 3.0, 3))
    return out


def assemble_stiffness(mesh: Mesh, diffusion=1.0) -> sp.csr_matrix:
    """Stiffness matrix of ``int D grad u . grad v dx``; ``diffusion`` scalar or per triangle."""
    d = np.broadcast_to(np.asarray(diffusion, dtype=float), (mesh.triangle_count,))
    if np.any(d < 0):
        raise ValueError("diffusion coefficient must be non-negative")
    g = mesh.gradients
    local = np.einsum("tid,tjd->tij", g, g) * (mesh.triangle_areas * d)[:, None, None]
    return _scatter(mesh, local)


def solve_spd(A, rhs, tol=1e-10, maxiter=None, x0=None):
    """Jacobi-preconditioned conjugate gradients (``scipy.sparse.linalg.cg``).

    Stops when ``||A x - rhs|| <= tol ||rhs||``. Raises :class:`SolverError`
    with the achieved residual after ``maxiter`` (default ``10 n``) iterations.
    """
    A = sp.csr_matrix(A)
    b = np.asarray(rhs, dtype=float)
    n = len(b)
    if maxiter is None:
        maxiter = 10 * n
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n)
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise SolverError("matrix has a non-positive diagonal entry; not SPD")
    x, info = spla.cg(A, b, x0=x0, rtol=tol, atol=0.0, maxiter=maxiter, M=sp.diags(1.0 / diag))
    rel = np.linalg.norm(b - A @ x) / bnorm
    if info != 0 and rel > tol:
        raise SolverError(f"CG did not converge in {maxiter} iterations (relative residual {rel:.3e})",
                          residual=rel, iterations=maxiter)
    return x


def integrate_weighted(mesh: Mesh, fraction, density, labels=None) -> float:
    """``int fraction * density dx`` over the triangles carrying ``labels``.

    Exact for the P1 x P1 product (equivalent to the 3-point edge-midpoint rule).
    ``labels=None`` integrates over the whole mesh.
    """
    f = np.asarray(fraction, dtype=float)[mesh.triangles]
    d = np.asarray(density, dtype=float)[mesh.triangles]
    per_tri = mesh.triangle_areas / 12.0 * (f.sum(1) * d.sum(1) + (f * d).sum(1))
    if labels is None:
        return float(per_tri.sum())
    labels = list(labels)
    if not labels:
        raise ValueError("empty label set")
    return float(per_tri[np.isin(mesh.triangle_labels, labels)].sum())


def subdomain_integrals(mesh: Mesh, fraction, density) -> dict[int, float]:
    """``integrate_weighted`` for every subdomain label at once."""
    f = np.asarray(fraction, dtype=float)[mesh.triangles]
    d = np.asarray(density, dtype=float)[mesh.triangles]
    per_tri = mesh.triangle_areas / 12.0 * (f.sum(1) * d.sum(1) + (f * d).sum(1))
    sums = np.bincount(mesh.triangle_labels, weights=per_tri)
    return {lab: float(sums[lab]) for lab in mesh.labels}


def _orient_boundary_edges(mesh: Mesh, edges) -> tuple[np.ndarray, np.ndarray]:
    """Map (possibly undirected) edges onto the mesh's directed boundary edges."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    index = {}
    for k, (a, b) in enumerate(mesh.boundary_edges.tolist()):
        index[(a, b)] = k
        index[(b, a)] = k
    try:
        ids = np.array([index[(int(a), int(b))] for a, b in edges], dtype=np.int64)
    except KeyError as exc:
        raise ValueError(f"edge {exc.args[0]} is not on the mesh boundary") from None
    return mesh.boundary_edges[ids], mesh.boundary_triangle[ids]


def outward_normals(mesh: Mesh, directed_edges: np.ndarray) -> np.ndarray:
    d = mesh.vertices[directed_edges[:, 1]] - mesh.vertices[directed_edges[:, 0]]
    n = np.column_stack([d[:, 1], -d[:, 0]])
    return n / np.hypot(n[:, 0], n[:, 1])[:, None]


class FluxOperator:
    """Precomputed linear map ``field -> sum_edges |e| nu . D grad(field)``.

    Valid for a fixed edge set; ``D`` is applied at evaluation time.
    """

    def __init__(self, mesh: Mesh, edges):
        directed, tri = _orient_boundary_edges(mesh, edges)
        nu = outward_normals(mesh, directed)
        length = edge_lengths(mesh, directed)
        g = mesh.gradients[tri]                       # (E, 3, 2)
        coef = np.einsum("ed,ekd->ek", nu, g) * length[:, None]
        vec = np.zeros(mesh.vertex_count)
        np.add.at(vec, mesh.triangles[tri].ravel(), coef.ravel())
        self.weights = vec

    def __call__(self, field, D=1.0):
        return float(D) * (self.weights @ np.asarray(field, dtype=float).T)


def boundary_flux(mesh: Mesh, field, D, edges) -> float:
    """Total diffusive flux ``sum |e| nu . D grad(field)`` across boundary ``edges``.

    The gradient comes from the single triangle adjacent to each edge and
    ``nu`` is the outward unit normal of the mesh.
    """
    return float(FluxOperator(mesh, edges)(field, D))


def interface_edge_mass(mesh: Mesh, edges) -> np.ndarray:
    """Lumped boundary mass ``int_Gamma phi_v do`` per vertex for an edge set."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    out = np.zeros(mesh.vertex_count)
    if len(edges):
        half = 0.5 * edge_lengths(mesh, edges)
        np.add.at(out, edges[:, 0], half)
        np.add.at(out, edges[:, 1], half)
    return out


class FemContext:
    """Mesh operators shared by all time steppers on one mesh.

    Holds the consistent mass matrix, the unit-coefficient stiffness matrix
    and a cache of factorized ``M + dt D K + P`` systems. ``solver`` picks the
    linear solver for the step systems: ``"direct"`` (sparse LU, factorized
    once per distinct system) or ``"cg"`` (:func:`solve_spd`).
    """

    def __init__(self, mesh: Mesh, solver="direct", tol=1e-10):
        if solver not in ("direct", "cg"):
            raise ValueError(f"unknown solver {solver!r}")
        self.mesh = mesh
        self.M = assemble_mass(mesh)
        self.K = assemble_stiffness(mesh, 1.0)
        self.solver = solver
        self.tol = tol
        self._cache = {}

    def step_solver(self, dt, D, penalty_diag=None, key=None):
        """Return ``solve(rhs)`` for ``(M + dt D K + diag(penalty_diag)) x = rhs``.

        ``key`` identifies ``penalty_diag`` for caching; pass ``None`` when
        there is no penalty.
        """
        cache_key = (float(dt), float(D), key)
        hit = self._cache.get(cache_key)
        if hit is not None:
            return hit
        A = self.M + (dt * D) * self.K
        if penalty_diag is not None:
            A = A + sp.diags(penalty_diag)
        A = sp.csc_matrix(A)
        if self.solver == "direct":
            lu = spla.splu(A)

            def solve(rhs):
                return lu.solve(np.asarray(rhs, dtype=float))
        else:
            def solve(rhs):
                rhs = np.asarray(rhs, dtype=float)
                if rhs.ndim == 1:
                    return solve_spd(A, rhs, self.tol)
                return np.column_stack([solve_spd(A, c, self.tol) for c in rhs.T])
        if len(self._cache) > 16:
            self._cache.clear()
        self._cache[cache_key] = solve
        return solve
