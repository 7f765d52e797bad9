"""Triangular meshes with subdomain labels and classified boundary edges.

A :class:`Mesh` is immutable once built. Triangles are stored counter-clockwise,
boundary edges are oriented so that the owning triangle lies on their left,
which makes ``(dy, -dx)`` the outward normal.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property

import numpy as np

KM_PER_DEGREE = 111.3


class EdgeKind(enum.IntEnum):
    OUTER = 0
    INTERFACE = 1


class MeshError(ValueError):
    """Raised for topologically or geometrically invalid meshes."""


class MeshParseError(MeshError):
    """Malformed Triangle .node/.ele input."""

    def __init__(self, message, filename="<text>", line=None):
        self.filename = filename
        self.line = line
        where = f"{filename}:{line}" if line is not None else filename
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray          # (V, 2) float
    triangles: np.ndarray         # (T, 3) int, counter-clockwise
    triangle_labels: np.ndarray   # (T,) int, contiguous from 1
    boundary_edges: np.ndarray    # (B, 2) int, owning triangle on the left
    edge_kinds: np.ndarray        # (B,) EdgeKind values

    @property
    def vertex_count(self) -> int:
        return len(self.vertices)

    @property
    def triangle_count(self) -> int:
        return len(self.triangles)

    @property
    def edge_count(self) -> int:
        return len(self.unique_edges)

    @cached_property
    def triangle_areas(self) -> np.ndarray:
        return 0.5 * _signed_double_areas(self.vertices, self.triangles)

    @property
    def area(self) -> float:
        return float(self.triangle_areas.sum())

    @cached_property
    def unique_edges(self) -> np.ndarray:
        edges, _ = _edge_incidence(self.triangles)
        return edges

    @cached_property
    def gradients(self) -> np.ndarray:
        """Gradients of the three P1 hat functions per triangle, shape (T, 3, 2)."""
        p = self.vertices[self.triangles]
        d2a = 2.0 * self.triangle_areas
        # grad(lambda_k) = rot90(p_{k+2} - p_{k+1}) / 2A
        e0 = p[:, 2] - p[:, 1]
        e1 = p[:, 0] - p[:, 2]
        e2 = p[:, 1] - p[:, 0]
        g = np.empty((len(p), 3, 2))
        for k, e in enumerate((e0, e1, e2)):
            g[:, k, 0] = -e[:, 1] / d2a
            g[:, k, 1] = e[:, 0] / d2a
        return g

    @cached_property
    def boundary_triangle(self) -> np.ndarray:
        """Index of the unique triangle owning each boundary edge."""
        lookup = _directed_edge_owner(self.triangles)
        return np.array([lookup[(int(a), int(b))] for a, b in self.boundary_edges], dtype=int)

    def edges_of_kind(self, kind: EdgeKind) -> np.ndarray:
        return self.boundary_edges[self.edge_kinds == kind]

    @property
    def labels(self) -> list[int]:
        return sorted(int(v) for v in np.unique(self.triangle_labels))

    @cached_property
    def subdomains(self) -> dict[int, "Subdomain"]:
        areas = self.triangle_areas
        cent = self.vertices[self.triangles].mean(axis=1)
        out = {}
        for lab in self.labels:
            members = np.flatnonzero(self.triangle_labels == lab)
            a = areas[members]
            out[lab] = Subdomain(
                area=float(a.sum()),
                centroid=(a[:, None] * cent[members]).sum(axis=0) / a.sum(),
                triangles=members,
            )
        return out

    @cached_property
    def mean_edge_length(self) -> float:
        e = self.unique_edges
        return float(np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1).mean())

    @cached_property
    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


@dataclass(frozen=True, eq=False)
class Subdomain:
    area: float
    centroid: np.ndarray
    triangles: np.ndarray


@dataclass(frozen=True, eq=False)
class HybridSplit:
    """Result of removing the ODE subdomains from a mesh."""

    pde_mesh: Mesh
    interface: np.ndarray        # (G, 2) Interface edges, indices into pde_mesh
    omega2_area: float
    vertex_map: np.ndarray       # pde vertex -> original vertex
    ode_triangles: np.ndarray    # removed triangle indices in the original mesh

    def restrict(self, field: np.ndarray) -> np.ndarray:
        return np.asarray(field)[self.vertex_map]


def _signed_double_areas(vertices, triangles):
    p = vertices[triangles]
    a = p[:, 1] - p[:, 0]
    b = p[:, 2] - p[:, 0]
    return a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]


def _edge_incidence(triangles):
    """Unique undirected edges and the number of triangles touching each."""
    local = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    local.sort(axis=1)
    edges, counts = np.unique(local, axis=0, return_counts=True)
    return edges, counts


def _directed_edge_owner(triangles):
    owner = {}
    for t, (a, b, c) in enumerate(triangles.tolist()):
        owner[(a, b)] = t
        owner[(b, c)] = t
        owner[(c, a)] = t
    return owner


def _boundary_from_topology(triangles):
    """Directed boundary edges (owner on the left) and a flag for bad edges."""
    directed = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    undirected = np.sort(directed, axis=1)
    _, inverse, counts = np.unique(undirected, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    if np.any(counts > 2):
        raise MeshError("an edge is shared by more than two triangles")
    boundary = directed[counts[inverse] == 1]
    # deterministic order
    order = np.lexsort((boundary[:, 1], boundary[:, 0]))
    return boundary[order]


def build_mesh(vertices, triangles, labels=None, interface_pairs=None) -> Mesh:
    """Assemble a validated mesh, reorienting clockwise triangles.

    ``interface_pairs`` is an optional set of undirected vertex pairs whose
    boundary edges are marked :attr:`EdgeKind.INTERFACE`.
    """
    vertices = np.ascontiguousarray(vertices, dtype=float)
    triangles = np.array(triangles, dtype=np.int64, copy=True).reshape(-1, 3)
    if vertices.ndim != 2 or vertices.shape[1] != 2:
        raise MeshError("vertices must have shape (V, 2)")
    if len(triangles) == 0:
        raise MeshError("mesh has no triangles")
    if triangles.min() < 0 or triangles.max() >= len(vertices):
        raise MeshError("triangle references a vertex out of range")
    d2a = _signed_double_areas(vertices, triangles)
    flip = d2a < 0
    triangles[flip] = triangles[flip][:, [0, 2, 1]]
    if np.any(np.abs(d2a) <= 1e-14 * max(1.0, np.abs(d2a).max())):
        bad = int(np.flatnonzero(np.abs(d2a) <= 1e-14 * max(1.0, np.abs(d2a).max()))[0])
        raise MeshError(f"triangle {bad} is degenerate (zero area)")

    if labels is None:
        labels = np.ones(len(triangles), dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    uniq = np.unique(labels)
    if not np.array_equal(uniq, np.arange(1, len(uniq) + 1)):
        raise MeshError(f"subdomain labels must be contiguous from 1, got {uniq.tolist()}")

    boundary = _boundary_from_topology(triangles)
    kinds = np.full(len(boundary), EdgeKind.OUTER, dtype=np.int64)
    if interface_pairs:
        for k, (a, b) in enumerate(boundary.tolist()):
            if (min(a, b), max(a, b)) in interface_pairs:
                kinds[k] = EdgeKind.INTERFACE
    return Mesh(vertices, triangles, labels, boundary, kinds)


def relabel(mesh: Mesh, label_of) -> Mesh:
    """Return a copy with labels ``label_of(centroids)`` (array of (T, 2) -> (T,))."""
    cent = mesh.vertices[mesh.triangles].mean(axis=1)
    labels = np.asarray(label_of(cent), dtype=np.int64)
    interface = {(min(a, b), max(a, b)) for a, b in mesh.edges_of_kind(EdgeKind.INTERFACE).tolist()}
    return build_mesh(mesh.vertices, mesh.triangles, labels, interface)


def _axis_nodes(length, h, split=None):
    if split is None:
        n = max(1, int(round(length / h)))
        return np.linspace(0.0, length, n + 1)
    left = np.linspace(0.0, split, max(1, int(round(split / h))) + 1)
    right = np.linspace(split, length, max(1, int(round((length - split) / h))) + 1)
    return np.concatenate([left, right[1:]])


def generate_rectangle_mesh(width, height, target_edge_length, split_x=None) -> Mesh:
    """Structured triangulation of ``]0, width[ x ]0, height[``.

    Each cell is cut along alternating diagonals. With ``split_x`` a column of
    nodes is placed exactly on ``x = split_x`` and triangles to its left get
    label 1, those to its right label 2.
    """
    if width <= 0 or height <= 0 or target_edge_length <= 0:
        raise MeshError("rectangle dimensions and edge length must be positive")
    if split_x is not None and not 0.0 < split_x < width:
        raise MeshError(f"split_x={split_x} must lie strictly inside (0, {width})")
    xs = _axis_nodes(width, target_edge_length, split_x)
    ys = _axis_nodes(height, target_edge_length)
    nx, ny = len(xs), len(ys)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    j, i = np.meshgrid(np.arange(ny - 1), np.arange(nx - 1), indexing="ij")
    j, i = j.ravel(), i.ravel()
    v00 = j * nx + i
    v10 = v00 + 1
    v01 = v00 + nx
    v11 = v01 + 1
    alt = (i + j) % 2 == 0
    t1 = np.where(alt[:, None], np.column_stack([v00, v10, v11]), np.column_stack([v00, v10, v01]))
    t2 = np.where(alt[:, None], np.column_stack([v00, v11, v01]), np.column_stack([v10, v11, v01]))
    triangles = np.empty((2 * len(v00), 3), dtype=np.int64)
    triangles[0::2] = t1
    triangles[1::2] = t2

    labels = None
    if split_x is not None:
        cx = vertices[triangles, 0].mean(axis=1)
        labels = np.where(cx < split_x, 1, 2)
    return build_mesh(vertices, triangles, labels)


def split_for_hybrid(mesh: Mesh, ode_labels) -> HybridSplit:
    """Remove the ODE subdomains and mark the new cut as the interface."""
    ode_labels = {int(l) for l in ode_labels}
    if not ode_labels:
        raise MeshError("ode_labels is empty; nothing to replace by an ODE region")
    unknown = ode_labels - set(mesh.labels)
    if unknown:
        raise MeshError(f"unknown subdomain labels {sorted(unknown)}")
    is_ode = np.isin(mesh.triangle_labels, sorted(ode_labels))
    if is_ode.all():
        raise MeshError("ode_labels cover the whole mesh; no PDE region left")

    keep = np.flatnonzero(~is_ode)
    removed = np.flatnonzero(is_ode)
    kept_tris = mesh.triangles[keep]
    used = np.unique(kept_tris)
    remap = np.full(mesh.vertex_count, -1, dtype=np.int64)
    remap[used] = np.arange(len(used))

    # edges shared between one kept and one removed triangle
    def undirected_set(tris):
        e = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
        e.sort(axis=1)
        return {tuple(x) for x in e.tolist()}

    cut = undirected_set(kept_tris) & undirected_set(mesh.triangles[removed])
    if not cut:
        raise MeshError("ODE region shares no edge with the PDE region; flux coupling impossible")
    interface_pairs = {tuple(sorted((int(remap[a]), int(remap[b])))) for a, b in cut}

    # keep labels contiguous: relabel the surviving ids in order
    surviving = np.unique(mesh.triangle_labels[keep])
    lab_map = {int(old): k + 1 for k, old in enumerate(surviving)}
    labels = np.array([lab_map[int(l)] for l in mesh.triangle_labels[keep]])
    pde = build_mesh(mesh.vertices[used], remap[kept_tris], labels, interface_pairs)
    return HybridSplit(
        pde_mesh=pde,
        interface=pde.edges_of_kind(EdgeKind.INTERFACE),
        omega2_area=float(mesh.triangle_areas[removed].sum()),
        vertex_map=used,
        ode_triangles=removed,
    )


def edge_lengths(mesh: Mesh, edges: np.ndarray) -> np.ndarray:
    d = mesh.vertices[edges[:, 1]] - mesh.vertices[edges[:, 0]]
    return np.hypot(d[:, 0], d[:, 1])


# -- Triangle ASCII format -------------------------------------------------

def _data_lines(text):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line.split()


def _parse_header(lines, filename, min_fields):
    try:
        lineno, head = next(lines)
    except StopIteration:
        raise MeshParseError("empty file, header line missing", filename) from None
    if len(head) < min_fields:
        raise MeshParseError(f"header needs at least {min_fields} fields, got {len(head)}", filename, lineno)
    try:
        return lineno, [int(x) for x in head]
    except ValueError:
        raise MeshParseError(f"non-integer header field in {' '.join(head)!r}", filename, lineno) from None


def load_triangle_mesh(node_text: str, ele_text: str, degrees: bool = False) -> Mesh:
    """Parse Triangle ``.node``/``.ele`` text.

    Indexing base (0 or 1) is taken from the first node index. The first
    triangle attribute, when present, becomes the subdomain label. With
    ``degrees=True`` coordinates are scaled by 111.3 km per degree.
    """
    lines = _data_lines(node_text)
    lineno, head = _parse_header(lines, ".node", 2)
    n_nodes, dim = head[0], head[1]
    n_attr = head[2] if len(head) > 2 else 0
    if dim != 2:
        raise MeshParseError(f"only 2D meshes are supported, header says dimension {dim}", ".node", lineno)
    coords = np.empty((n_nodes, 2))
    ids = np.empty(n_nodes, dtype=np.int64)
    base = None
    for k in range(n_nodes):
        try:
            lineno, f = next(lines)
        except StopIteration:
            raise MeshParseError(f"expected {n_nodes} nodes, found {k}", ".node") from None
        if len(f) < 3 + n_attr:
            raise MeshParseError("node line has too few fields", ".node", lineno)
        try:
            ids[k] = int(f[0])
            coords[k] = float(f[1]), float(f[2])
        except ValueError:
            raise MeshParseError(f"cannot parse node line {' '.join(f)!r}", ".node", lineno) from None
        if base is None:
            base = int(ids[0])
            if base not in (0, 1):
                raise MeshParseError(f"first node index must be 0 or 1, got {base}", ".node", lineno)
        if ids[k] != base + k:
            raise MeshParseError(f"node index {ids[k]} out of sequence (expected {base + k})", ".node", lineno)

    lines = _data_lines(ele_text)
    lineno, head = _parse_header(lines, ".ele", 2)
    n_tri, per = head[0], head[1]
    n_tattr = head[2] if len(head) > 2 else 0
    if per != 3:
        raise MeshParseError(f"only linear triangles supported, header says {per} nodes", ".ele", lineno)
    tris = np.empty((n_tri, 3), dtype=np.int64)
    labels = np.ones(n_tri, dtype=np.int64)
    for k in range(n_tri):
        try:
            lineno, f = next(lines)
        except StopIteration:
            raise MeshParseError(f"expected {n_tri} triangles, found {k}", ".ele") from None
        if len(f) < 4 + n_tattr:
            raise MeshParseError("element line has too few fields", ".ele", lineno)
        try:
            tris[k] = [int(x) - base for x in f[1:4]]
            if n_tattr:
                labels[k] = int(round(float(f[4])))
        except ValueError:
            raise MeshParseError(f"cannot parse element line {' '.join(f)!r}", ".ele", lineno) from None
        if tris[k].min() < 0 or tris[k].max() >= n_nodes:
            raise MeshParseError(f"vertex index out of range in {' '.join(f)!r}", ".ele", lineno)
        p = coords[tris[k]]
        d2a = (p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1]) - (p[1, 1] - p[0, 1]) * (p[2, 0] - p[0, 0])
        if d2a == 0.0:
            raise MeshParseError("degenerate (zero-area) triangle", ".ele", lineno)

    if degrees:
        coords = coords * KM_PER_DEGREE
    # region attributes may be arbitrary numbers; map them in sorted order to 1..L
    _, labels = np.unique(labels, return_inverse=True)
    labels = labels + 1
    try:
        return build_mesh(coords, tris, labels)
    except MeshError as exc:
        raise MeshParseError(str(exc), ".ele") from exc


def write_triangle_mesh(mesh: Mesh) -> tuple[str, str]:
    """Serialize to Triangle ``.node``/``.ele`` text (1-based, labels as attribute)."""
    on_boundary = np.zeros(mesh.vertex_count, dtype=int)
    on_boundary[mesh.boundary_edges.ravel()] = 1
    node = [f"{mesh.vertex_count} 2 0 1"]
    for k, ((x, y), m) in enumerate(zip(mesh.vertices.tolist(), on_boundary.tolist()), start=1):
        node.append(f"{k} {x!r} {y!r} {m}")
    ele = [f"{mesh.triangle_count} 3 1"]
    for k, ((a, b, c), lab) in enumerate(zip(mesh.triangles.tolist(), mesh.triangle_labels.tolist()), start=1):
        ele.append(f"{k} {a + 1} {b + 1} {c + 1} {lab}")
    return "\n".join(node) + "\n", "\n".join(ele) + "\n"


def read_triangle_files(prefix, degrees=False) -> Mesh:
    with open(f"{prefix}.node") as fn, open(f"{prefix}.ele") as fe:
        return load_triangle_mesh(fn.read(), fe.read(), degrees=degrees)


def write_triangle_files(mesh: Mesh, prefix) -> None:
    node, ele = write_triangle_mesh(mesh)
    with open(f"{prefix}.node", "w") as f:
        f.write(node)
    with open(f"{prefix}.ele", "w") as f:
        f.write(ele)
