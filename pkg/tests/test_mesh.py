import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridseir.mesh import (
    EdgeKind,
    MeshError,
    MeshParseError,
    build_mesh,
    edge_lengths,
    generate_rectangle_mesh,
    load_triangle_mesh,
    read_triangle_files,
    split_for_hybrid,
    write_triangle_files,
    write_triangle_mesh,
)
from hybridseir.scenarios import lombardy_like_mesh

TRI_NODE = "3 2 0 0\n0 0.0 0.0\n1 1.0 0.0\n2 0.0 1.0\n"
TRI_ELE = "1 3 0\n0 0 1 2\n"


def test_single_triangle():
    m = load_triangle_mesh(TRI_NODE, TRI_ELE)
    assert m.triangle_count == 1
    assert m.area == pytest.approx(0.5, abs=1e-15)
    assert len(m.boundary_edges) == 3
    assert np.all(m.edge_kinds == EdgeKind.OUTER)


def test_square_two_triangles():
    m = build_mesh([[0, 0], [1, 0], [1, 1], [0, 1]], [[0, 1, 2], [0, 2, 3]])
    assert len(m.boundary_edges) == 4
    assert m.edge_count - len(m.boundary_edges) == 1


def test_clockwise_input_is_reoriented():
    m = build_mesh([[0, 0], [1, 0], [0, 1]], [[0, 2, 1]])
    assert m.triangle_areas[0] > 0


def test_one_based_and_comments_and_attributes():
    node = "# header comment\n3 2 0 1\n1 0 0 1\n2 1 0 1 # trailing\n3 0 1 1\n"
    ele = "1 3 1\n1 1 2 3 4\n"
    m = load_triangle_mesh(node, ele)
    assert m.triangles.tolist() == [[0, 1, 2]]
    assert m.labels == [1]


def test_region_attributes_mapped_to_contiguous_labels():
    node = "4 2 0 0\n0 0 0\n1 1 0\n2 1 1\n3 0 1\n"
    ele = "2 3 1\n0 0 1 2 7\n1 0 2 3 3\n"
    m = load_triangle_mesh(node, ele)
    assert m.triangle_labels.tolist() == [2, 1]


def test_degree_scaling():
    m = load_triangle_mesh(TRI_NODE, TRI_ELE, degrees=True)
    assert m.area == pytest.approx(0.5 * 111.3**2, rel=1e-14)


@pytest.mark.parametrize("node,ele,line", [
    ("3 2 0 0\n0 0 0\n1 1 0\n2 0 1\n", "1 3 0\n0 0 1 7\n", 2),
    ("3 2 0 0\n0 0 0\n1 1 0\n2 2 0\n", "1 3 0\n0 0 1 2\n", 2),
    ("3 x 0 0\n", TRI_ELE, 1),
])
def test_parse_errors_name_line(node, ele, line):
    with pytest.raises(MeshParseError) as err:
        load_triangle_mesh(node, ele)
    assert err.value.line == line


def test_rectangle_areas():
    m = generate_rectangle_mesh(2, 1, 0.5)
    assert m.labels == [1]
    assert m.area == pytest.approx(2.0, rel=1e-14)
    s = generate_rectangle_mesh(2, 1, 0.25, split_x=1.0).subdomains
    assert s[1].area == pytest.approx(1.0, rel=1e-14)
    assert s[2].area == pytest.approx(1.0, rel=1e-14)


def test_split_half_of_triangles():
    m = generate_rectangle_mesh(2, 1, 0.05, split_x=1.0)
    assert np.mean(m.triangle_labels == 2) == pytest.approx(0.5, abs=1e-12)


def test_triangle_count_reference_scale():
    # 45,336 triangles is the size of the reference full-domain mesh; a
    # structured mesh reaches it at h = 0.01 (h = 0.02 gives 10,000)
    assert generate_rectangle_mesh(2, 1, 0.02).triangle_count == 10_000
    n = generate_rectangle_mesh(2, 1, 0.01).triangle_count
    assert abs(n - 45_336) <= 0.15 * 45_336


def test_split_interface_geometry(rect_split):
    s = split_for_hybrid(rect_split, [2])
    gam = s.interface
    assert len(gam) > 0
    assert np.allclose(s.pde_mesh.vertices[gam.ravel(), 0], 1.0)
    assert edge_lengths(s.pde_mesh, gam).sum() == pytest.approx(1.0, rel=1e-12)
    assert s.pde_mesh.area + s.omega2_area == pytest.approx(rect_split.area, rel=1e-10)


def test_split_interface_edges_were_interior(rect_split):
    s = split_for_hybrid(rect_split, [2])
    orig = {tuple(sorted(e)) for e in rect_split.boundary_edges.tolist()}
    mapped = {tuple(sorted(s.vertex_map[e])) for e in s.interface.tolist()}
    assert not mapped & orig
    # and each had one triangle on each side
    tri_edges = {}
    for t, lab in zip(rect_split.triangles.tolist(), rect_split.triangle_labels.tolist()):
        for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
            tri_edges.setdefault(tuple(sorted((a, b))), set()).add(lab)
    assert all(tri_edges[e] == {1, 2} for e in mapped)


@pytest.mark.parametrize("labels,msg", [([], "empty"), ([7], "unknown"), ([1, 2], "whole")])
def test_split_errors(rect_split, labels, msg):
    with pytest.raises(MeshError, match=msg):
        split_for_hybrid(rect_split, labels)


def test_split_no_shared_edge():
    # two squares that touch nowhere
    v = np.array([[0, 0], [1, 0], [1, 1], [0, 1], [2, 0], [3, 0], [3, 1], [2, 1]], float)
    t = [[0, 1, 2], [0, 2, 3], [4, 5, 6], [4, 6, 7]]
    m = build_mesh(v, t, [1, 1, 2, 2])
    with pytest.raises(MeshError, match="no edge"):
        split_for_hybrid(m, [2])


def test_lombardy_like_split_halves():
    m = lombardy_like_mesh(0.1)
    s = split_for_hybrid(m, [2])
    assert m.labels == [1, 2, 3, 4, 5]
    assert s.pde_mesh.triangle_count == pytest.approx(m.triangle_count / 2, rel=0.1)
    assert s.pde_mesh.labels == [1, 2, 3, 4]


def test_round_trip(tmp_path, perturbed_square):
    m = generate_rectangle_mesh(2, 1, 0.25, split_x=1.0)
    for mesh in (m, perturbed_square):
        node, ele = write_triangle_mesh(mesh)
        back = load_triangle_mesh(node, ele)
        assert np.array_equal(back.triangles, mesh.triangles)
        assert np.array_equal(back.triangle_labels, mesh.triangle_labels)
        assert np.max(np.abs(back.vertices - mesh.vertices)) <= 1e-12
    write_triangle_files(m, tmp_path / "m")
    assert np.array_equal(read_triangle_files(tmp_path / "m").triangles, m.triangles)


@settings(max_examples=25, deadline=None)
@given(w=st.floats(0.5, 3), h=st.floats(0.5, 2), size=st.floats(0.08, 0.5))
def test_generated_mesh_invariants(w, h, size):
    m = generate_rectangle_mesh(w, h, size)
    assert np.all(m.triangle_areas > 0)
    assert m.area == pytest.approx(w * h, rel=1e-12)
    # boundary edges belong to one triangle, interior ones to two
    counts = {}
    for t in m.triangles.tolist():
        for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
            key = (min(a, b), max(a, b))
            counts[key] = counts.get(key, 0) + 1
    bset = {(min(a, b), max(a, b)) for a, b in m.boundary_edges.tolist()}
    assert all((c == 1) == (e in bset) for e, c in counts.items())
    assert set(counts.values()) <= {1, 2}
