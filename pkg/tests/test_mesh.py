import numpy as np
import pytest

from spectralign import InputError, MeshError, TriMesh, grid_mesh, icosphere, load_mesh, save_mesh
from spectralign.bench import rotation_matrix


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


class TestLoadObj:
    def test_single_triangle(self, tmp_path):
        p = write(tmp_path, "t.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
        m = load_mesh(p)
        assert m.n_vertices == 3
        assert m.n_faces == 1
        assert len(m.edges) == 3
        assert m.boundary_vertex.all()

    def test_tetrahedron_closed(self, tmp_path):
        p = write(
            tmp_path, "t.obj",
            "v 1 1 1\nv 1 -1 -1\nv -1 1 -1\nv -1 -1 1\n"
            "f 1 2 3\nf 1 4 2\nf 1 3 4\nf 2 4 3\n",
        )
        m = load_mesh(p)
        assert len(m.edges) == 6
        assert not m.boundary_vertex.any()

    def test_face_index_out_of_range(self, tmp_path):
        p = write(tmp_path, "t.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 10\n")
        with pytest.raises(MeshError, match="vertex 9"):
            load_mesh(p)

    def test_parse_failure_reports_line(self, tmp_path):
        p = write(tmp_path, "t.obj", "v 0 0 0\nv 1 0 zero\nv 0 1 0\nf 1 2 3\n")
        with pytest.raises(InputError, match=":2"):
            load_mesh(p)

    def test_empty_mesh(self, tmp_path):
        p = write(tmp_path, "t.obj", "# nothing\n")
        with pytest.raises(MeshError, match="empty"):
            load_mesh(p)

    def test_slash_indices_and_negatives(self, tmp_path):
        p = write(
            tmp_path, "t.obj",
            "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1/1 2/2/2 -1/3/3\n",
        )
        m = load_mesh(p)
        assert m.faces.tolist() == [[0, 1, 2]]

    def test_colors(self, tmp_path):
        p = write(
            tmp_path, "t.obj",
            "v 0 0 0 1 0 0\nv 1 0 0 0 1 0\nv 0 1 0 0 0 1\nf 1 2 3\n",
        )
        m = load_mesh(p)
        assert np.allclose(m.colors, np.eye(3))


class TestRoundTrip:
    @pytest.mark.parametrize("fmt", ["obj", "ply"])
    def test_geometry(self, tmp_path, fmt, rng):
        verts = rng.standard_normal((20, 3))
        m0 = grid_mesh(4, 5).with_vertices(verts)
        path = str(tmp_path / f"m.{fmt}")
        save_mesh(m0, path)
        m1 = load_mesh(path)
        assert np.abs(m1.vertices - m0.vertices).max() < 1e-9
        assert np.array_equal(m1.faces, m0.faces)

    @pytest.mark.parametrize("fmt", ["obj", "ply"])
    def test_colors(self, tmp_path, fmt, rng):
        colors = rng.random((20, 3))
        m0 = grid_mesh(4, 5, colors=colors)
        path = str(tmp_path / f"m.{fmt}")
        save_mesh(m0, path)
        m1 = load_mesh(path)
        assert np.abs(m1.colors - colors).max() < 1e-6

    def test_unwritable_path(self, single_triangle):
        with pytest.raises(InputError):
            save_mesh(single_triangle, "/nonexistent-dir/x/у.obj")

    def test_ascii_ply(self, tmp_path):
        text = (
            "ply\nformat ascii 1.0\n"
            "element vertex 3\nproperty float x\nproperty float y\nproperty float z\n"
            "element face 1\nproperty list uchar int vertex_indices\nend_header\n"
            "0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n"
        )
        p = tmp_path / "m.ply"
        p.write_text(text)
        m = load_mesh(str(p))
        assert m.n_vertices == 3 and m.n_faces == 1

    def test_uchar_color_ply(self, tmp_path):
        text = (
            "ply\nformat ascii 1.0\n"
            "element vertex 3\nproperty float x\nproperty float y\nproperty float z\n"
            "property uchar red\nproperty uchar green\nproperty uchar blue\n"
            "element face 1\nproperty list uchar int vertex_indices\nend_header\n"
            "0 0 0 255 0 0\n1 0 0 0 255 0\n0 1 0 0 0 255\n3 0 1 2\n"
        )
        p = tmp_path / "m.ply"
        p.write_text(text)
        m = load_mesh(str(p))
        assert np.allclose(m.colors, np.eye(3))


class TestValidation:
    def test_degenerate_face_rejected(self):
        v = np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0], [0, 1, 0]])
        f = np.array([[0, 1, 2], [0, 1, 3]])  # first face is collinear
        with pytest.raises(MeshError, match="degenerate"):
            TriMesh(v, f)

    def test_repeated_index_rejected(self):
        v = np.eye(3)
        with pytest.raises(MeshError, match="repeats"):
            TriMesh(v, np.array([[0, 1, 1]]))

    def test_non_manifold_rejected(self):
        # three faces sharing the edge (0, 1)
        v = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [0, -1, 0]])
        f = np.array([[0, 1, 2], [0, 1, 3], [0, 1, 4]])
        with pytest.raises(MeshError, match="non-manifold"):
            TriMesh(v, f)

    def test_immutable(self, single_triangle):
        with pytest.raises(ValueError):
            single_triangle.vertices[0, 0] = 5.0


def boundary_oracle_halfedge(mesh):
    """Boundary flags via directed half-edges: an undirected edge is
    boundary iff exactly one of its two directions appears."""
    directed = set()
    for a, b, c in mesh.faces:
        directed |= {(a, b), (b, c), (c, a)}
    flags = np.zeros(mesh.n_vertices, dtype=bool)
    for a, b in directed:
        if (b, a) not in directed:
            flags[a] = flags[b] = True
    return flags


class TestTopology:
    def test_edges_lexicographic_and_unique(self, small_grid):
        e = small_grid.edges
        assert (e[:, 0] < e[:, 1]).all()
        order = np.lexsort((e[:, 1], e[:, 0]))
        assert np.array_equal(order, np.arange(len(e)))
        assert len(np.unique(e, axis=0)) == len(e)

    @pytest.mark.parametrize("mesh_name", ["grid", "sphere", "tet"])
    def test_boundary_matches_halfedge_oracle(self, mesh_name, tetrahedron):
        mesh = {
            "grid": grid_mesh(7, 5),
            "sphere": icosphere(2),
            "tet": tetrahedron,
        }[mesh_name]
        assert np.array_equal(mesh.boundary_vertex, boundary_oracle_halfedge(mesh))


class TestEdgeLengths:
    def test_unit_right_triangle(self, single_triangle):
        lengths = sorted(single_triangle.edge_lengths())
        assert np.allclose(lengths, [1.0, 1.0, np.sqrt(2)])

    def test_uniform_scaling(self, small_grid):
        doubled = small_grid.with_vertices(2.0 * small_grid.vertices)
        assert np.allclose(doubled.edge_lengths(), 2.0 * small_grid.edge_lengths())

    def test_matches_pairwise_distances(self, rng):
        mesh = grid_mesh(4, 4).with_vertices(rng.standard_normal((16, 3)))
        expected = np.array([
            np.linalg.norm(mesh.vertices[i] - mesh.vertices[j])
            for i, j in mesh.edges
        ])
        assert np.abs(mesh.edge_lengths() - expected).max() < 1e-12

    def test_rigid_invariance(self, small_grid, rng):
        R = rotation_matrix(rng.standard_normal(3))
        moved = small_grid.with_vertices(small_grid.vertices @ R.T + rng.standard_normal(3))
        rel = np.abs(moved.edge_lengths() - small_grid.edge_lengths()) / small_grid.edge_lengths()
        assert rel.max() < 1e-10


class TestUniformLaplacian:
    def test_single_triangle(self, single_triangle):
        L = single_triangle.uniform_laplacian().toarray()
        assert np.allclose(L, [[2, -1, -1], [-1, 2, -1], [-1, -1, 2]])

    def test_annihilates_constants(self, small_grid):
        L = small_grid.uniform_laplacian()
        assert np.abs(L @ np.ones(small_grid.n_vertices)).max() < 1e-12

    def test_degrees_match_adjacency(self, small_grid):
        L = small_grid.uniform_laplacian().toarray()
        deg = np.zeros(small_grid.n_vertices)
        for i, j in small_grid.edges:
            deg[i] += 1
            deg[j] += 1
        assert np.allclose(np.diag(L), deg)
        assert np.abs(L.sum(axis=1)).max() < 1e-12

    def test_positive_semidefinite(self, small_grid, rng):
        L = small_grid.uniform_laplacian()
        for _ in range(20):
            x = rng.standard_normal(small_grid.n_vertices)
            assert x @ (L @ x) >= -1e-10


class TestVertexNormals:
    def test_flat_grid_points_up(self, small_grid):
        normals = small_grid.vertex_normals()
        assert np.allclose(normals, np.tile([0, 0, 1.0], (small_grid.n_vertices, 1)))

    def test_icosphere_radial(self):
        s = icosphere(3)
        normals = s.vertex_normals()
        radial = s.vertices / np.linalg.norm(s.vertices, axis=1)[:, None]
        cos = np.einsum("ij,ij->i", normals, radial)
        assert np.degrees(np.arccos(np.clip(cos, -1, 1))).max() < 2.0

    def test_orientation_flip_negates(self, small_grid):
        flipped = TriMesh(small_grid.vertices, small_grid.faces[:, ::-1])
        assert np.allclose(flipped.vertex_normals(), -small_grid.vertex_normals())
