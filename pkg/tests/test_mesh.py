import numpy as np
import pytest

from shearflow.exceptions import MeshError, ParameterError
from shearflow.mesh import Mesh, build_structured_mesh, read_mesh, write_mesh


def test_single_cell_counts():
    mesh = build_structured_mesh(1, 1)
    assert mesh.n_triangles == 4
    assert mesh.n_vertices == 5
    assert mesh.boundary_vertex_mask.sum() == 4


@pytest.mark.parametrize("n", [1, 3, 16])
def test_area_and_euler(n):
    mesh = build_structured_mesh(n, n)
    assert mesh.area == pytest.approx(1.0, abs=1e-12)
    assert mesh.euler_characteristic() == 1
    assert np.all(mesh.signed_areas > 0)


def test_rectangle_and_boundary():
    mesh = build_structured_mesh(3, 2, rect=(0.0, 2.0, -1.0, 0.0))
    assert mesh.area == pytest.approx(2.0)
    assert len(mesh.boundary_edges) == 2 * (3 + 2)
    bv = mesh.vertices[mesh.boundary_vertex_mask]
    on_edge = np.isclose(bv[:, 0], 0) | np.isclose(bv[:, 0], 2) | np.isclose(bv[:, 1], -1) | np.isclose(bv[:, 1], 0)
    assert on_edge.all()


def test_invalid_inputs():
    with pytest.raises(ParameterError):
        build_structured_mesh(0, 2)
    with pytest.raises(MeshError):
        build_structured_mesh(2, 2, rect=(0.0, 0.0, 0.0, 1.0))
    with pytest.raises(MeshError, match="non-positive"):
        Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 2, 1]]))
    with pytest.raises(MeshError):
        Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 3]]))


def test_supplied_boundary_is_checked():
    v = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    t = np.array([[0, 1, 2]])
    Mesh(v, t, boundary_edges=np.array([[1, 0], [1, 2], [2, 0]]))
    with pytest.raises(MeshError):
        Mesh(v, t, boundary_edges=np.array([[0, 1]]))


def test_round_trip(tmp_path):
    mesh = build_structured_mesh(3, 3)
    path = write_mesh(mesh, tmp_path / "m.txt")
    again = read_mesh(path)
    assert np.array_equal(again.vertices, mesh.vertices)
    assert np.array_equal(again.triangles, mesh.triangles)
    assert again.fingerprint() == mesh.fingerprint()


def test_read_reorients_clockwise(tmp_path):
    path = tmp_path / "cw.txt"
    path.write_text("# one clockwise triangle\n3 1\n0 0\n1 0\n0 1\n0 2 1\n")
    mesh = read_mesh(path)
    assert mesh.signed_areas[0] > 0


def test_read_errors(tmp_path):
    with pytest.raises(MeshError, match="not found"):
        read_mesh(tmp_path / "missing.txt")
    bad = tmp_path / "bad.txt"
    bad.write_text("3 1\n0 0\n1 0\n")
    with pytest.raises(MeshError):
        read_mesh(bad)


def test_fingerprint_distinguishes_meshes():
    assert build_structured_mesh(2, 2).fingerprint() != build_structured_mesh(3, 3).fingerprint()
    assert build_structured_mesh(2, 2).fingerprint() == build_structured_mesh(2, 2).fingerprint()
