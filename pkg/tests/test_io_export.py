import json

import numpy as np
import pandas as pd
import pytest

from shearflow import fem
from shearflow.exceptions import FieldError
from shearflow.fields import FeField, FieldRole
from shearflow.io_export import (
    VTK_QUADRATIC_TRIANGLE,
    read_nodal_csv,
    strain_cell_scalars,
    to_json,
    write_json,
    write_nodal_csv,
    write_table_csv,
    write_vtk,
)

from conftest import random_field


def test_vtk_layout(tmp_path, dofmap4, rng):
    nt = len(dofmap4.element_nodes)
    field = random_field(dofmap4, rng, role=FieldRole.VELOCITY)
    path = write_vtk(tmp_path / "out" / "state.vtk", dofmap4, {"velocity": field},
                     {"abs_eps_y": strain_cell_scalars(fem.eval_sym_gradient(field))})
    lines = path.read_text().splitlines()
    assert lines[0] == "# vtk DataFile Version 3.0"
    assert lines[3] == "DATASET UNSTRUCTURED_GRID"
    assert f"POINTS {len(dofmap4.node_coords)} double" in lines
    assert f"CELLS {nt} {nt * 7}" in lines
    start = lines.index(f"CELL_TYPES {nt}") + 1
    assert set(lines[start:start + nt]) == {str(VTK_QUADRATIC_TRIANGLE)}
    assert "VECTORS velocity double" in lines
    assert f"CELL_DATA {nt}" in lines
    assert "SCALARS abs_eps_y double 1" in lines


def test_vtk_rejects_wrong_cell_count(tmp_path, dofmap4):
    with pytest.raises(FieldError):
        write_vtk(tmp_path / "bad.vtk", dofmap4, cell_scalars={"x": np.zeros(3)})


def test_vtk_midpoints_follow_corner_order(tmp_path, dofmap4):
    write_vtk(tmp_path / "m.vtk", dofmap4)
    lines = (tmp_path / "m.vtk").read_text().splitlines()
    first = lines.index(next(l for l in lines if l.startswith("CELLS"))) + 1
    ids = [int(v) for v in lines[first].split()[1:]]
    xy = dofmap4.node_coords
    for k, (a, b) in enumerate([(0, 1), (1, 2), (2, 0)]):
        assert np.allclose(xy[ids[3 + k]], 0.5 * (xy[ids[a]] + xy[ids[b]]))


def test_nodal_csv_round_trip(tmp_path, dofmap4, rng):
    field = random_field(dofmap4, rng)
    path = write_nodal_csv(tmp_path / "u.csv", field)
    frame = pd.read_csv(path)
    assert list(frame.columns) == ["x", "y", "u1", "u2"]
    # rows in a different order still land on the right nodes
    frame.sample(frac=1.0, random_state=3).to_csv(path, index=False, float_format="%.17g")
    assert np.array_equal(read_nodal_csv(path, dofmap4), field.coefficients)


def test_pressure_csv_uses_vertices(tmp_path, dofmap4):
    pressure = FeField.zeros(dofmap4, FieldRole.PRESSURE)
    frame = pd.read_csv(write_nodal_csv(tmp_path / "p.csv", pressure))
    assert list(frame.columns) == ["x", "y", "value"]
    assert len(frame) == dofmap4.mesh.n_vertices


def test_read_nodal_csv_missing_rows(tmp_path, dofmap4, rng):
    path = write_nodal_csv(tmp_path / "u.csv", random_field(dofmap4, rng))
    pd.read_csv(path).iloc[:-2].to_csv(path, index=False)
    with pytest.raises(FieldError, match="no matching row"):
        read_nodal_csv(path, dofmap4)
    pd.DataFrame({"x": [0.0], "y": [0.0]}).to_csv(path, index=False)
    with pytest.raises(FieldError, match="missing columns"):
        read_nodal_csv(path, dofmap4)


def test_json_is_sorted_and_plain(tmp_path):
    data = {"b": np.float64(1.5), "a": [np.int64(2), np.bool_(True)], "c": float("nan"),
            "d": np.arange(3), "e": tmp_path}
    text = to_json(data)
    assert text == to_json(dict(reversed(list(data.items()))))
    loaded = json.loads(write_json(tmp_path / "r.json", data).read_text())
    assert list(loaded) == ["a", "b", "c", "d", "e"]
    assert loaded["a"] == [2, True]
    assert loaded["c"] == "nan"
    assert loaded["d"] == [0, 1, 2]


def test_table_csv(tmp_path):
    table = pd.DataFrame({"delta": [0.1, 0.01], "j_value": [1.0, 0.5]})
    assert pd.read_csv(write_table_csv(tmp_path / "t.csv", table)).equals(table)


def test_read_nodal_csv_bad_values(tmp_path, dofmap4):
    path = tmp_path / "u.csv"
    pd.DataFrame({"x": [0.0], "y": [0.0], "u1": ["abc"], "u2": [0.0]}).to_csv(path, index=False)
    with pytest.raises(FieldError, match="non-numeric"):
        read_nodal_csv(path, dofmap4)
    path.write_text("", encoding="utf-8")
    with pytest.raises(FieldError, match="unreadable"):
        read_nodal_csv(path, dofmap4)
