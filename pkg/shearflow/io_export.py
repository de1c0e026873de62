"""
Field and report export
shearflow/io_export.py

Legacy VTK ASCII for external viewers, CSV tables through pandas, and JSON
reports with sorted keys so identical runs give identical files.
"""

import json
import math
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

import numpy as np
import pandas as pd

from shearflow.exceptions import FieldError
from shearflow.fem import DofMap
from shearflow.fields import FeField, QuadTensorField
from shearflow.logger import get_logger

logger = get_logger(__name__)

PathLike = Union[str, Path]

VTK_QUADRATIC_TRIANGLE = 22
# VTK wants corners, then midpoints of (0,1), (1,2), (2,0); local edge k is opposite vertex k
_VTK_NODE_ORDER = [0, 1, 2, 5, 3, 4]


def _prepare(path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def cell_average(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Quadrature-weighted mean per element of a (nt, nq) array"""
    return np.sum(values * weights, axis=1) / np.sum(weights, axis=1)


# ============================================================================
# VTK
# ============================================================================

def write_vtk(
    path: PathLike,
    dofmap: DofMap,
    point_vectors: Optional[Mapping[str, FeField]] = None,
    cell_scalars: Optional[Mapping[str, np.ndarray]] = None,
    title: str = "shearflow",
) -> Path:
    """
    Legacy ASCII unstructured grid of quadratic triangles.

    Args:
        point_vectors: P2 vector fields written as POINT_DATA VECTORS
        cell_scalars: arrays of length n_triangles written as CELL_DATA SCALARS
    """
    path = _prepare(path)
    nodes = dofmap.node_coords
    cells = dofmap.element_nodes[:, _VTK_NODE_ORDER]
    nt = len(cells)

    lines = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {len(nodes)} double",
    ]
    lines += [f"{x!r} {y!r} 0.0" for x, y in nodes]
    lines.append(f"CELLS {nt} {nt * 7}")
    lines += ["6 " + " ".join(map(str, c)) for c in cells]
    lines.append(f"CELL_TYPES {nt}")
    lines += [str(VTK_QUADRATIC_TRIANGLE)] * nt

    if point_vectors:
        lines.append(f"POINT_DATA {len(nodes)}")
        for name, fe in point_vectors.items():
            lines.append(f"VECTORS {name} double")
            lines += [f"{a!r} {b!r} 0.0" for a, b in fe.nodal_values()]

    if cell_scalars:
        lines.append(f"CELL_DATA {nt}")
        for name, values in cell_scalars.items():
            values = np.asarray(values, dtype=float)
            if values.shape != (nt,):
                raise FieldError(f"cell scalar {name!r} needs {nt} values, got {values.shape}")
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [repr(float(v)) for v in values]

    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.debug(f"Wrote VTK file {path}")
    return path


# ============================================================================
# CSV
# ============================================================================

def write_nodal_csv(path: PathLike, field: FeField) -> Path:
    """x, y and field value columns at the P2 nodes (vertices for pressures)"""
    path = _prepare(path)
    if field.role.is_vector:
        xy = field.dofmap.node_coords
        values = field.nodal_values()
        frame = pd.DataFrame({"x": xy[:, 0], "y": xy[:, 1], "u1": values[:, 0], "u2": values[:, 1]})
    else:
        xy = field.dofmap.mesh.vertices
        frame = pd.DataFrame({"x": xy[:, 0], "y": xy[:, 1], "value": field.coefficients})
    frame.to_csv(path, index=False, float_format="%.17g")
    return path


def write_table_csv(path: PathLike, table: pd.DataFrame) -> Path:
    path = _prepare(path)
    table.to_csv(path, index=False, float_format="%.17g")
    return path


def read_nodal_csv(path: PathLike, dofmap: DofMap, tol: float = 1e-9) -> np.ndarray:
    """
    Read x, y, u1, u2 columns and return interleaved P2 coefficients.
    Rows are matched to the velocity nodes by coordinates.
    """
    try:
        frame = pd.read_csv(path)
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise FieldError(f"{path}: unreadable CSV ({e})") from e
    missing = {"x", "y", "u1", "u2"} - set(frame.columns)
    if missing:
        raise FieldError(f"{path}: missing columns {sorted(missing)}")
    columns = ["x", "y", "u1", "u2"]
    frame = frame[columns].apply(pd.to_numeric, errors="coerce")
    if frame.isna().any().any():
        raise FieldError(f"{path}: non-numeric or empty values in {columns}")
    nodes = dofmap.node_coords

    def key(x, y):
        return zip(np.round(x / tol).astype(np.int64), np.round(y / tol).astype(np.int64))

    lookup = {k: i for i, k in enumerate(key(nodes[:, 0], nodes[:, 1]))}
    coefs = np.full(dofmap.n_velocity, np.nan)
    for (kx, ky), u1, u2 in zip(key(frame["x"].to_numpy(), frame["y"].to_numpy()), frame["u1"], frame["u2"]):
        i = lookup.get((kx, ky))
        if i is not None:
            coefs[2 * i], coefs[2 * i + 1] = u1, u2
    if np.isnan(coefs).any():
        raise FieldError(f"{path}: {int(np.isnan(coefs).sum() // 2)} velocity nodes have no matching row")
    return coefs


# ============================================================================
# JSON
# ============================================================================

def _sanitize(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _sanitize(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_sanitize(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_sanitize(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else str(value)
    if isinstance(value, Path):
        return str(value)
    return value


def to_json(data: Dict) -> str:
    return json.dumps(_sanitize(data), sort_keys=True, indent=2)


def write_json(path: PathLike, data: Dict) -> Path:
    path = _prepare(path)
    path.write_text(to_json(data) + "\n", encoding="utf-8")
    logger.debug(f"Wrote JSON report {path}")
    return path


def strain_cell_scalars(eps: QuadTensorField) -> np.ndarray:
    return cell_average(eps.norms(), eps.weights)
