"""Binary field dumps and small CSV/JSON helpers.

A dump is one JSON header line ``{"nx", "ny", "Lx", "Ymax", "time", "name"}``
followed by little-endian float64 values with x varying fastest. For layer
profiles ``ny`` and ``Ymax`` hold ``Nz`` and ``Zmax``. Graded node sets are
not recoverable from the header, so directories also carry ``grid.json``.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .grid import Grid2D, LayerGrid

__all__ = ["dump_field", "load_field", "save_grid", "load_grid", "write_csv", "write_json"]


def dump_field(path, values: np.ndarray, Lx: float, Ymax: float, time: float, name: str):
    values = np.asarray(values, dtype=float)
    if values.ndim != 2:
        raise ValueError("dumps hold 2D arrays of shape (nx, ny)")
    nx, ny = values.shape
    header = {"nx": nx, "ny": ny, "Lx": float(Lx), "Ymax": float(Ymax),
              "time": float(time), "name": str(name)}
    with open(path, "wb") as fh:
        fh.write((json.dumps(header) + "\n").encode("ascii"))
        # (nx, ny) -> y-major rows with x fastest
        fh.write(np.ascontiguousarray(values.T).astype("<f8").tobytes())


def load_field(path) -> tuple[dict, np.ndarray]:
    """Returns ``(header, values)`` with ``values`` of shape ``(nx, ny)``."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("ascii"))
        raw = np.frombuffer(fh.read(), dtype="<f8")
    nx, ny = int(header["nx"]), int(header["ny"])
    if raw.size != nx * ny:
        raise ValueError(f"{path}: expected {nx * ny} values, found {raw.size}")
    return header, raw.reshape(ny, nx).T.astype(float)


def save_grid(path, grid: Grid2D | None = None, lgrid: LayerGrid | None = None):
    doc = {}
    if grid is not None:
        doc.update(Lx=grid.Lx, Nx=grid.Nx, y_nodes=grid.y_nodes.tolist())
    if lgrid is not None:
        doc["z_nodes"] = lgrid.z_nodes.tolist()
    write_json(path, doc)


def load_grid(path) -> tuple[Grid2D | None, LayerGrid | None]:
    doc = json.loads(Path(path).read_text())
    grid = Grid2D(doc["Lx"], doc["Nx"], np.array(doc["y_nodes"])) if "y_nodes" in doc else None
    lgrid = LayerGrid(np.array(doc["z_nodes"])) if "z_nodes" in doc else None
    return grid, lgrid


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        wr.writerows(rows)


def write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")
