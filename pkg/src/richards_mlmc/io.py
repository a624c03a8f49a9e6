"""CSV and JSON writers shared by the drivers and the command line.

Floats are written with 17 significant digits so dumps round-trip exactly.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .grid import CellGrid


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return format(float(x), ".17g")


def write_field_csv(path, field: np.ndarray) -> Path:
    """Dump a cell field as ``i,j,x,z,value`` rows (1-based indices, x outer)."""
    field = np.asarray(field, dtype=float)
    grid = CellGrid(field.shape[0])
    grid.check(field)
    c = grid.centers
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j", "x", "z", "value"])
        for i in range(grid.M):
            for j in range(grid.M):
                w.writerow([i + 1, j + 1, fmt(c[i]), fmt(c[j]), fmt(field[i, j])])
    return path


def read_field_csv(path) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    M = int(round(math.sqrt(len(data))))
    out = np.empty((M, M))
    out[data[:, 0].astype(int) - 1, data[:, 1].astype(int) - 1] = data[:, 4]
    return out


def write_rows_csv(path, header, rows) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, int, np.number))
                        and not isinstance(v, bool) else v for v in row])
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path
