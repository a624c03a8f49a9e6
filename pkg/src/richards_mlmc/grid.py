"""Uniform cell-centered grids on the unit square and their level hierarchy.

Arrays living on a grid have shape ``(M, M)`` and are indexed ``[i, j]``
with ``i`` running along x and ``j`` along z (``j = 0`` is the bottom row).
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np


class GridError(ValueError):
    """Invalid grid configuration or mismatched grid dimensions."""


@dataclass(frozen=True)
class CellGrid:
    """``M x M`` cells of width ``h = 1/M`` covering ``(0, 1)^2``."""

    M: int

    def __post_init__(self):
        if int(self.M) != self.M or self.M < 2:
            raise GridError(f"M must be an integer >= 2, got {self.M!r}")

    @property
    def h(self) -> float:
        return 1.0 / self.M

    @property
    def shape(self) -> tuple[int, int]:
        return (self.M, self.M)

    @property
    def centers(self) -> np.ndarray:
        """1D cell-center coordinates, identical in x and z."""
        return (np.arange(self.M) + 0.5) / self.M

    def meshgrid(self) -> tuple[np.ndarray, np.ndarray]:
        c = self.centers
        return np.meshgrid(c, c, indexing="ij")

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)

    def check(self, field: np.ndarray, name: str = "field") -> np.ndarray:
        field = np.asarray(field, dtype=float)
        if field.shape != self.shape:
            raise GridError(f"{name} has shape {field.shape}, expected {self.shape}")
        return field


def coarsen(grid: CellGrid, s: int = 2) -> CellGrid:
    """Return the grid with ``s`` times wider cells."""
    if s < 2 or grid.M % s != 0:
        raise GridError(f"cannot coarsen M={grid.M} by a factor {s}")
    return CellGrid(grid.M // s)


def refine(grid: CellGrid, s: int = 2) -> CellGrid:
    return CellGrid(grid.M * s)


@dataclass(frozen=True)
class GridHierarchy:
    """Levels ``0..L`` with ``h_l = s**-l * h_0`` and ``dt_l = dt_scale * h_l``."""

    M0: int
    n_levels: int
    s: int = 2
    dt_scale: float = 1.0

    def __post_init__(self):
        if self.n_levels < 1:
            raise GridError("a hierarchy needs at least one level")
        CellGrid(self.M0)

    @property
    def L(self) -> int:
        return self.n_levels - 1

    def grid(self, level: int) -> CellGrid:
        if not 0 <= level < self.n_levels:
            raise GridError(f"level {level} outside 0..{self.L}")
        return CellGrid(self.M0 * self.s**level)

    def dt(self, level: int) -> float:
        return self.dt_scale * self.grid(level).h

    @property
    def grids(self) -> list[CellGrid]:
        return [self.grid(l) for l in range(self.n_levels)]


def _coarse_coordinates(n_fine: int) -> tuple[np.ndarray, np.ndarray]:
    """Lower coarse index and weight for each fine cell along one axis.

    Fine centers outside the hull of coarse centers are projected onto it,
    which is constant extrapolation in the outward direction.
    """
    n_coarse = n_fine // 2
    xi = (np.arange(n_fine) + 0.5) / 2.0 - 0.5
    xi = np.clip(xi, 0.0, n_coarse - 1)
    i0 = np.minimum(np.floor(xi).astype(int), n_coarse - 2)
    return i0, xi - i0


def interpolate_bilinear(field: np.ndarray, target: CellGrid) -> np.ndarray:
    """Interpolate a cell-centered field onto the grid one refinement finer.

    Interior fine cells get tensor-product linear interpolation between the
    four surrounding coarse centers; the half-cell boundary strip uses the
    nearest point of the coarse-center hull.
    """
    field = np.asarray(field, dtype=float)
    if field.ndim != 2 or field.shape[0] != field.shape[1]:
        raise GridError(f"expected a square field, got shape {field.shape}")
    if target.M != 2 * field.shape[0]:
        raise GridError(
            f"target M={target.M} is not one refinement of M={field.shape[0]}"
        )
    i0, t = _coarse_coordinates(target.M)
    # separable: interpolate along x, then along z
    along_x = field[i0, :] * (1.0 - t)[:, None] + field[i0 + 1, :] * t[:, None]
    return along_x[:, i0] * (1.0 - t)[None, :] + along_x[:, i0 + 1] * t[None, :]


def prolongate_to(field: np.ndarray, target: CellGrid) -> np.ndarray:
    """Repeatedly interpolate ``field`` up to ``target`` (identity if equal)."""
    field = np.asarray(field, dtype=float)
    while field.shape[0] < target.M:
        field = interpolate_bilinear(field, CellGrid(2 * field.shape[0]))
    if field.shape != target.shape:
        raise GridError(f"cannot map shape {field.shape} onto M={target.M}")
    return field


def parse_cell_count(value) -> int:
    """Accept ``32``, ``"32"`` or a cell width such as ``"1/32"``."""
    if isinstance(value, str) and "/" in value:
        frac = Fraction(value.strip())
        if frac.numerator != 1:
            raise GridError(f"cell width must be 1/M, got {value}")
        return int(frac.denominator)
    return int(value)
