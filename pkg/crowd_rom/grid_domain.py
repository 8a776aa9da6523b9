"""
Corridor geometry and cell-indexed scalar fields.

Cells are indexed (i, j) with i along the corridor (x) and j across it (y).
Field values are stored as (nx, ny) arrays; flattening is row-major, so the
flat index of cell (i, j) is i * ny + j.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import numpy as np

from .enums import CellKind, Quantity
from .exceptions import DomainError, FieldTypeError, GeometryError

logger = logging.getLogger(__name__)

# Density values above this negative bound are treated as rounding noise
DENSITY_NEGATIVE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class Obstacle:
    """Square obstacle given by its center and side length (meters)"""
    center_x: float
    center_y: float
    side: float

    @property
    def bounds(self):
        half = 0.5 * self.side
        return (
            self.center_x - half,
            self.center_x + half,
            self.center_y - half,
            self.center_y + half,
        )


@dataclass(frozen=True, eq=False)
class Grid:
    """Discretized corridor with an optional square obstacle"""
    nx: int
    ny: int
    length_x: float
    length_y: float
    obstacle: Optional[Obstacle]
    cell_kind: np.ndarray = field(repr=False)

    @property
    def dx(self) -> float:
        return self.length_x / self.nx

    @property
    def dy(self) -> float:
        return self.length_y / self.ny

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    @property
    def shape(self):
        return (self.nx, self.ny)

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def obstacle_mask(self) -> np.ndarray:
        return self.cell_kind == CellKind.OBSTACLE.value

    @property
    def fluid_mask(self) -> np.ndarray:
        return self.cell_kind == CellKind.FLUID.value

    @property
    def n_obstacle_cells(self) -> int:
        return int(self.obstacle_mask.sum())

    @property
    def x_centers(self) -> np.ndarray:
        return (np.arange(self.nx) + 0.5) * self.dx

    @property
    def y_centers(self) -> np.ndarray:
        return (np.arange(self.ny) + 0.5) * self.dy

    def cell_centers(self) -> np.ndarray:
        """(nx*ny, 2) array of cell centers in flat (row-major) order"""
        xc, yc = np.meshgrid(self.x_centers, self.y_centers, indexing="ij")
        return np.column_stack([xc.ravel(), yc.ravel()])

    def same_geometry(self, other: "Grid") -> bool:
        return (
            self.nx == other.nx
            and self.ny == other.ny
            and self.length_x == other.length_x
            and self.length_y == other.length_y
            and self.obstacle == other.obstacle
        )

    def to_dict(self) -> Dict[str, Any]:
        """Geometry description stored in manifests"""
        obstacle = None
        if self.obstacle is not None:
            obstacle = {
                "center_x": self.obstacle.center_x,
                "center_y": self.obstacle.center_y,
                "side": self.obstacle.side,
            }
        return {
            "nx": self.nx,
            "ny": self.ny,
            "length_x": self.length_x,
            "length_y": self.length_y,
            "obstacle": obstacle,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Grid":
        obstacle = data.get("obstacle")
        spec = Obstacle(**obstacle) if obstacle else None
        return build_grid(
            data["nx"], data["ny"], data["length_x"], data["length_y"], spec
        )


def build_grid(
    nx: int,
    ny: int,
    length_x: float,
    length_y: float,
    obstacle_spec: Optional[Any] = None,
) -> Grid:
    """Build a corridor grid and tag obstacle cells by center containment.

    ``obstacle_spec`` is anything exposing ``center_x``, ``center_y`` and
    ``side`` (an :class:`Obstacle` or the pydantic ``ObstacleSpec``).
    """
    if nx < 4 or ny < 4:
        raise GeometryError(f"Grid needs at least 4x4 cells, got {nx}x{ny}")
    if not (length_x > 0 and length_y > 0):
        raise GeometryError(
            f"Corridor dimensions must be positive, got {length_x}x{length_y}"
        )

    dx = length_x / nx
    dy = length_y / ny
    cell_kind = np.full((nx, ny), CellKind.FLUID.value, dtype=np.int8)

    obstacle = None
    if obstacle_spec is not None:
        obstacle = Obstacle(
            float(obstacle_spec.center_x),
            float(obstacle_spec.center_y),
            float(obstacle_spec.side),
        )
        if obstacle.side <= 0:
            raise GeometryError(f"Obstacle side must be positive, got {obstacle.side}")
        xmin, xmax, ymin, ymax = obstacle.bounds
        if xmin < dx or xmax > length_x - dx:
            raise GeometryError(
                f"Obstacle x-extent [{xmin}, {xmax}] must stay one cell away "
                f"from x = 0 and x = {length_x}"
            )
        if ymin <= 0 or ymax >= length_y:
            raise GeometryError(
                f"Obstacle y-extent [{ymin}, {ymax}] touches the walls of a "
                f"corridor of height {length_y}"
            )

        # half-open on the max edges; the tolerance keeps exact ties on the min side
        tol_x = 1e-9 * dx
        tol_y = 1e-9 * dy
        xc = (np.arange(nx) + 0.5) * dx
        yc = (np.arange(ny) + 0.5) * dy
        in_x = (xc >= xmin - tol_x) & (xc < xmax - tol_x)
        in_y = (yc >= ymin - tol_y) & (yc < ymax - tol_y)
        inside = np.outer(in_x, in_y)
        if inside[:, 0].any() or inside[:, -1].any():
            raise GeometryError("Obstacle cells touch the corridor walls")
        if inside[0, :].any() or inside[-1, :].any():
            raise GeometryError("Obstacle cells touch the periodic x-boundaries")
        cell_kind[inside] = CellKind.OBSTACLE.value

    cell_kind.setflags(write=False)
    grid = Grid(nx, ny, float(length_x), float(length_y), obstacle, cell_kind)
    logger.debug(
        f"Built {nx}x{ny} grid (dx={grid.dx:g}, dy={grid.dy:g}) "
        f"with {grid.n_obstacle_cells} obstacle cells"
    )
    return grid


@dataclass(frozen=True, eq=False)
class Field:
    """One cell-averaged scalar field on a grid at one time"""
    grid: Grid
    values: np.ndarray = field(repr=False)
    quantity: Quantity = Quantity.DENSITY
    time: float = 0.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.size != self.grid.n_cells:
            raise DomainError(
                f"Field has {values.size} values, grid has {self.grid.n_cells} cells"
            )
        values = values.reshape(self.grid.shape).copy()
        if self.quantity is Quantity.DENSITY:
            if values.size and values.min() < -DENSITY_NEGATIVE_TOLERANCE:
                raise DomainError(f"Negative density {values.min():.3e}")
            if np.any(values[self.grid.obstacle_mask] != 0.0):
                raise DomainError("Density must vanish on obstacle cells")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def with_values(self, values: np.ndarray, time: Optional[float] = None) -> "Field":
        return Field(
            self.grid,
            values,
            self.quantity,
            self.time if time is None else time,
        )


def density_field(grid: Grid, values: np.ndarray, time: float = 0.0) -> Field:
    return Field(grid, values, Quantity.DENSITY, time)


def total_mass(field: Field) -> float:
    """Sum of rho * dx * dy over fluid cells"""
    if field.quantity is not Quantity.DENSITY:
        raise FieldTypeError(f"total_mass needs a density field, got {field.quantity.value}")
    grid = field.grid
    return float(field.values[grid.fluid_mask].sum() * grid.cell_area)
