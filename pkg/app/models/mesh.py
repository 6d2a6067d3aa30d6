"""
Mesh models for the FD-DLM augmented Lagrangian toolkit.

Contains the immutable quadrilateral mesh and the point-location result.
"""
from typing import Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict


class Mesh(BaseModel):
    """Quadrilateral mesh with counterclockwise bilinear cells.

    Box meshes carry their bounds and ``cells_per_side`` so that point
    location can use direct indexing; disk meshes carry centre, radius and
    refinement level so refinement can project new boundary nodes.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    nodes: np.ndarray
    cells: np.ndarray
    boundary_nodes: np.ndarray
    h: float
    geometry_tag: Literal["box", "disk"]

    lo: Optional[Tuple[float, float]] = None
    hi: Optional[Tuple[float, float]] = None
    cells_per_side: Optional[int] = None
    center: Optional[Tuple[float, float]] = None
    radius: Optional[float] = None
    refinement_level: Optional[int] = None

    @property
    def n_nodes(self) -> int:
        return int(self.nodes.shape[0])

    @property
    def n_cells(self) -> int:
        return int(self.cells.shape[0])

    @property
    def is_structured(self) -> bool:
        """True when cells follow the row-major tensor-product numbering of a box."""
        return self.geometry_tag == "box" and self.cells_per_side is not None

    def cell_corners(self) -> np.ndarray:
        """Corner coordinates per cell, shape (n_cells, 4, 2)."""
        return self.nodes[self.cells]

    def cell_diameters(self) -> np.ndarray:
        """Largest vertex-to-vertex distance of every cell."""
        corners = self.cell_corners()
        diffs = corners[:, :, None, :] - corners[:, None, :, :]
        return np.sqrt((diffs ** 2).sum(axis=-1)).reshape(self.n_cells, -1).max(axis=1)

    def cell_areas(self) -> np.ndarray:
        """Shoelace area of every cell."""
        x = self.cell_corners()[:, :, 0]
        y = self.cell_corners()[:, :, 1]
        return 0.5 * (x * np.roll(y, -1, axis=1) - np.roll(x, -1, axis=1) * y).sum(axis=1)

    def area(self) -> float:
        return float(self.cell_areas().sum())

    def bilinear_map(self, cell_index: int, ref: Tuple[float, float]) -> np.ndarray:
        """Map reference coordinates of ``cell_index`` to physical space."""
        xi, eta = ref
        weights = np.array([(1 - xi) * (1 - eta), xi * (1 - eta), xi * eta, (1 - xi) * eta])
        return weights @ self.nodes[self.cells[cell_index]]


class CellLocation(BaseModel):
    """Cell containing a query point and the point's reference coordinates."""
    model_config = ConfigDict(frozen=True)

    cell_index: int
    ref_coords: Tuple[float, float]
