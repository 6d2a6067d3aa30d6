"""
Mesh service for the FD-DLM augmented Lagrangian toolkit.

Builds the structured background box and the immersed square/disk meshes,
refines them, exports them as text and locates points with an inverse
bilinear map.
"""
import logging
from pathlib import Path
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from core.exceptions import ParseError, PointOutsideMesh
from models.mesh import CellLocation, Mesh

logger = logging.getLogger(__name__)

NEWTON_TOL = 1e-12
NEWTON_MAXIT = 25
CONTAINMENT_TOL = 1e-10
# inner square half-width of the 5-patch disk, as a fraction of the radius
DISK_CORE_FRACTION = 0.5


def shape_values(ref: np.ndarray) -> np.ndarray:
    """Q1 shape functions at reference points, shape (..., 4), counterclockwise corners."""
    xi, eta = ref[..., 0], ref[..., 1]
    return np.stack([(1 - xi) * (1 - eta), xi * (1 - eta), xi * eta, (1 - xi) * eta], axis=-1)


def shape_gradients(ref: np.ndarray) -> np.ndarray:
    """Reference gradients of the Q1 shape functions, shape (..., 4, 2)."""
    xi, eta = ref[..., 0], ref[..., 1]
    d_xi = np.stack([-(1 - eta), 1 - eta, eta, -eta], axis=-1)
    d_eta = np.stack([-(1 - xi), -xi, xi, 1 - xi], axis=-1)
    return np.stack([d_xi, d_eta], axis=-1)


def boundary_nodes_of(cells: np.ndarray) -> np.ndarray:
    """Nodes on edges that belong to exactly one cell."""
    edges = np.concatenate([cells[:, [k, (k + 1) % 4]] for k in range(4)])
    edges = np.sort(edges, axis=1)
    unique, counts = np.unique(edges, axis=0, return_counts=True)
    return np.unique(unique[counts == 1])


def corner_jacobians(nodes: np.ndarray, cells: np.ndarray) -> np.ndarray:
    """Bilinear Jacobian determinant at the four corners of every cell."""
    corners = nodes[cells]
    nxt = np.roll(corners, -1, axis=1) - corners
    prv = np.roll(corners, 1, axis=1) - corners
    return nxt[..., 0] * prv[..., 1] - nxt[..., 1] * prv[..., 0]


def _diameters(nodes: np.ndarray, cells: np.ndarray) -> np.ndarray:
    corners = nodes[cells]
    diffs = corners[:, :, None, :] - corners[:, None, :, :]
    return np.sqrt((diffs ** 2).sum(axis=-1)).reshape(len(cells), -1).max(axis=1)


def _merge_duplicates(nodes: np.ndarray, cells: np.ndarray, tol: float) -> Tuple[np.ndarray, np.ndarray]:
    """Collapse coincident nodes (first occurrence wins) and renumber cells."""
    tree = cKDTree(nodes)
    representative = np.arange(len(nodes))
    for i, j in sorted(tree.query_pairs(tol)):
        representative[j] = min(representative[j], representative[i])
    keep = np.unique(representative)
    renumber = np.full(len(nodes), -1)
    renumber[keep] = np.arange(len(keep))
    return nodes[keep], renumber[representative][cells]


class MeshService:
    """Mesh generation and point location."""

    def build_box_mesh(self, lo: Sequence[float], hi: Sequence[float], cells_per_side: int) -> Mesh:
        """
        Build a uniform tensor-product mesh of an axis-aligned box.

        Nodes are numbered row by row (x fastest); cell (i, j) has index
        j·cells_per_side + i and corners (i,j), (i+1,j), (i+1,j+1), (i,j+1).

        Args:
            lo: lower-left corner
            hi: upper-right corner
            cells_per_side: number of cells along each axis

        Returns:
            Mesh: box mesh with geometry_tag "box"
        """
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if lo.shape != (2,) or hi.shape != (2,):
            raise ValueError(f"box corners must be 2D points, got {lo} and {hi}")
        if not np.all(lo < hi):
            raise ValueError(f"box bounds must satisfy lo < hi componentwise, got lo={lo}, hi={hi}")
        if int(cells_per_side) < 1:
            raise ValueError(f"cells_per_side must be ≥ 1, got {cells_per_side}")
        k = int(cells_per_side)

        xs = np.linspace(lo[0], hi[0], k + 1)
        ys = np.linspace(lo[1], hi[1], k + 1)
        gx, gy = np.meshgrid(xs, ys)
        nodes = np.column_stack([gx.ravel(), gy.ravel()])

        i, j = np.meshgrid(np.arange(k), np.arange(k))
        base = (j * (k + 1) + i).ravel()
        cells = np.column_stack([base, base + 1, base + k + 2, base + k + 1])

        h = float(np.hypot(*(hi - lo)) / k)
        return self._finish(nodes, cells, h, "box", lo=tuple(lo), hi=tuple(hi), cells_per_side=k)

    def build_disk_mesh(self, center: Sequence[float], radius: float, refinement_level: int) -> Mesh:
        """
        Build the 5-patch quadrilateral disk mesh.

        A central square of half-width 0.5·radius is surrounded by four
        blocks bounded by the square's sides and quarter arcs of the circle.
        Every patch carries a 2^level × 2^level grid placed by transfinite
        interpolation, so boundary nodes lie on the circle at every level.
        """
        if radius <= 0:
            raise ValueError(f"radius must be positive, got {radius}")
        if refinement_level < 0:
            raise ValueError(f"refinement_level must be ≥ 0, got {refinement_level}")
        c = np.asarray(center, dtype=float)
        k = 2 ** int(refinement_level)
        a = DISK_CORE_FRACTION * radius
        s = np.linspace(0.0, 1.0, k + 1)

        blocks = []
        # central square
        gx, gy = np.meshgrid(-a + 2 * a * s, -a + 2 * a * s)
        blocks.append(np.stack([gx, gy], axis=-1))
        # annular blocks east, north, west, south; s runs counterclockwise, t outward
        for q in range(4):
            theta0 = -0.25 * np.pi + 0.5 * np.pi * q
            theta = theta0 + 0.5 * np.pi * s
            arc = radius * np.column_stack([np.cos(theta), np.sin(theta)])
            inner_start = np.sqrt(2.0) * a * np.array([np.cos(theta0), np.sin(theta0)])
            inner_end = np.sqrt(2.0) * a * np.array([np.cos(theta0 + 0.5 * np.pi),
                                                     np.sin(theta0 + 0.5 * np.pi)])
            inner = inner_start[None, :] + s[:, None] * (inner_end - inner_start)[None, :]
            # rows indexed by t, columns by s
            grid = (1 - s)[:, None, None] * inner[None, :, :] + s[:, None, None] * arc[None, :, :]
            blocks.append(grid)

        all_nodes, all_cells, offset = [], [], 0
        for grid in blocks:
            rows, cols = grid.shape[:2]
            all_nodes.append(grid.reshape(-1, 2))
            r, q = np.meshgrid(np.arange(rows - 1), np.arange(cols - 1), indexing="ij")
            base = (r * cols + q).ravel() + offset
            all_cells.append(np.column_stack([base, base + 1, base + cols + 1, base + cols]))
            offset += rows * cols

        nodes, cells = _merge_duplicates(np.vstack(all_nodes), np.vstack(all_cells),
                                         tol=1e-9 * radius)
        nodes = nodes + c
        cells = self._orient_ccw(nodes, cells)
        h = float(_diameters(nodes, cells).max())
        mesh = self._finish(nodes, cells, h, "disk", center=tuple(c), radius=float(radius),
                            refinement_level=int(refinement_level))
        self._project_boundary(mesh.nodes, mesh.boundary_nodes, c, radius)
        return mesh

    def refine_mesh(self, mesh: Mesh) -> Mesh:
        """Split every cell into four (edge midpoints and cell centre).

        Box meshes are regenerated so that direct-index location stays valid;
        disk boundary midpoints are projected back onto the circle.
        """
        if mesh.is_structured:
            return self.build_box_mesh(mesh.lo, mesh.hi, 2 * mesh.cells_per_side)

        nodes, cells = mesh.nodes, mesh.cells
        edges = np.sort(np.concatenate([cells[:, [k, (k + 1) % 4]] for k in range(4)]), axis=1)
        unique_edges, edge_ids = np.unique(edges, axis=0, return_inverse=True)
        edge_ids = edge_ids.reshape(4, -1).T
        n0, ne = len(nodes), len(unique_edges)
        midpoints = nodes[unique_edges].mean(axis=1)
        centres = nodes[cells].mean(axis=1)
        new_nodes = np.vstack([nodes, midpoints, centres])

        e = edge_ids + n0
        ctr = np.arange(len(cells)) + n0 + ne
        v0, v1, v2, v3 = cells.T
        new_cells = np.vstack([
            np.column_stack([v0, e[:, 0], ctr, e[:, 3]]),
            np.column_stack([e[:, 0], v1, e[:, 1], ctr]),
            np.column_stack([ctr, e[:, 1], v2, e[:, 2]]),
            np.column_stack([e[:, 3], ctr, e[:, 2], v3]),
        ])
        # children of parent c get indices 4c .. 4c+3
        k = len(cells)
        new_cells = new_cells[(np.arange(k)[:, None] + k * np.arange(4)[None, :]).ravel()]
        h = float(_diameters(new_nodes, new_cells).max())
        refined = self._finish(
            new_nodes, new_cells, h, mesh.geometry_tag, center=mesh.center, radius=mesh.radius,
            refinement_level=None if mesh.refinement_level is None else mesh.refinement_level + 1,
        )
        if mesh.geometry_tag == "disk" and mesh.radius is not None:
            self._project_boundary(refined.nodes, refined.boundary_nodes,
                                   np.asarray(mesh.center), mesh.radius)
        return refined

    def locate_point(self, mesh: Mesh, p: Sequence[float]) -> CellLocation:
        """
        Find the cell containing ``p`` (closed cells, lowest index on ties).

        Raises:
            PointOutsideMesh: if no cell contains the point
        """
        cells, refs = self.locate_points(mesh, np.asarray(p, dtype=float)[None, :])
        return CellLocation(cell_index=int(cells[0]), ref_coords=(float(refs[0, 0]), float(refs[0, 1])))

    def locate_points(self, mesh: Mesh, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Vectorized point location returning (cell indices, reference coordinates)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if mesh.n_cells == 0:
            raise PointOutsideMesh(points[0], "mesh has no cells")
        if mesh.is_structured:
            return self._locate_structured(mesh, points)
        return self._locate_search(mesh, points)

    def contains(self, mesh: Mesh, cell_index: int, p: np.ndarray) -> Optional[np.ndarray]:
        """Reference coordinates of ``p`` if the closed cell contains it, else None."""
        ref = self.inverse_bilinear(mesh.nodes[mesh.cells[cell_index]], p)
        if ref is None:
            return None
        lo, hi = -CONTAINMENT_TOL, 1.0 + CONTAINMENT_TOL
        if lo <= ref[0] <= hi and lo <= ref[1] <= hi:
            return ref
        return None

    @staticmethod
    def inverse_bilinear(corners: np.ndarray, p: np.ndarray) -> Optional[np.ndarray]:
        """Newton iteration for the reference point mapped to ``p`` (None if it fails)."""
        ref = np.array([0.5, 0.5])
        scale = max(np.ptp(corners[:, 0]), np.ptp(corners[:, 1]))
        for _ in range(NEWTON_MAXIT):
            residual = shape_values(ref) @ corners - p
            jac = corners.T @ shape_gradients(ref)
            try:
                step = np.linalg.solve(jac, residual)
            except np.linalg.LinAlgError:
                return None
            ref = ref - step
            if np.linalg.norm(step) <= NEWTON_TOL:
                return ref
        return ref if np.linalg.norm(shape_values(ref) @ corners - p) <= CONTAINMENT_TOL * scale else None

    def write_mesh_text(self, mesh: Mesh, path: str) -> Path:
        """Export as '<n_nodes> <n_cells>' header, node coordinates, then cell 4-tuples."""
        target = Path(path)
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            with target.open("w", encoding="utf-8") as fh:
                fh.write(f"{mesh.n_nodes} {mesh.n_cells} {mesh.geometry_tag}\n")
                for x, y in mesh.nodes:
                    fh.write(f"{float(x)!r} {float(y)!r}\n")
                for cell in mesh.cells:
                    fh.write(" ".join(str(int(v)) for v in cell) + "\n")
        except OSError as e:
            raise OSError(f"cannot write mesh to {target}: {e}") from e
        return target

    def read_mesh_text(self, path: str) -> Mesh:
        """Read a mesh written by write_mesh_text (treated as unstructured)."""
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        try:
            head = lines[0].split()
            n_nodes, n_cells, tag = int(head[0]), int(head[1]), head[2]
        except (IndexError, ValueError) as e:
            raise ParseError(f"bad mesh header: {e}", line=1, path=str(path)) from e
        nodes = self._parse_rows(lines, 1, n_nodes, float, path)
        cells = self._parse_rows(lines, 1 + n_nodes, n_cells, int, path)
        h = float(_diameters(nodes, cells).max())
        return self._finish(nodes, cells, h, tag)

    # ------------------------------------------------------------------

    @staticmethod
    def _parse_rows(lines, start, count, kind, path) -> np.ndarray:
        rows = []
        for offset in range(count):
            lineno = start + offset
            try:
                rows.append([kind(v) for v in lines[lineno].split()])
            except (IndexError, ValueError) as e:
                raise ParseError(f"bad row: {e}", line=lineno + 1, path=str(path)) from e
        return np.array(rows, dtype=float if kind is float else int)

    @staticmethod
    def _orient_ccw(nodes: np.ndarray, cells: np.ndarray) -> np.ndarray:
        cells = cells.copy()
        clockwise = corner_jacobians(nodes, cells)[:, 0] < 0
        cells[clockwise] = cells[clockwise][:, ::-1]
        return cells

    @staticmethod
    def _project_boundary(nodes: np.ndarray, boundary: np.ndarray, center: np.ndarray, radius: float) -> None:
        nodes.setflags(write=True)
        offsets = nodes[boundary] - center
        nodes[boundary] = center + radius * offsets / np.linalg.norm(offsets, axis=1)[:, None]
        nodes.setflags(write=False)

    @staticmethod
    def _finish(nodes: np.ndarray, cells: np.ndarray, h: float, tag: str, **meta) -> Mesh:
        nodes = np.ascontiguousarray(nodes, dtype=float)
        cells = np.ascontiguousarray(cells, dtype=np.int64)
        jac = corner_jacobians(nodes, cells)
        assert np.all(jac > 0), f"non-convex or clockwise cells: min corner Jacobian {jac.min():.3e}"
        diam = _diameters(nodes, cells)
        assert diam.max() / diam.min() <= 4.0, (
            f"mesh is not quasi-uniform: diameter ratio {diam.max() / diam.min():.2f}"
        )
        boundary = boundary_nodes_of(cells)
        for arr in (nodes, cells, boundary):
            arr.setflags(write=False)
        mesh = Mesh(nodes=nodes, cells=cells, boundary_nodes=boundary, h=h, geometry_tag=tag, **meta)
        logger.debug(f"Built {tag} mesh: {mesh.n_nodes} nodes, {mesh.n_cells} cells, h={h:.4g}")
        return mesh

    def _locate_structured(self, mesh: Mesh, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        k = mesh.cells_per_side
        lo = np.asarray(mesh.lo)
        hi = np.asarray(mesh.hi)
        spacing = (hi - lo) / k
        scaled = (points - lo) / spacing
        tol = CONTAINMENT_TOL * mesh.h / spacing
        outside = np.any((scaled < -tol) | (scaled > k + tol), axis=1)
        if outside.any():
            raise PointOutsideMesh(points[np.argmax(outside)])
        # closed cells: a point on a grid line belongs to the lower-index neighbour
        idx = np.clip(np.ceil(scaled).astype(np.int64) - 1, 0, k - 1)
        ref = np.clip(scaled - idx, 0.0, 1.0)
        return idx[:, 1] * k + idx[:, 0], ref

    def _locate_search(self, mesh: Mesh, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        corners = mesh.cell_corners()
        centroids = corners.mean(axis=1)
        tree = cKDTree(centroids)
        reach = mesh.h * (1.0 + 1e-8)
        box_lo = corners.min(axis=1) - CONTAINMENT_TOL * mesh.h
        box_hi = corners.max(axis=1) + CONTAINMENT_TOL * mesh.h
        found = np.empty(len(points), dtype=np.int64)
        refs = np.empty((len(points), 2))
        for n, p in enumerate(points):
            candidates = sorted(tree.query_ball_point(p, reach))
            hit = None
            for cell in candidates:
                if np.any(p < box_lo[cell]) or np.any(p > box_hi[cell]):
                    continue
                ref = self.contains(mesh, cell, p)
                if ref is not None:
                    hit = cell
                    break
            if hit is None:
                raise PointOutsideMesh(p)
            found[n] = hit
            refs[n] = np.clip(ref, 0.0, 1.0)
        return found, refs


mesh_service = MeshService()
