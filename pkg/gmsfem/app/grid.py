"""
Structured coarse and fine grids on the unit square.

Numbering is lexicographic by (y, x) everywhere:
- fine node   p = iy * (nx_fine + 1) + ix
- fine cell   c = cy * nx_fine + cx
- coarse node i = Iy * (nx_coarse + 1) + Ix
- coarse cell K = Ky * nx_coarse + Kx

A coarse neighborhood (omega_i) is the union of coarse cells having x_i as a
vertex, so it is always a rectangle of fine nodes.
"""

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
import structlog

from app.errors import InvalidArgumentError

logger = structlog.get_logger()


@dataclass(frozen=True)
class Patch:
    """Fine-grid view of one coarse neighborhood."""
    index: int
    x_range: Tuple[int, int]  # inclusive fine-node index range
    y_range: Tuple[int, int]
    nodes: np.ndarray  # all fine nodes of the closed neighborhood
    interior: np.ndarray  # nodes strictly inside (boundary of omega_i excluded)
    boundary: np.ndarray  # perimeter nodes, counter-clockwise from the SW corner
    cells: np.ndarray  # fine cells
    coarse_cells: Tuple[int, ...]

    @property
    def shape(self) -> Tuple[int, int]:
        """(rows, cols) of the node block."""
        return self.y_range[1] - self.y_range[0] + 1, self.x_range[1] - self.x_range[0] + 1

    def local(self, global_nodes: np.ndarray) -> np.ndarray:
        """Positions of global node indices within `nodes`."""
        return np.searchsorted(self.nodes, global_nodes)


@dataclass(frozen=True)
class StructuredGrids:
    """Coarse/fine grids, neighborhood topology and index maps (immutable)."""
    nx_coarse: int
    ny_coarse: int
    nx_sub: int
    ny_sub: int
    patches: List[Patch] = field(repr=False)
    boundary_mask: np.ndarray = field(repr=False)  # fine nodes on the domain boundary

    @property
    def nx_fine(self) -> int:
        return self.nx_coarse * self.nx_sub

    @property
    def ny_fine(self) -> int:
        return self.ny_coarse * self.ny_sub

    @property
    def n_fine_nodes(self) -> int:
        return (self.nx_fine + 1) * (self.ny_fine + 1)

    @property
    def n_fine_cells(self) -> int:
        return self.nx_fine * self.ny_fine

    @property
    def n_coarse_nodes(self) -> int:
        return (self.nx_coarse + 1) * (self.ny_coarse + 1)

    @property
    def n_coarse_cells(self) -> int:
        return self.nx_coarse * self.ny_coarse

    @property
    def Hx(self) -> float:
        return 1.0 / self.nx_coarse

    @property
    def Hy(self) -> float:
        return 1.0 / self.ny_coarse

    @property
    def H(self) -> float:
        """Coarse mesh size (the larger side for non-square cells)."""
        return max(self.Hx, self.Hy)

    @property
    def hx(self) -> float:
        return self.Hx / self.nx_sub

    @property
    def hy(self) -> float:
        return self.Hy / self.ny_sub

    @property
    def boundary_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_mask)

    @property
    def free_nodes(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_mask)

    def node_index(self, ix, iy):
        return np.asarray(iy) * (self.nx_fine + 1) + np.asarray(ix)

    def node_coordinates(self) -> Tuple[np.ndarray, np.ndarray]:
        """x and y of every fine node, in node order."""
        iy, ix = np.divmod(np.arange(self.n_fine_nodes), self.nx_fine + 1)
        return ix * self.hx, iy * self.hy

    def coarse_node_coordinates(self, i: int) -> Tuple[float, float]:
        Iy, Ix = divmod(i, self.nx_coarse + 1)
        return Ix * self.Hx, Iy * self.Hy

    def cell_corners(self, cells: np.ndarray) -> np.ndarray:
        """(n_cells, 4) node indices in SW, SE, NE, NW order."""
        cy, cx = np.divmod(np.asarray(cells), self.nx_fine)
        sw = cy * (self.nx_fine + 1) + cx
        return np.stack([sw, sw + 1, sw + self.nx_fine + 2, sw + self.nx_fine + 1], axis=1)

    def coarse_cell_fine_cells(self, K: int) -> np.ndarray:
        Ky, Kx = divmod(K, self.nx_coarse)
        cy = np.arange(Ky * self.ny_sub, (Ky + 1) * self.ny_sub)
        cx = np.arange(Kx * self.nx_sub, (Kx + 1) * self.nx_sub)
        return (cy[:, None] * self.nx_fine + cx[None, :]).ravel()

    def coarse_cell_nodes(self, K: int) -> np.ndarray:
        Ky, Kx = divmod(K, self.nx_coarse)
        iy = np.arange(Ky * self.ny_sub, (Ky + 1) * self.ny_sub + 1)
        ix = np.arange(Kx * self.nx_sub, (Kx + 1) * self.nx_sub + 1)
        return self.node_index(ix[None, :], iy[:, None]).ravel()

    def coarse_cell_vertices(self, K: int) -> Tuple[int, int, int, int]:
        """Coarse node indices of K in SW, SE, NE, NW order."""
        Ky, Kx = divmod(K, self.nx_coarse)
        sw = Ky * (self.nx_coarse + 1) + Kx
        return sw, sw + 1, sw + self.nx_coarse + 2, sw + self.nx_coarse + 1

    def patch(self, i: int) -> Patch:
        if not 0 <= i < self.n_coarse_nodes:
            raise InvalidArgumentError(f"coarse node {i} out of range [0, {self.n_coarse_nodes})")
        return self.patches[i]

    def node_grid(self, values) -> np.ndarray:
        """Reshape a per-coarse-node sequence to (ny_coarse + 1, nx_coarse + 1)."""
        return np.asarray(values).reshape(self.ny_coarse + 1, self.nx_coarse + 1)


def _perimeter(x0: int, x1: int, y0: int, y1: int, nx_nodes: int) -> np.ndarray:
    if x0 == x1 or y0 == y1:
        ix, iy = np.meshgrid(np.arange(x0, x1 + 1), np.arange(y0, y1 + 1))
        return (iy * nx_nodes + ix).ravel()
    south = [(x, y0) for x in range(x0, x1)]
    east = [(x1, y) for y in range(y0, y1)]
    north = [(x, y1) for x in range(x1, x0, -1)]
    west = [(x0, y) for y in range(y1, y0, -1)]
    return np.array([y * nx_nodes + x for x, y in south + east + north + west], dtype=np.int64)


def _build_patch(i: int, nx_coarse: int, ny_coarse: int, nx_sub: int, ny_sub: int) -> Patch:
    nx_fine = nx_coarse * nx_sub
    nx_nodes = nx_fine + 1
    Iy, Ix = divmod(i, nx_coarse + 1)

    kx = [k for k in (Ix - 1, Ix) if 0 <= k < nx_coarse]
    ky = [k for k in (Iy - 1, Iy) if 0 <= k < ny_coarse]
    coarse_cells = tuple(y * nx_coarse + x for y in ky for x in kx)

    x0, x1 = kx[0] * nx_sub, (kx[-1] + 1) * nx_sub
    y0, y1 = ky[0] * ny_sub, (ky[-1] + 1) * ny_sub

    ix = np.arange(x0, x1 + 1)
    iy = np.arange(y0, y1 + 1)
    nodes = (iy[:, None] * nx_nodes + ix[None, :]).ravel()
    interior = (iy[1:-1, None] * nx_nodes + ix[None, 1:-1]).ravel()
    cx = np.arange(x0, x1)
    cy = np.arange(y0, y1)
    cells = (cy[:, None] * nx_fine + cx[None, :]).ravel()

    return Patch(
        index=i,
        x_range=(x0, x1),
        y_range=(y0, y1),
        nodes=nodes,
        interior=interior,
        boundary=_perimeter(x0, x1, y0, y1, nx_nodes),
        cells=cells,
        coarse_cells=coarse_cells,
    )


def build_grids(nx_coarse: int, ny_coarse: int, nx_sub: int, ny_sub: int) -> StructuredGrids:
    """Build the coarse/fine grids and every neighborhood patch."""
    counts = {"nx_coarse": nx_coarse, "ny_coarse": ny_coarse, "nx_sub": nx_sub, "ny_sub": ny_sub}
    for name, value in counts.items():
        if int(value) != value or value < 1:
            raise InvalidArgumentError(f"{name} must be a positive integer, got {value}")

    nx_nodes = nx_coarse * nx_sub + 1
    ny_nodes = ny_coarse * ny_sub + 1
    iy, ix = np.divmod(np.arange(nx_nodes * ny_nodes), nx_nodes)
    boundary_mask = (ix == 0) | (iy == 0) | (ix == nx_nodes - 1) | (iy == ny_nodes - 1)

    n_coarse_nodes = (nx_coarse + 1) * (ny_coarse + 1)
    patches = [_build_patch(i, nx_coarse, ny_coarse, nx_sub, ny_sub) for i in range(n_coarse_nodes)]

    logger.debug(
        "grids_built",
        coarse=f"{nx_coarse}x{ny_coarse}",
        sub=f"{nx_sub}x{ny_sub}",
        fine_nodes=nx_nodes * ny_nodes,
        coarse_nodes=n_coarse_nodes,
    )

    return StructuredGrids(
        nx_coarse=nx_coarse,
        ny_coarse=ny_coarse,
        nx_sub=nx_sub,
        ny_sub=ny_sub,
        patches=patches,
        boundary_mask=boundary_mask,
    )


def neighborhood_fine_dofs(grids: StructuredGrids, i: int) -> Tuple[np.ndarray, np.ndarray]:
    """All fine nodes of the closed neighborhood and its interior nodes, lexicographic."""
    patch = grids.patch(i)
    return patch.nodes, patch.interior
