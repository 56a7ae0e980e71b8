"""
Per-neighborhood machinery: multiscale partition of unity, snapshot spaces,
the local spectral problem and the active eigenbasis of each neighborhood.

All per-neighborhood arrays use the node order of `Patch.nodes`.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, TypeVar

import numpy as np
import scipy.sparse as sp
import structlog

from app.config import get_settings
from app.errors import StateError
from app.fem import EigenPairs, generalized_eig, local_mass, local_stiffness, solve_spd
from app.field import CoefficientField
from app.grid import StructuredGrids
from app.schemas import SnapshotFamily

logger = structlog.get_logger()

T = TypeVar("T")

_TINY = 1e-300


def parallel_map(func: Callable[[int], T], indices, workers: Optional[int] = None) -> List[T]:
    """Map over neighborhoods, keeping input order. One worker runs inline."""
    workers = get_settings().workers if workers is None else workers
    indices = list(indices)
    if workers <= 1 or len(indices) <= 1:
        return [func(i) for i in indices]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, indices))


@dataclass(frozen=True)
class PartitionOfUnity:
    """chi_i for every coarse node, each stored on the nodes of its patch."""
    values: List[np.ndarray]
    n_fine_nodes: int

    def __len__(self) -> int:
        return len(self.values)

    def full(self, grids: StructuredGrids, i: int) -> np.ndarray:
        """chi_i as a fine-grid nodal vector."""
        out = np.zeros(self.n_fine_nodes)
        out[grids.patch(i).nodes] = self.values[i]
        return out

    def as_matrix(self, grids: StructuredGrids) -> sp.csr_matrix:
        """Sparse (n_fine_nodes, n_coarse_nodes) matrix with chi_i in column i."""
        rows = np.concatenate([p.nodes for p in grids.patches])
        cols = np.concatenate([np.full(len(p.nodes), p.index) for p in grids.patches])
        data = np.concatenate(self.values)
        return sp.csr_matrix((data, (rows, cols)), shape=(self.n_fine_nodes, len(self.values)))


def _bilinear_hats(grids: StructuredGrids, K: int) -> np.ndarray:
    """(n_nodes_K, 4) bilinear hats of K's vertices (SW, SE, NE, NW) at K's fine nodes."""
    ry, rx = np.divmod(np.arange((grids.ny_sub + 1) * (grids.nx_sub + 1)), grids.nx_sub + 1)
    xi = rx / grids.nx_sub
    eta = ry / grids.ny_sub
    return np.column_stack([(1 - xi) * (1 - eta), xi * (1 - eta), xi * eta, (1 - xi) * eta])


def build_pou(grids: StructuredGrids, field: CoefficientField) -> PartitionOfUnity:
    """
    kappa-harmonic multiscale hats.

    On every coarse cell K the four vertex problems -div(kappa grad chi) = 0 are
    solved with the bilinear hat of each vertex as Dirichlet data on the
    boundary of K, then stitched into per-neighborhood arrays.
    """
    values = [np.zeros(len(p.nodes)) for p in grids.patches]

    ry, rx = np.divmod(np.arange((grids.ny_sub + 1) * (grids.nx_sub + 1)), grids.nx_sub + 1)
    inner = (rx > 0) & (rx < grids.nx_sub) & (ry > 0) & (ry < grids.ny_sub)
    I, B = np.flatnonzero(inner), np.flatnonzero(~inner)

    for K in range(grids.n_coarse_cells):
        nodes = grids.coarse_cell_nodes(K)
        chi = _bilinear_hats(grids, K)
        if I.size:
            A = local_stiffness(grids, field, grids.coarse_cell_fine_cells(K), nodes)
            chi[I] = solve_spd(A[np.ix_(I, I)], -A[np.ix_(I, B)] @ chi[B])

        for column, i in enumerate(grids.coarse_cell_vertices(K)):
            patch = grids.patches[i]
            values[i][patch.local(nodes)] = chi[:, column]

    logger.debug("pou_built", coarse_cells=grids.n_coarse_cells)
    return PartitionOfUnity(values=values, n_fine_nodes=grids.n_fine_nodes)


def build_snapshots_harmonic(
    grids: StructuredGrids,
    field: CoefficientField,
    i: int,
    stiffness: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    kappa-harmonic extensions of discrete deltas on the patch perimeter.

    Returns (n_patch_nodes, W_i); column j is 1 at the j-th perimeter node
    (counter-clockwise from SW), 0 at the others, harmonic inside.
    """
    patch = grids.patch(i)
    A = local_stiffness(grids, field, patch.cells, patch.nodes) if stiffness is None else stiffness
    B = patch.local(patch.boundary)
    I = patch.local(patch.interior)

    snapshots = np.zeros((len(patch.nodes), len(B)))
    snapshots[B, np.arange(len(B))] = 1.0
    if I.size:
        snapshots[I] = solve_spd(A[np.ix_(I, I)], -A[np.ix_(I, B)])
    return snapshots


def build_snapshots_nodal(grids: StructuredGrids, i: int) -> np.ndarray:
    """Unit vectors of the patch nodes that are not on the domain boundary."""
    patch = grids.patch(i)
    free = np.flatnonzero(~grids.boundary_mask[patch.nodes])
    snapshots = np.zeros((len(patch.nodes), len(free)))
    snapshots[free, np.arange(len(free))] = 1.0
    return snapshots


@dataclass(frozen=True)
class NeighborhoodSpace:
    """Snapshots, projected local matrices, eigenpairs and the active count l_i."""
    index: int
    snapshots: np.ndarray  # R_snap, (n_patch_nodes, W_i)
    A_off: np.ndarray
    S_off: np.ndarray
    eigenpairs: EigenPairs
    active: int
    stiffness: np.ndarray  # kappa stiffness over the patch cells, patch numbering

    @property
    def n_snapshots(self) -> int:
        return self.snapshots.shape[1]

    @property
    def saturated(self) -> bool:
        return self.active >= self.n_snapshots

    @property
    def next_eigenvalue(self) -> float:
        """lambda_{l_i + 1}, or inf once saturated."""
        if self.saturated:
            return float("inf")
        return max(float(self.eigenpairs.values[self.active]), _TINY)

    @property
    def offline_functions(self) -> np.ndarray:
        """psi_k^off for k < l_i, on the patch nodes."""
        return self.snapshots @ self.eigenpairs.vectors[:, :self.active]


def build_neighborhood_space(
    grids: StructuredGrids,
    field: CoefficientField,
    snapshots: SnapshotFamily,
    i: int,
    initial_count: int = 1,
) -> NeighborhoodSpace:
    """Project the local A and S onto the snapshots and solve the spectral problem."""
    if not field.has_kappa_tilde:
        raise StateError("kappa_tilde not computed; build the partition of unity first")

    patch = grids.patch(i)
    A = local_stiffness(grids, field, patch.cells, patch.nodes)
    S = local_mass(grids, field, patch.cells, patch.nodes)

    if snapshots == SnapshotFamily.HARMONIC:
        R = build_snapshots_harmonic(grids, field, i, stiffness=A)
    else:
        R = build_snapshots_nodal(grids, i)

    A_off = R.T @ A @ R
    S_off = R.T @ S @ R
    if R.shape[1]:
        eigenpairs = generalized_eig(A_off, S_off)
    else:
        eigenpairs = EigenPairs(values=np.zeros(0), vectors=np.zeros((0, 0)))

    return NeighborhoodSpace(
        index=i,
        snapshots=R,
        A_off=A_off,
        S_off=S_off,
        eigenpairs=eigenpairs,
        active=min(initial_count, R.shape[1]),
        stiffness=A,
    )


def build_neighborhood_spaces(
    grids: StructuredGrids,
    field: CoefficientField,
    snapshots: SnapshotFamily,
    initial_count: int,
    workers: Optional[int] = None,
) -> List[NeighborhoodSpace]:
    """Every neighborhood space, in coarse-node order."""
    spaces = parallel_map(
        lambda i: build_neighborhood_space(grids, field, snapshots, i, initial_count),
        range(grids.n_coarse_nodes),
        workers,
    )
    logger.info(
        "neighborhood_spaces_built",
        snapshots=snapshots.value,
        count=len(spaces),
        snapshot_dim=int(sum(s.n_snapshots for s in spaces)),
        initial_count=initial_count,
    )
    return spaces


def enrich(space: NeighborhoodSpace, s: int) -> NeighborhoodSpace:
    """Activate s more eigenfunctions, clamped at W_i."""
    return replace(space, active=min(space.active + s, space.n_snapshots))


def choose_increment(space: NeighborhoodSpace, increment: int = 1, gap_ratio: float = 1.0) -> int:
    """
    Number of eigenfunctions to add.

    With gap_ratio > 1, the smallest s with lambda_{l+s+1} / lambda_{l+1} >= gap_ratio
    (or everything left when no such gap exists); otherwise `increment`.
    """
    remaining = space.n_snapshots - space.active
    if gap_ratio <= 1.0 or remaining <= 1:
        return increment
    values = space.eigenpairs.values
    base = max(float(values[space.active]), _TINY)
    for s in range(1, remaining):
        if values[space.active + s] / base >= gap_ratio:
            return max(s, increment)
    return remaining
