"""
Global offline space, the coarse Galerkin solve and the error norms.

R0^T is kept as a sparse (n_fine_nodes, N_c) matrix whose columns are the
nodal vectors of chi_i * psi_k^off. Dirichlet rows are zero in every column.
An affine boundary lifting G (zero unless configured) is added back to every
prolonged solution.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.linalg.lapack import dpstrf
import structlog

from app.config import get_settings
from app.errors import RankDeficientError
from app.fem import apply_dirichlet, assemble_load, assemble_stiffness, assemble_weighted_mass, solve_spd
from app.field import CoefficientField
from app.grid import StructuredGrids
from app.localspaces import NeighborhoodSpace, PartitionOfUnity

logger = structlog.get_logger()


@dataclass(frozen=True)
class FineProblem:
    """Fine-grid matrices, the lifted load and the reference solution u."""
    stiffness_raw: sp.csr_matrix  # no boundary elimination, for norms
    stiffness: sp.csr_matrix  # Dirichlet rows/columns eliminated
    mass: sp.csr_matrix  # kappa_tilde weighted
    load: np.ndarray  # F - A G, zero on the domain boundary
    lifting: np.ndarray  # G
    u: np.ndarray


def affine_lifting(grids: StructuredGrids, coefficients: Tuple[float, float, float]) -> np.ndarray:
    """g = a + b x + c y at the boundary nodes, zero elsewhere."""
    a, b, c = coefficients
    x, y = grids.node_coordinates()
    lifting = np.zeros(grids.n_fine_nodes)
    mask = grids.boundary_mask
    lifting[mask] = a + b * x[mask] + c * y[mask]
    return lifting


def build_fine_problem(
    grids: StructuredGrids,
    field: CoefficientField,
    forcing: float = 1.0,
    lifting: Tuple[float, float, float] = (0.0, 0.0, 0.0),
) -> FineProblem:
    """Assemble the fine system and solve it for u."""
    boundary = grids.boundary_nodes
    A_raw = assemble_stiffness(grids, field)
    A = apply_dirichlet(A_raw, boundary)
    S = assemble_weighted_mass(grids, field)

    G = affine_lifting(grids, lifting)
    F = assemble_load(grids, forcing) - A_raw @ G
    F[boundary] = 0.0

    u = solve_spd(A, F, tol=get_settings().fine_tol) + G
    logger.info("fine_solve", nodes=grids.n_fine_nodes, energy=float(energy_norm(A_raw, u)))
    return FineProblem(stiffness_raw=A_raw, stiffness=A, mass=S, load=F, lifting=G, u=u)


@dataclass(frozen=True)
class OfflineSpace:
    """Columns chi_i * psi_k^off ordered by (i, k)."""
    R0T: sp.csr_matrix
    provenance: np.ndarray  # (N_c, 2) rows of (i, k)
    counts: np.ndarray  # l_i per coarse node

    @property
    def dim(self) -> int:
        return self.R0T.shape[1]


def _product_columns(
    grids: StructuredGrids,
    pou: PartitionOfUnity,
    blocks: Sequence[Tuple[int, np.ndarray]],
) -> sp.csr_matrix:
    rows, cols, data = [], [], []
    offset = 0
    for i, functions in blocks:
        if functions.shape[1] == 0:
            continue
        patch = grids.patches[i]
        values = pou.values[i][:, None] * functions
        values[grids.boundary_mask[patch.nodes]] = 0.0
        n, m = values.shape
        rows.append(np.repeat(patch.nodes, m))
        cols.append(np.tile(np.arange(offset, offset + m), n))
        data.append(values.ravel())
        offset += m

    if not data:
        return sp.csr_matrix((grids.n_fine_nodes, 0))
    matrix = sp.csr_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(grids.n_fine_nodes, offset),
    )
    matrix.eliminate_zeros()
    return matrix


def build_offline_space(
    grids: StructuredGrids,
    pou: PartitionOfUnity,
    spaces: List[NeighborhoodSpace],
) -> OfflineSpace:
    """R0^T from the active eigenfunctions of every neighborhood."""
    R0T = _product_columns(grids, pou, [(s.index, s.offline_functions) for s in spaces])
    provenance = np.array([(s.index, k) for s in spaces for k in range(s.active)], dtype=np.int64).reshape(-1, 2)
    counts = np.array([s.active for s in spaces], dtype=np.int64)
    return OfflineSpace(R0T=R0T, provenance=provenance, counts=counts)


def snapshot_product_space(
    grids: StructuredGrids,
    pou: PartitionOfUnity,
    spaces: List[NeighborhoodSpace],
) -> sp.csr_matrix:
    """Columns chi_i * psi_j^snap for every snapshot of every neighborhood."""
    return _product_columns(grids, pou, [(s.index, s.snapshots) for s in spaces])


def solve_galerkin(
    R0T: sp.csr_matrix,
    A: sp.csr_matrix,
    F: np.ndarray,
    drop_dependent: bool = True,
) -> Tuple[np.ndarray, int]:
    """
    Solve R0 A R0^T U0 = R0 F.

    The Gram matrix is scaled to unit diagonal first. When plain Cholesky fails
    or meets a pivot below `pivot_tol`, a pivoted Cholesky picks a maximal set
    of independent columns and the others get coefficient 0. Returns U0 and the
    number of dropped columns.
    """
    n = R0T.shape[1]
    U0 = np.zeros(n)
    if n == 0:
        return U0, 0

    A0 = (R0T.T @ (A @ R0T)).toarray()
    A0 = 0.5 * (A0 + A0.T)
    F0 = R0T.T @ F

    diag = np.diag(A0).copy()
    nonzero = np.flatnonzero(diag > 0.0)
    scale = 1.0 / np.sqrt(diag[nonzero])
    G = A0[np.ix_(nonzero, nonzero)] * np.outer(scale, scale)
    g = F0[nonzero] * scale

    pivot_tol = get_settings().pivot_tol
    kept = np.arange(len(nonzero))
    try:
        factor = sla.cho_factor(G, lower=True)
        if np.min(np.diag(factor[0])) ** 2 < pivot_tol:
            raise sla.LinAlgError("pivot below tolerance")
    except sla.LinAlgError:
        _, piv, rank, _ = dpstrf(G, tol=pivot_tol, lower=1)
        if not drop_dependent and rank < len(nonzero):
            raise RankDeficientError("coarse matrix is rank deficient", pivot_index=int(nonzero[piv[rank] - 1]))
        kept = np.sort(piv[:rank] - 1)
        factor = sla.cho_factor(G[np.ix_(kept, kept)], lower=True)

    U0[nonzero[kept]] = sla.cho_solve(factor, g[kept]) * scale[kept]
    dropped = n - len(kept)
    if dropped:
        logger.debug("coarse_columns_dropped", dim=n, dropped=dropped)
    return U0, dropped


@dataclass(frozen=True)
class Solutions:
    """Offline solution u_off = R0^T U0 + G, with u and u_snap when known."""
    u_off: np.ndarray
    U0: np.ndarray
    dropped: int = 0
    u: Optional[np.ndarray] = None
    u_snap: Optional[np.ndarray] = None


def solve_coarse(
    offline: OfflineSpace,
    A: sp.csr_matrix,
    F: np.ndarray,
    lifting: Optional[np.ndarray] = None,
    drop_dependent: bool = True,
) -> Solutions:
    """Coarse solve on the offline space and prolongation to the fine grid."""
    U0, dropped = solve_galerkin(offline.R0T, A, F, drop_dependent)
    u_off = offline.R0T @ U0
    if lifting is not None:
        u_off = u_off + lifting
    return Solutions(u_off=u_off, U0=U0, dropped=dropped)


def snapshot_solution(
    grids: StructuredGrids,
    pou: PartitionOfUnity,
    spaces: List[NeighborhoodSpace],
    problem: FineProblem,
) -> Tuple[np.ndarray, int]:
    """Galerkin solution in the span of every chi_i * psi_j^snap, and that span's column count."""
    R = snapshot_product_space(grids, pou, spaces)
    U, dropped = solve_galerkin(R, problem.stiffness, problem.load)
    logger.info("snapshot_solve", columns=R.shape[1], dropped=dropped)
    return R @ U + problem.lifting, R.shape[1]


def energy_norm(A, v: np.ndarray) -> float:
    """sqrt(v^T A v)."""
    return float(np.sqrt(max(float(v @ (A @ v)), 0.0)))


def weighted_l2_norm(S, v: np.ndarray) -> float:
    """sqrt(v^T S v)."""
    return float(np.sqrt(max(float(v @ (S @ v)), 0.0)))


@dataclass(frozen=True)
class RelativeErrors:
    """Relative errors of u_off in percent."""
    l2_vs_u: float
    h1_vs_u: float
    l2_vs_usnap: float
    h1_vs_usnap: float


def _percent(numerator: float, denominator: float) -> float:
    if denominator > 0.0:
        return 100.0 * numerator / denominator
    return 0.0 if numerator == 0.0 else float("inf")


def relative_errors(solutions: Solutions, A, S) -> RelativeErrors:
    """L2_kappa_tilde and energy errors of u_off against u and u_snap, as percentages."""
    nan = float("nan")
    l2_u = h1_u = l2_s = h1_s = nan
    if solutions.u is not None:
        e = solutions.u - solutions.u_off
        l2_u = _percent(weighted_l2_norm(S, e), weighted_l2_norm(S, solutions.u))
        h1_u = _percent(energy_norm(A, e), energy_norm(A, solutions.u))
    if solutions.u_snap is not None:
        e = solutions.u_snap - solutions.u_off
        l2_s = _percent(weighted_l2_norm(S, e), weighted_l2_norm(S, solutions.u_snap))
        h1_s = _percent(energy_norm(A, e), energy_norm(A, solutions.u_snap))
    return RelativeErrors(l2_vs_u=l2_u, h1_vs_u=h1_u, l2_vs_usnap=l2_s, h1_vs_usnap=h1_s)
