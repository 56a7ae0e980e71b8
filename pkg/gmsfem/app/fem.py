"""
Q1 finite elements on the fine grid and the linear-algebra kernels.

Element matrices are closed-form for rectangles with a per-cell constant
coefficient; local node order is SW, SE, NE, NW. Matrices always keep the full
fine-node numbering; Dirichlet nodes are eliminated symmetrically (unit
diagonal, zero row and column).
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import structlog

from app.config import get_settings
from app.errors import InvalidArgumentError, SolverFailure, StateError
from app.field import CoefficientField
from app.grid import StructuredGrids

logger = structlog.get_logger()

SparseMatrix = sp.csr_matrix

_KX = np.array([[2, -2, -1, 1], [-2, 2, 1, -1], [-1, 1, 2, -2], [1, -1, -2, 2]], dtype=float) / 6.0
_KY = np.array([[2, 1, -1, -2], [1, 2, -2, -1], [-1, -2, 2, 1], [-2, -1, 1, 2]], dtype=float) / 6.0
_M = np.array([[4, 2, 1, 2], [2, 4, 2, 1], [1, 2, 4, 2], [2, 1, 2, 4]], dtype=float) / 36.0


def element_stiffness(hx: float, hy: float) -> np.ndarray:
    """Q1 stiffness of one hx-by-hy cell with unit coefficient."""
    return (hy / hx) * _KX + (hx / hy) * _KY


def element_mass(hx: float, hy: float) -> np.ndarray:
    """Q1 mass of one hx-by-hy cell with unit coefficient."""
    return hx * hy * _M


@dataclass(frozen=True)
class EigenPairs:
    """Ascending eigenvalues; eigenvector columns are S-orthonormal."""
    values: np.ndarray
    vectors: np.ndarray

    def __len__(self) -> int:
        return len(self.values)


def _cells(grids: StructuredGrids, cell_subset: Optional[Sequence[int]]) -> np.ndarray:
    if cell_subset is None:
        return np.arange(grids.n_fine_cells)
    cells = np.asarray(cell_subset, dtype=np.int64)
    if cells.size == 0:
        raise InvalidArgumentError("cell subset is empty")
    return cells


def _assemble(grids: StructuredGrids, coef: np.ndarray, cells: np.ndarray, local: np.ndarray) -> SparseMatrix:
    corners = grids.cell_corners(cells)
    rows = np.repeat(corners[:, :, None], 4, axis=2)
    cols = np.repeat(corners[:, None, :], 4, axis=1)
    data = coef[cells][:, None, None] * local[None, :, :]
    n = grids.n_fine_nodes
    matrix = sp.coo_matrix((data.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n))
    return matrix.tocsr()


def apply_dirichlet(matrix: SparseMatrix, nodes: Sequence[int]) -> SparseMatrix:
    """Zero the rows and columns of `nodes` and put 1 on their diagonal."""
    keep = np.ones(matrix.shape[0])
    keep[np.asarray(nodes, dtype=np.int64)] = 0.0
    D = sp.diags(keep)
    return (D @ matrix @ D + sp.diags(1.0 - keep)).tocsr()


def assemble_stiffness(
    grids: StructuredGrids,
    field: CoefficientField,
    cell_subset: Optional[Sequence[int]] = None,
    dirichlet_nodes: Optional[Sequence[int]] = None,
) -> SparseMatrix:
    """A_ij = sum over cells of kappa * grad phi_i . grad phi_j."""
    cells = _cells(grids, cell_subset)
    matrix = _assemble(grids, field.kappa, cells, element_stiffness(grids.hx, grids.hy))
    if dirichlet_nodes is not None:
        matrix = apply_dirichlet(matrix, dirichlet_nodes)
    return matrix


def assemble_weighted_mass(
    grids: StructuredGrids,
    field: CoefficientField,
    cell_subset: Optional[Sequence[int]] = None,
) -> SparseMatrix:
    """S_ij = sum over cells of kappa_tilde * phi_i * phi_j."""
    if field.kappa_tilde is None:
        raise StateError("kappa_tilde not computed; build the partition of unity first")
    cells = _cells(grids, cell_subset)
    return _assemble(grids, field.kappa_tilde, cells, element_mass(grids.hx, grids.hy))


def assemble_load(
    grids: StructuredGrids,
    f_const: Union[float, np.ndarray],
    cell_subset: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """F_i = integral of f * phi_i, f constant (or constant per cell)."""
    cells = _cells(grids, cell_subset)
    f = np.broadcast_to(np.asarray(f_const, dtype=float), (grids.n_fine_cells,))
    share = f[cells] * grids.hx * grids.hy / 4.0
    corners = grids.cell_corners(cells)
    load = np.zeros(grids.n_fine_nodes)
    np.add.at(load, corners.ravel(), np.repeat(share, 4))
    return load


def _pcg(matrix, rhs: np.ndarray, tol: float, max_iter: int) -> np.ndarray:
    """Jacobi-preconditioned conjugate gradients for one right-hand side."""
    diag = matrix.diagonal()
    if np.any(diag <= 0.0):
        raise SolverFailure("non-positive diagonal, matrix is not SPD", iterations=0)

    b_norm = np.linalg.norm(rhs)
    x = np.zeros_like(rhs)
    if b_norm == 0.0:
        return x

    r = rhs.copy()
    z = r / diag
    p = z.copy()
    rz = r @ z
    residual = 1.0
    for k in range(max_iter):
        Ap = matrix @ p
        pAp = p @ Ap
        if pAp <= 0.0:
            raise SolverFailure("conjugate gradient breakdown (indefinite matrix)", residual, k)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        residual = np.linalg.norm(r) / b_norm
        if residual <= tol:
            logger.debug("cg_converged", iterations=k + 1, residual=float(residual))
            return x
        z = r / diag
        rz_next = r @ z
        p = z + (rz_next / rz) * p
        rz = rz_next

    raise SolverFailure("conjugate gradient did not converge", residual, max_iter)


def _cholesky_solve(matrix, rhs: np.ndarray) -> np.ndarray:
    dense = matrix.toarray() if sp.issparse(matrix) else np.asarray(matrix, dtype=float)
    try:
        factor = sla.cho_factor(dense, lower=True)
    except sla.LinAlgError as e:
        raise SolverFailure(f"Cholesky factorization failed ({e})") from e
    return sla.cho_solve(factor, rhs)


def solve_spd(
    matrix,
    rhs: np.ndarray,
    tol: Optional[float] = None,
    max_iter: Optional[int] = None,
    method: str = "auto",
) -> np.ndarray:
    """
    Solve an SPD system.

    `method` is "cg" (Jacobi PCG), "cholesky" (dense) or "auto", which picks
    dense Cholesky up to `dense_limit` unknowns and PCG above. A 2D `rhs` is
    solved column by column.
    """
    settings = get_settings()
    tol = settings.solver_tol if tol is None else tol
    max_iter = settings.max_cg_iter if max_iter is None else max_iter
    rhs = np.asarray(rhs, dtype=float)
    n = matrix.shape[0]
    if matrix.shape != (n, n) or rhs.shape[0] != n:
        raise InvalidArgumentError(f"shape mismatch: matrix {matrix.shape}, rhs {rhs.shape}")

    if method == "auto":
        method = "cholesky" if n <= settings.dense_limit else "cg"

    if method == "cholesky":
        return _cholesky_solve(matrix, rhs)
    if method != "cg":
        raise InvalidArgumentError(f"unknown solver method {method!r}")

    operator = matrix if sp.issparse(matrix) else np.asarray(matrix, dtype=float)
    if rhs.ndim == 1:
        return _pcg(operator, rhs, tol, max_iter)
    return np.column_stack([_pcg(operator, rhs[:, k], tol, max_iter) for k in range(rhs.shape[1])])


def generalized_eig(A_off: np.ndarray, S_off: np.ndarray) -> EigenPairs:
    """
    All eigenpairs of A psi = lambda S psi, ascending.

    S = L L^T (Cholesky), then the symmetric standard problem on
    L^-1 A L^-T, then back-transform psi = L^-T v.
    """
    A = A_off.toarray() if sp.issparse(A_off) else np.asarray(A_off, dtype=float)
    S = S_off.toarray() if sp.issparse(S_off) else np.asarray(S_off, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape != S.shape:
        raise InvalidArgumentError(f"eigen problem needs equal square matrices, got {A.shape} and {S.shape}")

    tol = get_settings().symmetry_tol
    for name, M in (("A_off", A), ("S_off", S)):
        scale = max(1.0, float(np.abs(M).max(initial=0.0)))
        if np.abs(M - M.T).max(initial=0.0) > tol * scale:
            raise InvalidArgumentError(f"{name} is not symmetric")
    A = 0.5 * (A + A.T)
    S = 0.5 * (S + S.T)

    try:
        L = sla.cholesky(S, lower=True)
    except sla.LinAlgError as e:
        raise InvalidArgumentError(f"S_off is not positive definite ({e})") from e

    C = sla.solve_triangular(L, A, lower=True)
    C = sla.solve_triangular(L, C.T, lower=True)
    C = 0.5 * (C + C.T)
    values, V = sla.eigh(C)
    vectors = sla.solve_triangular(L, V, lower=True, trans="T")
    return EigenPairs(values=values, vectors=vectors)


def _assemble_local(coef: np.ndarray, corners: np.ndarray, nodes: np.ndarray, local: np.ndarray) -> np.ndarray:
    positions = np.searchsorted(nodes, corners)
    n = len(nodes)
    matrix = np.zeros((n, n))
    rows = np.repeat(positions[:, :, None], 4, axis=2)
    cols = np.repeat(positions[:, None, :], 4, axis=1)
    np.add.at(matrix, (rows.ravel(), cols.ravel()), (coef[:, None, None] * local[None, :, :]).ravel())
    return matrix


def local_stiffness(grids: StructuredGrids, field: CoefficientField, cells: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    """
    Dense stiffness over `cells` in the numbering of `nodes` (sorted, covering
    every corner of `cells`). No Dirichlet elimination.
    """
    cells = _cells(grids, cells)
    return _assemble_local(
        field.kappa[cells], grids.cell_corners(cells), nodes, element_stiffness(grids.hx, grids.hy)
    )


def local_mass(grids: StructuredGrids, field: CoefficientField, cells: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    """Dense kappa_tilde-weighted mass over `cells` in the numbering of `nodes`."""
    if field.kappa_tilde is None:
        raise StateError("kappa_tilde not computed; build the partition of unity first")
    cells = _cells(grids, cells)
    return _assemble_local(
        field.kappa_tilde[cells], grids.cell_corners(cells), nodes, element_mass(grids.hx, grids.hy)
    )
