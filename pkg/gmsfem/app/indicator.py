"""
Per-neighborhood a-posteriori error indicators.

- l2:       ||chi_i r||^2 / (kappa_tilde_i * lambda_{l_i+1})
- h1w:      r_I^T A_II^-1 r_I / lambda_{l_i+1}, local Dirichlet problem on omega_i
- h1w-snap: the same local problem restricted to span{chi_i psi_j^snap}
- exact:    (u - u_off)^T A_omega (u - u_off)

r is the fine residual F - A R0^T U0 with the domain-boundary entries zeroed.
Saturated neighborhoods report 0 and are flagged.
"""

from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np
import scipy.linalg as sla
import structlog

from app.coarse import OfflineSpace
from app.errors import StateError
from app.fem import solve_spd
from app.field import CoefficientField
from app.grid import StructuredGrids
from app.localspaces import NeighborhoodSpace, PartitionOfUnity, parallel_map
from app.schemas import IndicatorKind, QFormula

logger = structlog.get_logger()


@dataclass(frozen=True)
class IndicatorReport:
    """eta_i^2 for every coarse node."""
    kind: IndicatorKind
    values: np.ndarray
    eigenvalues: np.ndarray  # lambda_{l_i+1}, inf where saturated
    saturated: np.ndarray

    @property
    def total(self) -> float:
        return float(self.values.sum())

    @property
    def active_total(self) -> float:
        """Sum over unsaturated neighborhoods."""
        return float(self.values[~self.saturated].sum())


def residual(
    grids: StructuredGrids,
    offline: OfflineSpace,
    A,
    F: np.ndarray,
    U0: np.ndarray,
    q_formula: QFormula = QFormula.CONSISTENT,
) -> np.ndarray:
    """F - A R0^T U0 (or -A R0^T U0 for the load-free formula), zero on the domain boundary."""
    r = -(A @ (offline.R0T @ U0))
    if q_formula == QFormula.CONSISTENT:
        r = r + F
    r[grids.boundary_mask] = 0.0
    return r


def _report(
    kind: IndicatorKind,
    spaces: List[NeighborhoodSpace],
    local: Callable[[NeighborhoodSpace], float],
    scale: Callable[[NeighborhoodSpace], float],
) -> IndicatorReport:
    saturated = np.array([s.saturated for s in spaces], dtype=bool)
    eigenvalues = np.array([s.next_eigenvalue for s in spaces])

    def evaluate(i: int) -> float:
        space = spaces[i]
        if space.saturated:
            return 0.0
        return max(local(space), 0.0) / scale(space)

    values = np.array(parallel_map(evaluate, range(len(spaces))), dtype=float)
    logger.debug("indicator_computed", kind=kind.value, total=float(values.sum()), saturated=int(saturated.sum()))
    return IndicatorReport(kind=kind, values=values, eigenvalues=eigenvalues, saturated=saturated)


def indicator_l2(
    grids: StructuredGrids,
    field: CoefficientField,
    pou: PartitionOfUnity,
    offline: OfflineSpace,
    A,
    F: np.ndarray,
    U0: np.ndarray,
    spaces: List[NeighborhoodSpace],
    q_formula: QFormula = QFormula.CONSISTENT,
) -> IndicatorReport:
    """Weighted L2 residual indicator."""
    if field.kappa_tilde_min is None:
        raise StateError("kappa_tilde not computed; build the partition of unity first")
    r = residual(grids, offline, A, F, U0, q_formula)

    def local(space: NeighborhoodSpace) -> float:
        weighted = pou.values[space.index] * r[grids.patches[space.index].nodes]
        return float(weighted @ weighted)

    def scale(space: NeighborhoodSpace) -> float:
        return float(field.kappa_tilde_min[space.index]) * space.next_eigenvalue

    return _report(IndicatorKind.L2, spaces, local, scale)


def _interior(grids: StructuredGrids, space: NeighborhoodSpace) -> np.ndarray:
    patch = grids.patches[space.index]
    return patch.local(patch.interior)


def indicator_h1w(
    grids: StructuredGrids,
    field: CoefficientField,
    offline: OfflineSpace,
    A,
    F: np.ndarray,
    U0: np.ndarray,
    spaces: List[NeighborhoodSpace],
    use_snapshot_space: bool = False,
    pou: Optional[PartitionOfUnity] = None,
) -> IndicatorReport:
    """Dual norm of the local residual in H^1_0(omega_i), scaled by 1/lambda_{l_i+1}."""
    if use_snapshot_space and pou is None:
        raise StateError("snapshot-space indicator needs the partition of unity")
    r = residual(grids, offline, A, F, U0)

    def local(space: NeighborhoodSpace) -> float:
        patch = grids.patches[space.index]
        I = _interior(grids, space)
        if I.size == 0:
            return 0.0
        r_I = r[patch.interior]
        A_II = space.stiffness[np.ix_(I, I)]
        if not use_snapshot_space:
            return float(r_I @ solve_spd(A_II, r_I))
        basis = (pou.values[space.index][:, None] * space.snapshots)[I]
        gram = basis.T @ A_II @ basis
        load = basis.T @ r_I
        return float(load @ (sla.pinvh(0.5 * (gram + gram.T)) @ load))

    kind = IndicatorKind.H1W_SNAP if use_snapshot_space else IndicatorKind.H1W
    return _report(kind, spaces, local, lambda space: space.next_eigenvalue)


def local_energy_errors(
    grids: StructuredGrids,
    u: np.ndarray,
    u_off: np.ndarray,
    spaces: List[NeighborhoodSpace],
) -> np.ndarray:
    """(u - u_off)^T A_omega_i (u - u_off) for every neighborhood, saturated or not."""
    e = u - u_off

    def local(i: int) -> float:
        e_local = e[grids.patches[i].nodes]
        return max(float(e_local @ spaces[i].stiffness @ e_local), 0.0)

    return np.array(parallel_map(local, range(len(spaces))), dtype=float)


def indicator_exact(
    grids: StructuredGrids,
    field: CoefficientField,
    u: np.ndarray,
    u_off: np.ndarray,
    spaces: List[NeighborhoodSpace],
) -> IndicatorReport:
    """Local energy error, no eigenvalue scaling."""
    energies = local_energy_errors(grids, u, u_off, spaces)
    return _report(IndicatorKind.EXACT, spaces, lambda space: float(energies[space.index]), lambda space: 1.0)


def compute_indicator(
    kind: IndicatorKind,
    grids: StructuredGrids,
    field: CoefficientField,
    pou: PartitionOfUnity,
    offline: OfflineSpace,
    A,
    F: np.ndarray,
    U0: np.ndarray,
    spaces: List[NeighborhoodSpace],
    u: Optional[np.ndarray] = None,
    u_off: Optional[np.ndarray] = None,
    q_formula: QFormula = QFormula.CONSISTENT,
) -> IndicatorReport:
    """Dispatch on the indicator kind."""
    if kind == IndicatorKind.L2:
        return indicator_l2(grids, field, pou, offline, A, F, U0, spaces, q_formula)
    if kind == IndicatorKind.H1W:
        return indicator_h1w(grids, field, offline, A, F, U0, spaces)
    if kind == IndicatorKind.H1W_SNAP:
        return indicator_h1w(grids, field, offline, A, F, U0, spaces, use_snapshot_space=True, pou=pou)
    if u is None or u_off is None:
        raise StateError("exact indicator needs the fine solution")
    return indicator_exact(grids, field, u, u_off, spaces)
