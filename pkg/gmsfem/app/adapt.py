"""
Adaptive enrichment driver.

Each iteration: coarse solve, indicator, termination check, theta-marking,
enrichment of the marked neighborhoods. Records are written for every
iteration, starting with the initial space.
"""

import time
from dataclasses import dataclass, replace
from typing import Iterable, List, Optional, Tuple

import numpy as np
import structlog

from app.coarse import (
    FineProblem,
    Solutions,
    build_fine_problem,
    build_offline_space,
    energy_norm,
    relative_errors,
    snapshot_solution,
    solve_coarse,
)
from app.config import get_settings
from app.field import CoefficientField, compute_kappa_tilde
from app.grid import StructuredGrids
from app.indicator import IndicatorReport, compute_indicator, local_energy_errors
from app.localspaces import (
    NeighborhoodSpace,
    PartitionOfUnity,
    build_neighborhood_spaces,
    build_pou,
    choose_increment,
    enrich,
)
from app.schemas import (
    AdaptConfig,
    ConvergenceHistory,
    IterationRecord,
    SnapshotFamily,
    TerminationKind,
)

logger = structlog.get_logger()


@dataclass(frozen=True)
class ProblemSetup:
    """Everything that does not change during enrichment."""
    grids: StructuredGrids
    field: CoefficientField  # with kappa_tilde
    pou: PartitionOfUnity
    problem: FineProblem
    snapshots: SnapshotFamily
    spaces: List[NeighborhoodSpace]  # at the initial counts
    u_snap: Optional[np.ndarray] = None
    snapshot_dim: int = 0

    @property
    def snapshot_error(self) -> float:
        """||u - u_snap||_V, nan when u_snap was not computed."""
        if self.u_snap is None:
            return float("nan")
        return energy_norm(self.problem.stiffness_raw, self.problem.u - self.u_snap)

    @property
    def solution_norm(self) -> float:
        return energy_norm(self.problem.stiffness_raw, self.problem.u)


def exact_threshold(setup: ProblemSetup, factor: float, floor: Optional[float] = None) -> float:
    """
    Energy error at which the exact rules stop: factor * ||u - u_snap||_V,
    but never below floor * ||u||_V (`exact_floor` from settings by default).

    The floor matters when the snapshot space reproduces u to round-off.
    """
    if floor is None:
        floor = get_settings().exact_floor
    return max(factor * setup.snapshot_error, floor * setup.solution_norm)


def prepare(
    config: AdaptConfig,
    grids: StructuredGrids,
    field: CoefficientField,
    forcing: float = 1.0,
    lifting: Tuple[float, float, float] = (0.0, 0.0, 0.0),
    workers: Optional[int] = None,
) -> ProblemSetup:
    """Partition of unity, kappa_tilde, fine solve, neighborhood spaces and u_snap."""
    pou = build_pou(grids, field)
    field = compute_kappa_tilde(field, grids, pou)
    problem = build_fine_problem(grids, field, forcing, lifting)
    spaces = build_neighborhood_spaces(grids, field, config.snapshots, config.initial_count, workers)

    u_snap, snapshot_dim = None, int(sum(s.n_snapshots for s in spaces))
    if config.needs_snapshot_solution:
        if config.snapshots == SnapshotFamily.NODAL:
            # chi_i * unit vectors span every free fine node
            u_snap = problem.u.copy()
        else:
            u_snap, snapshot_dim = snapshot_solution(grids, pou, spaces, problem)

    setup = ProblemSetup(
        grids=grids,
        field=field,
        pou=pou,
        problem=problem,
        snapshots=config.snapshots,
        spaces=spaces,
        u_snap=u_snap,
        snapshot_dim=snapshot_dim,
    )
    if u_snap is not None:
        floor = get_settings().exact_floor * setup.solution_norm
        if setup.snapshot_error < floor:
            logger.info("snapshot_error_below_floor", snapshot_error=setup.snapshot_error, floor=floor)
    return setup


def mark(report: IndicatorReport, theta: float) -> List[int]:
    """
    Smallest set of unsaturated neighborhoods, by descending eta^2 (ties by
    index), whose sum reaches theta times the unsaturated total.
    """
    candidates = np.flatnonzero(~report.saturated)
    if candidates.size == 0:
        return []
    order = sorted(candidates.tolist(), key=lambda i: (-report.values[i], i))
    cumulative = np.cumsum(report.values[order])
    total = cumulative[-1]
    if not total > 0.0:
        return []
    k = int(np.searchsorted(cumulative, theta * total, side="left"))
    return order[:min(k, len(order) - 1) + 1]


def _with_counts(spaces: List[NeighborhoodSpace], count: int) -> List[NeighborhoodSpace]:
    return [replace(s, active=min(count, s.n_snapshots)) for s in spaces]


def _iterate(
    config: AdaptConfig,
    setup: ProblemSetup,
    spaces: List[NeighborhoodSpace],
    iteration: int,
    previous_energy: Optional[float],
):
    """One solve-and-indicate pass; returns the record and the indicator report."""
    start = time.perf_counter()
    grids, problem = setup.grids, setup.problem

    offline = build_offline_space(grids, setup.pou, spaces)
    solutions = solve_coarse(offline, problem.stiffness, problem.load, problem.lifting)
    solutions = replace(solutions, u=problem.u, u_snap=setup.u_snap)
    errors = relative_errors(solutions, problem.stiffness_raw, problem.mass)

    report = compute_indicator(
        config.indicator,
        grids,
        setup.field,
        setup.pou,
        offline,
        problem.stiffness,
        problem.load,
        solutions.U0,
        spaces,
        u=problem.u,
        u_off=solutions.u_off,
        q_formula=config.q_formula,
    )

    energy = energy_norm(problem.stiffness_raw, problem.u - solutions.u_off)
    sum_eta2 = report.total
    record = IterationRecord(
        iteration=iteration,
        dim=offline.dim,
        l2_vs_u=errors.l2_vs_u,
        h1_vs_u=errors.h1_vs_u,
        l2_vs_usnap=errors.l2_vs_usnap,
        h1_vs_usnap=errors.h1_vs_usnap,
        energy_error=energy,
        sum_eta2=sum_eta2,
        marked=0,
        saturated=int(report.saturated.sum()),
        effectivity=energy**2 / sum_eta2 if sum_eta2 > 0.0 else float("nan"),
        energy_ratio=(energy / previous_energy) ** 2 if previous_energy else None,
        seconds=time.perf_counter() - start if config.timing else 0.0,
        basis_counts=offline.counts.tolist(),
        local_energy=local_energy_errors(grids, problem.u, solutions.u_off, spaces).tolist(),
    )
    return record, report


def _termination(config: AdaptConfig, setup: ProblemSetup, record: IterationRecord, initial_sum: float) -> Optional[str]:
    rule = config.terminate
    if rule.kind == TerminationKind.EXACT:
        if record.energy_error <= exact_threshold(setup, 1.0 + rule.value):
            return "exact"
    elif rule.kind == TerminationKind.EXACT_LITERAL:
        if record.energy_error <= exact_threshold(setup, rule.value):
            return "exact-literal"
    elif rule.kind == TerminationKind.TOL:
        if record.sum_eta2 <= rule.value:
            return "tol"
    elif rule.kind == TerminationKind.TOL_REL:
        if record.sum_eta2 <= rule.value * initial_sum:
            return "tol-rel"
    elif rule.kind == TerminationKind.ENERGY:
        if record.h1_vs_u <= rule.value:
            return "energy"
    elif rule.kind == TerminationKind.MAX_DIM:
        if record.dim >= rule.value:
            return "max-dim"
    return None


def _history(config: AdaptConfig, setup: ProblemSetup) -> ConvergenceHistory:
    problem = setup.problem
    snapshot_l2 = snapshot_h1 = float("nan")
    if setup.u_snap is not None:
        reference = Solutions(u_off=setup.u_snap, U0=np.zeros(0), u=problem.u)
        errors = relative_errors(reference, problem.stiffness_raw, problem.mass)
        snapshot_l2, snapshot_h1 = errors.l2_vs_u, errors.h1_vs_u
    return ConvergenceHistory(
        indicator=config.indicator,
        snapshots=config.snapshots,
        theta=config.theta,
        snapshot_dim=setup.snapshot_dim,
        snapshot_l2_error=snapshot_l2,
        snapshot_h1_error=snapshot_h1,
    )


def run_adaptive(
    config: AdaptConfig,
    grids: StructuredGrids,
    field: CoefficientField,
    forcing: float = 1.0,
    lifting: Tuple[float, float, float] = (0.0, 0.0, 0.0),
    setup: Optional[ProblemSetup] = None,
) -> ConvergenceHistory:
    """Solve, indicate, mark, enrich until the termination rule holds."""
    if setup is None:
        setup = prepare(config, grids, field, forcing, lifting)
    elif setup.snapshots != config.snapshots:
        setup = prepare(config, setup.grids, setup.field, forcing, lifting)

    spaces = _with_counts(setup.spaces, config.initial_count)
    history = _history(config, setup)
    initial_sum = 0.0
    previous_energy = None

    for m in range(config.max_iter + 1):
        record, report = _iterate(config, setup, spaces, m, previous_energy)
        if m == 0:
            initial_sum = record.sum_eta2

        reason = _termination(config, setup, record, initial_sum)
        marked: List[int] = []
        if reason is None and m < config.max_iter:
            if config.mark_all:
                marked = np.flatnonzero(~report.saturated).tolist()
            else:
                marked = mark(report, config.theta)
            if not marked:
                reason = "saturated" if report.saturated.all() else "indicator-zero"

        record = record.model_copy(update={"marked": len(marked)})
        history.records.append(record)
        logger.info(
            "adaptive_iteration",
            iteration=m,
            dim=record.dim,
            h1_vs_u=record.h1_vs_u,
            sum_eta2=record.sum_eta2,
            marked=len(marked),
        )

        if reason is not None:
            history.converged = True
            history.stop_reason = reason
            break
        if m == config.max_iter:
            history.converged = config.terminate.kind == TerminationKind.MAX_ITER
            history.stop_reason = "max-iter"
            break

        for i in marked:
            s = choose_increment(spaces[i], config.increment, config.gap_ratio)
            spaces[i] = enrich(spaces[i], s)
        previous_energy = record.energy_error

    logger.info(
        "adaptive_finished",
        indicator=config.indicator.value,
        theta=config.theta,
        iterations=history.iterations,
        dim=history.final.dim,
        converged=history.converged,
        stop_reason=history.stop_reason,
    )
    return history


def run_uniform(
    config: AdaptConfig,
    grids: StructuredGrids,
    field: CoefficientField,
    per_node_count: int,
    forcing: float = 1.0,
    lifting: Tuple[float, float, float] = (0.0, 0.0, 0.0),
    setup: Optional[ProblemSetup] = None,
) -> ConvergenceHistory:
    """Single solve with the same count in every neighborhood (clamped at W_i)."""
    if setup is None:
        setup = prepare(config, grids, field, forcing, lifting)

    spaces = _with_counts(setup.spaces, per_node_count)
    record, _ = _iterate(config, setup, spaces, 0, None)
    history = _history(config, setup)
    history.records.append(record)
    history.converged = True
    history.stop_reason = "uniform"
    logger.info("uniform_run", per_node=per_node_count, dim=record.dim, h1_vs_u=record.h1_vs_u)
    return history


def uniform_sweep(
    config: AdaptConfig,
    setup: ProblemSetup,
    target_h1: float,
    counts: Optional[Iterable[int]] = None,
) -> ConvergenceHistory:
    """
    Raise the uniform per-node count until the relative energy error is at or
    below `target_h1` percent (or every neighborhood is saturated).
    """
    if counts is None:
        counts = range(config.initial_count, max(s.n_snapshots for s in setup.spaces) + 1)

    history = _history(config, setup)
    for n, count in enumerate(counts):
        spaces = _with_counts(setup.spaces, count)
        record, report = _iterate(config, setup, spaces, n, None)
        history.records.append(record)
        if record.h1_vs_u <= target_h1:
            history.converged = True
            history.stop_reason = "energy"
            break
        if report.saturated.all():
            history.stop_reason = "saturated"
            break
    logger.info("uniform_sweep", target=target_h1, dim=history.final.dim, converged=history.converged)
    return history
