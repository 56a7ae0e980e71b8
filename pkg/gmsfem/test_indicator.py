"""Tests for the local error indicators."""

import numpy as np
import pytest
import scipy.linalg as sla

from app.coarse import (
    OfflineSpace,
    build_fine_problem,
    build_offline_space,
    energy_norm,
    snapshot_product_space,
    solve_coarse,
    solve_galerkin,
)
from app.errors import StateError
from app.fem import solve_spd
from app.field import compute_kappa_tilde, load_field
from app.grid import build_grids
from app.indicator import (
    compute_indicator,
    indicator_exact,
    indicator_h1w,
    indicator_l2,
    local_energy_errors,
    residual,
)
from app.localspaces import build_neighborhood_spaces, build_pou, enrich
from app.schemas import FieldKind, FieldSpec, IndicatorKind, QFormula, SnapshotFamily


def _state(forcing=1.0, initial_count=2, grids=None, spec=None, alpha=1.0):
    grids = grids or build_grids(3, 3, 3, 3)
    spec = spec or FieldSpec(kind=FieldKind.CHANNELS, contrast=1e3, channel_rows=(4,), channel_cols=(4,))
    field = load_field(spec, grids).scaled(alpha)
    pou = build_pou(grids, field)
    field = compute_kappa_tilde(field, grids, pou)
    problem = build_fine_problem(grids, field, forcing)
    spaces = build_neighborhood_spaces(grids, field, SnapshotFamily.HARMONIC, initial_count, workers=1)
    offline = build_offline_space(grids, pou, spaces)
    solutions = solve_coarse(offline, problem.stiffness, problem.load)
    return grids, field, pou, problem, spaces, offline, solutions


def test_residual_zero_on_boundary():
    grids, field, pou, problem, spaces, offline, solutions = _state()
    r = residual(grids, offline, problem.stiffness, problem.load, solutions.U0)
    assert np.all(r[grids.boundary_nodes] == 0.0)
    assert np.allclose(r, problem.stiffness @ (problem.u - solutions.u_off), atol=1e-10 * np.abs(r).max())


SMALL_UNIFORM = {"grids": build_grids(2, 2, 2, 2), "spec": FieldSpec(kind=FieldKind.UNIFORM)}


@pytest.mark.parametrize("setup", [{}, SMALL_UNIFORM], ids=["channels", "small_uniform"])
def test_l2_matches_dense_oracle(setup):
    grids, field, pou, problem, spaces, offline, solutions = _state(**setup)
    report = indicator_l2(grids, field, pou, offline, problem.stiffness, problem.load, solutions.U0, spaces)
    r = residual(grids, offline, problem.stiffness, problem.load, solutions.U0)

    for space in spaces:
        patch = grids.patch(space.index)
        q = pou.values[space.index] * r[patch.nodes]
        # the largest eigenvalue of q q^T is |q|^2
        expected = np.linalg.eigvalsh(np.outer(q, q))[-1]
        expected /= field.kappa_tilde_min[space.index] * space.eigenpairs.values[space.active]
        assert report.values[space.index] == pytest.approx(expected, rel=1e-8, abs=1e-30)


@pytest.mark.parametrize("setup", [{}, SMALL_UNIFORM], ids=["channels", "small_uniform"])
def test_h1w_matches_dense_oracle(setup):
    grids, field, pou, problem, spaces, offline, solutions = _state(**setup)
    report = indicator_h1w(grids, field, offline, problem.stiffness, problem.load, solutions.U0, spaces)
    r = residual(grids, offline, problem.stiffness, problem.load, solutions.U0)

    for space in spaces:
        patch = grids.patch(space.index)
        I = patch.local(patch.interior)
        if I.size == 0:
            continue
        r_I = r[patch.interior]
        A_II = space.stiffness[np.ix_(I, I)]
        # sup over v of (r.v)^2 / (v^T A v) is the top generalized eigenvalue
        expected = sla.eigh(np.outer(r_I, r_I), A_II, eigvals_only=True)[-1]
        expected /= space.eigenpairs.values[space.active]
        assert report.values[space.index] == pytest.approx(expected, rel=1e-6, abs=1e-14 * report.total)


def test_indicators_vanish_without_forcing():
    grids, field, pou, problem, spaces, offline, solutions = _state(forcing=0.0)
    args = (grids, field, pou, offline, problem.stiffness, problem.load, solutions.U0, spaces)
    for kind in (IndicatorKind.L2, IndicatorKind.H1W, IndicatorKind.H1W_SNAP):
        report = compute_indicator(kind, *args)
        assert report.total == 0.0
    report = compute_indicator(IndicatorKind.EXACT, *args, u=problem.u, u_off=solutions.u_off)
    assert report.total == 0.0


def test_indicators_scale_with_forcing_squared():
    base = _state(forcing=1.0)
    scaled = _state(forcing=3.0)
    for kind in (IndicatorKind.L2, IndicatorKind.H1W, IndicatorKind.EXACT):
        totals = []
        for grids, field, pou, problem, spaces, offline, solutions in (base, scaled):
            report = compute_indicator(
                kind, grids, field, pou, offline, problem.stiffness, problem.load,
                solutions.U0, spaces, u=problem.u, u_off=solutions.u_off,
            )
            totals.append(report.total)
        assert totals[1] == pytest.approx(9.0 * totals[0], rel=1e-6)


ASYMMETRIC = FieldSpec(kind=FieldKind.CHANNELS, contrast=1e3, channel_rows=(3,), channel_cols=(5,))


def test_h1w_homogeneous_in_kappa_and_forcing():
    alpha = 7.0
    base = _state(spec=ASYMMETRIC)
    scaled = _state(spec=ASYMMETRIC, forcing=alpha, alpha=alpha)

    reports, local_solutions = [], []
    for grids, field, pou, problem, spaces, offline, solutions in (base, scaled):
        reports.append(indicator_h1w(grids, field, offline, problem.stiffness, problem.load, solutions.U0, spaces))
        r = residual(grids, offline, problem.stiffness, problem.load, solutions.U0)
        patch, space = grids.patch(5), spaces[5]
        I = patch.local(patch.interior)
        local_solutions.append(solve_spd(space.stiffness[np.ix_(I, I)], r[patch.interior]))

    assert np.allclose(local_solutions[1], local_solutions[0], rtol=1e-6, atol=1e-10 * np.abs(local_solutions[0]).max())
    assert np.allclose(reports[1].values, alpha * reports[0].values, rtol=1e-6, atol=1e-12 * reports[1].total)


def test_snapshot_indicator_vanishes_exactly_at_snapshot_solution():
    grids, field, pou, problem, spaces, offline, solutions = _state()
    A, F = problem.stiffness, problem.load
    R = snapshot_product_space(grids, pou, spaces)
    U_snap, _ = solve_galerkin(R, A, F)
    u_snap = R @ U_snap

    # u_off != u_snap gives a positive indicator
    before = indicator_h1w(grids, field, offline, A, F, solutions.U0, spaces, use_snapshot_space=True, pou=pou)
    norm = energy_norm(problem.stiffness_raw, problem.u)
    assert energy_norm(problem.stiffness_raw, solutions.u_off - u_snap) > 1e-8 * norm
    assert before.total > 0.0

    # u_off = u_snap gives zero, with eigenvalues still taken from the unsaturated spaces
    snapshot_space = OfflineSpace(
        R0T=R,
        provenance=np.array([(s.index, j) for s in spaces for j in range(s.n_snapshots)], dtype=np.int64),
        counts=np.array([s.n_snapshots for s in spaces], dtype=np.int64),
    )
    after = indicator_h1w(grids, field, snapshot_space, A, F, U_snap, spaces, use_snapshot_space=True, pou=pou)
    assert not after.saturated.any()
    assert after.total <= 1e-8 * before.total


def test_load_free_residual_differs():
    grids, field, pou, problem, spaces, offline, solutions = _state()
    args = (grids, field, pou, offline, problem.stiffness, problem.load, solutions.U0, spaces)
    consistent = indicator_l2(*args, q_formula=QFormula.CONSISTENT)
    load_free = indicator_l2(*args, q_formula=QFormula.LOAD_FREE)
    assert not np.allclose(consistent.values, load_free.values)
    assert np.all(load_free.values >= 0.0)


def test_snapshot_space_indicator_bounded_by_fine():
    grids, field, pou, problem, spaces, offline, solutions = _state()
    args = (grids, field, offline, problem.stiffness, problem.load, solutions.U0, spaces)
    fine = indicator_h1w(*args)
    snap = indicator_h1w(*args, use_snapshot_space=True, pou=pou)
    assert snap.kind == IndicatorKind.H1W_SNAP
    assert np.all(snap.values <= fine.values * (1.0 + 1e-8) + 1e-14 * fine.total)


def test_snapshot_space_indicator_needs_pou():
    grids, field, pou, problem, spaces, offline, solutions = _state()
    with pytest.raises(StateError):
        indicator_h1w(
            grids, field, offline, problem.stiffness, problem.load, solutions.U0, spaces, use_snapshot_space=True
        )


def test_exact_indicator_overlap_bounds():
    grids, field, pou, problem, spaces, offline, solutions = _state()
    report = indicator_exact(grids, field, problem.u, solutions.u_off, spaces)
    e = problem.u - solutions.u_off
    global_energy = e @ (problem.stiffness_raw @ e)

    # every fine cell lies in one to four neighborhoods
    assert global_energy * (1.0 - 1e-10) <= report.total <= 4.0 * global_energy * (1.0 + 1e-10)
    assert report.kind == IndicatorKind.EXACT


def test_exact_indicator_needs_solution():
    grids, field, pou, problem, spaces, offline, solutions = _state()
    with pytest.raises(StateError):
        compute_indicator(
            IndicatorKind.EXACT, grids, field, pou, offline, problem.stiffness, problem.load, solutions.U0, spaces
        )


def test_saturated_neighborhoods_report_zero():
    grids, field, pou, problem, spaces, offline, solutions = _state()
    spaces = list(spaces)
    spaces[5] = enrich(spaces[5], spaces[5].n_snapshots)
    offline = build_offline_space(grids, pou, spaces)
    solutions = solve_coarse(offline, problem.stiffness, problem.load)

    report = indicator_h1w(grids, field, offline, problem.stiffness, problem.load, solutions.U0, spaces)
    assert report.saturated[5]
    assert report.values[5] == 0.0
    assert report.eigenvalues[5] == float("inf")
    assert report.active_total == report.total


def test_local_energy_errors_include_saturated():
    grids, field, pou, problem, spaces, offline, solutions = _state()
    energies = local_energy_errors(grids, problem.u, solutions.u_off, spaces)
    assert energies.shape == (grids.n_coarse_nodes,)
    assert np.all(energies >= 0.0)
    assert energies.sum() > 0.0


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q"]))
