"""Tests for the partition of unity, snapshot spaces and local spectral problems."""

import numpy as np
import pytest

from app.errors import StateError
from app.fem import local_mass, local_stiffness
from app.field import CoefficientField, cell_gradients, compute_kappa_tilde, load_field
from app.grid import build_grids
from app.localspaces import (
    build_neighborhood_space,
    build_neighborhood_spaces,
    build_pou,
    build_snapshots_harmonic,
    build_snapshots_nodal,
    choose_increment,
    enrich,
    parallel_map,
)
from app.schemas import FieldKind, FieldSpec, SnapshotFamily


def _channel_setup(coarse=3, sub=3, contrast=1e3):
    grids = build_grids(coarse, coarse, sub, sub)
    spec = FieldSpec(kind=FieldKind.CHANNELS, contrast=contrast, channel_rows=(4,), channel_cols=(4,))
    field = load_field(spec, grids)
    pou = build_pou(grids, field)
    return grids, compute_kappa_tilde(field, grids, pou), pou


def test_pou_sums_to_one():
    grids, field, pou = _channel_setup()
    total = np.asarray(pou.as_matrix(grids).sum(axis=1)).ravel()
    assert np.allclose(total, 1.0, atol=1e-10)


def test_pou_bounds_and_support():
    grids, field, pou = _channel_setup()
    for patch in grids.patches:
        chi = pou.values[patch.index]
        assert chi.min() >= -1e-12
        assert chi.max() <= 1.0 + 1e-12
        # vanishes on the patch perimeter except where it meets the domain boundary
        outer = patch.local(patch.boundary)
        on_domain = grids.boundary_mask[patch.boundary]
        assert np.allclose(chi[outer[~on_domain]], 0.0, atol=1e-14)

        x, y = grids.coarse_node_coordinates(patch.index)
        full = pou.full(grids, patch.index)
        xs, ys = grids.node_coordinates()
        at_node = np.flatnonzero(np.isclose(xs, x) & np.isclose(ys, y))
        assert full[at_node] == pytest.approx(1.0)


def test_pou_is_bilinear_for_constant_kappa():
    grids = build_grids(2, 2, 4, 4)
    field = CoefficientField(kappa=np.full(grids.n_fine_cells, 5.0))
    pou = build_pou(grids, field)

    xs, ys = grids.node_coordinates()
    hat = np.maximum(0.0, 1.0 - np.abs(xs - 0.5) / 0.5) * np.maximum(0.0, 1.0 - np.abs(ys - 0.5) / 0.5)
    assert np.allclose(pou.full(grids, 4), hat, atol=1e-10)


def test_pou_reproduces_itself():
    grids, field, pou = _channel_setup()
    ry, rx = np.divmod(np.arange((grids.ny_sub + 1) * (grids.nx_sub + 1)), grids.nx_sub + 1)
    inner = (rx > 0) & (rx < grids.nx_sub) & (ry > 0) & (ry < grids.ny_sub)
    I, B = np.flatnonzero(inner), np.flatnonzero(~inner)

    for K in range(grids.n_coarse_cells):
        nodes = grids.coarse_cell_nodes(K)
        A = local_stiffness(grids, field, grids.coarse_cell_fine_cells(K), nodes)
        for i in grids.coarse_cell_vertices(K):
            chi = pou.full(grids, i)[nodes]
            again = np.linalg.solve(A[np.ix_(I, I)], -A[np.ix_(I, B)] @ chi[B])
            assert np.allclose(again, chi[I], atol=1e-10)


def test_pou_flat_along_high_contrast_bar():
    grids = build_grids(2, 2, 8, 8)
    kappa = np.ones(grids.n_fine_cells)
    # fine row 3, columns 2..5: strictly inside coarse cell 0
    kappa[3 * grids.nx_fine + np.arange(2, 6)] = 1e4
    field = CoefficientField(kappa=kappa)
    pou = build_pou(grids, field)

    nodes = grids.coarse_cell_nodes(0)
    in_bar = kappa[grids.coarse_cell_fine_cells(0)] == 1e4
    for i in grids.coarse_cell_vertices(0):
        chi = pou.full(grids, i)[nodes]
        gx, gy = cell_gradients(chi, grids.ny_sub + 1, grids.nx_sub + 1, grids.hx, grids.hy)
        grad = np.hypot(gx, gy)
        assert grad[in_bar].max() <= 0.1 * grad[~in_bar].max()


def test_harmonic_snapshot_counts():
    grids = build_grids(2, 2, 2, 2)
    field = CoefficientField(kappa=np.ones(grids.n_fine_cells))
    assert build_snapshots_harmonic(grids, field, 4).shape == (25, 16)
    assert build_snapshots_harmonic(grids, field, 0).shape == (9, 8)


def test_harmonic_snapshots_are_harmonic():
    grids, field, _ = _channel_setup()
    patch = grids.patch(5)
    R = build_snapshots_harmonic(grids, field, 5)
    A = local_stiffness(grids, field, patch.cells, patch.nodes)
    interior = patch.local(patch.interior)
    assert np.abs((A @ R)[interior]).max() < 1e-8 * np.abs(A).max()

    # every delta column sums to the constant, which is harmonic
    assert np.allclose(R.sum(axis=1), 1.0, atol=1e-10)


def test_nodal_snapshot_counts():
    grids = build_grids(2, 2, 2, 2)
    # the center patch spans the whole domain, so only its 9 free nodes count
    assert build_snapshots_nodal(grids, 4).shape == (25, 9)
    # corner patch: 4 of its 9 nodes avoid the domain boundary
    assert build_snapshots_nodal(grids, 0).shape == (9, 4)


def test_space_needs_kappa_tilde():
    grids = build_grids(2, 2, 2, 2)
    field = CoefficientField(kappa=np.ones(grids.n_fine_cells))
    with pytest.raises(StateError):
        build_neighborhood_space(grids, field, SnapshotFamily.HARMONIC, 4)


def test_spectral_problem_matches_dense_oracle():
    grids, field, _ = _channel_setup()
    space = build_neighborhood_space(grids, field, SnapshotFamily.HARMONIC, 5, initial_count=2)
    patch = grids.patch(5)
    A = local_stiffness(grids, field, patch.cells, patch.nodes)
    S = local_mass(grids, field, patch.cells, patch.nodes)
    R = space.snapshots

    oracle = np.linalg.eigvals(np.linalg.solve(R.T @ S @ R, R.T @ A @ R)).real
    values = space.eigenpairs.values
    assert np.allclose(np.sort(oracle), values, rtol=1e-6, atol=1e-8 * values[-1])
    # constants are in the snapshot span and have zero energy
    assert abs(values[0]) < 1e-6 * values[-1]


def test_constants_give_zero_eigenvalue_away_from_boundary():
    grids = build_grids(4, 4, 3, 3)
    field = CoefficientField(kappa=np.ones(grids.n_fine_cells))
    field = compute_kappa_tilde(field, grids, build_pou(grids, field))
    i = 2 * (grids.nx_coarse + 1) + 2
    assert not grids.boundary_mask[grids.patch(i).nodes].any()

    space = build_neighborhood_space(grids, field, SnapshotFamily.HARMONIC, i)
    assert abs(space.eigenpairs.values[0]) <= 1e-10


def test_rayleigh_quotient_of_offline_functions():
    grids, field, _ = _channel_setup()
    space = build_neighborhood_space(grids, field, SnapshotFamily.HARMONIC, 4, initial_count=3)
    A, S = space.A_off, space.S_off
    for k in range(3):
        v = space.eigenpairs.vectors[:, k]
        assert (v @ A @ v) / (v @ S @ v) == pytest.approx(space.eigenpairs.values[k], rel=1e-8, abs=1e-10)
    assert space.offline_functions.shape == (len(grids.patch(4).nodes), 3)


def test_enrich_clamps_and_saturates():
    grids = build_grids(2, 2, 2, 2)
    field = CoefficientField(kappa=np.ones(grids.n_fine_cells))
    field = compute_kappa_tilde(field, grids, build_pou(grids, field))
    space = build_neighborhood_space(grids, field, SnapshotFamily.HARMONIC, 0)
    assert space.active == 1
    assert np.isfinite(space.next_eigenvalue)

    space = enrich(space, 3)
    assert space.active == 4
    space = enrich(space, 100)
    assert space.active == space.n_snapshots == 8
    assert space.saturated
    assert space.next_eigenvalue == float("inf")


def test_initial_count_capped_by_snapshots():
    grids = build_grids(1, 1, 1, 1)
    field = CoefficientField(kappa=np.ones(1))
    field = compute_kappa_tilde(field, grids, build_pou(grids, field))
    space = build_neighborhood_space(grids, field, SnapshotFamily.NODAL, 0, initial_count=3)
    # every node of a single-cell grid is on the domain boundary
    assert space.n_snapshots == 0
    assert space.active == 0
    assert space.saturated


def test_choose_increment():
    grids, field, _ = _channel_setup()
    space = build_neighborhood_space(grids, field, SnapshotFamily.HARMONIC, 5)
    assert choose_increment(space, increment=2) == 2

    s = choose_increment(space, gap_ratio=3.0)
    values = space.eigenpairs.values
    base = values[space.active]
    assert 1 <= s <= space.n_snapshots - space.active
    if s < space.n_snapshots - space.active:
        assert values[space.active + s] / base >= 3.0
        assert all(values[space.active + t] / base < 3.0 for t in range(1, s))


def test_spaces_independent_of_worker_count():
    grids, field, _ = _channel_setup()
    serial = build_neighborhood_spaces(grids, field, SnapshotFamily.HARMONIC, 1, workers=1)
    threaded = build_neighborhood_spaces(grids, field, SnapshotFamily.HARMONIC, 1, workers=4)
    for a, b in zip(serial, threaded):
        assert np.allclose(a.eigenpairs.values, b.eigenpairs.values, rtol=1e-10, atol=1e-10 * a.eigenpairs.values[-1])


def test_parallel_map_keeps_order():
    assert parallel_map(lambda i: i * i, range(6), workers=3) == [0, 1, 4, 9, 16, 25]
    assert parallel_map(lambda i: -i, [4], workers=3) == [-4]


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q"]))
