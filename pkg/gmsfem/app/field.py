"""
Permeability field ingestion and synthesis, and the spectral weight kappa_tilde.

kappa is piecewise constant on fine cells, stored flat in fine-cell order.
Text files are whitespace-separated matrices with one row per fine-cell row,
top row = top of the domain.
"""

from dataclasses import dataclass, replace
from pathlib import Path
from typing import TYPE_CHECKING, Optional

import numpy as np
import structlog

from app.config import get_settings
from app.errors import FieldError, StateError
from app.grid import StructuredGrids
from app.schemas import FieldKind, FieldSpec

if TYPE_CHECKING:
    from app.localspaces import PartitionOfUnity

logger = structlog.get_logger()


@dataclass(frozen=True)
class CoefficientField:
    """kappa per fine cell, plus kappa_tilde once the partition of unity exists."""
    kappa: np.ndarray
    kappa_tilde: Optional[np.ndarray] = None
    kappa_tilde_min: Optional[np.ndarray] = None  # per coarse node

    @property
    def has_kappa_tilde(self) -> bool:
        return self.kappa_tilde is not None

    def scaled(self, alpha: float) -> "CoefficientField":
        """kappa multiplied by alpha; derived weights are dropped."""
        return CoefficientField(kappa=alpha * self.kappa)


def channel_mask(grids: StructuredGrids, spec: FieldSpec) -> np.ndarray:
    """Boolean (ny_fine, nx_fine) mask of high-permeability cells."""
    ny, nx = grids.ny_fine, grids.nx_fine
    width = spec.channel_width
    rng = np.random.default_rng(spec.seed)
    mask = np.zeros((ny, nx), dtype=bool)

    if spec.channel_rows is not None:
        rows = list(spec.channel_rows)
    else:
        count = min(spec.n_horizontal, max(ny - width + 1, 0))
        rows = sorted(rng.choice(ny - width + 1, size=count, replace=False).tolist()) if count else []
    if spec.channel_cols is not None:
        cols = list(spec.channel_cols)
    else:
        count = min(spec.n_vertical, max(nx - width + 1, 0))
        cols = sorted(rng.choice(nx - width + 1, size=count, replace=False).tolist()) if count else []

    for r in rows:
        mask[r:r + width, :] = True
    for c in cols:
        mask[:, c:c + width] = True

    size = spec.inclusion_size
    for _ in range(spec.n_inclusions):
        y = int(rng.integers(0, max(ny - size, 0) + 1))
        x = int(rng.integers(0, max(nx - size, 0) + 1))
        mask[y:y + size, x:x + size] = True

    return mask


def _read_matrix(path: str, grids: StructuredGrids) -> np.ndarray:
    file_path = Path(path)
    if not file_path.exists():
        logger.error("field_file_not_found", path=str(file_path))
        raise FieldError("field file not found", str(file_path))
    try:
        values = np.loadtxt(file_path, dtype=float, ndmin=2)
    except (OSError, ValueError) as e:
        logger.error("field_file_unreadable", path=str(file_path), error=str(e))
        raise FieldError(f"field file unreadable ({e})", str(file_path)) from e

    expected = (grids.ny_fine, grids.nx_fine)
    if values.shape != expected:
        raise FieldError(f"field has shape {values.shape}, expected {expected}", str(file_path))
    if not np.all(np.isfinite(values)) or np.any(values <= 0.0):
        raise FieldError("field entries must be finite and positive", str(file_path))

    # file row 0 is the top of the domain
    return np.flipud(values).ravel()


def load_field(spec: FieldSpec, grids: StructuredGrids) -> CoefficientField:
    """Build kappa on the fine cells (kappa_tilde not yet available)."""
    if spec.kind == FieldKind.UNIFORM:
        kappa = np.ones(grids.n_fine_cells)
    elif spec.kind == FieldKind.CHANNELS:
        mask = channel_mask(grids, spec)
        kappa = np.where(mask, spec.contrast, 1.0).ravel()
    else:
        kappa = _read_matrix(spec.path, grids)

    logger.info(
        "field_loaded",
        kind=spec.kind.value,
        contrast=float(kappa.max() / kappa.min()),
        high_cells=int(np.count_nonzero(kappa > kappa.min())),
    )
    return CoefficientField(kappa=kappa)


def save_field(field: CoefficientField, grids: StructuredGrids, path: str) -> None:
    """Write kappa in the text matrix format read by `load_field`."""
    values = np.flipud(field.kappa.reshape(grids.ny_fine, grids.nx_fine))
    np.savetxt(path, values, fmt="%.17g")


def cell_gradients(values: np.ndarray, rows: int, cols: int, hx: float, hy: float):
    """Gradient of the bilinear interpolant at each cell center of a node block."""
    v = values.reshape(rows, cols)
    gx = ((v[:-1, 1:] - v[:-1, :-1]) + (v[1:, 1:] - v[1:, :-1])) / (2.0 * hx)
    gy = ((v[1:, :-1] - v[:-1, :-1]) + (v[1:, 1:] - v[:-1, 1:])) / (2.0 * hy)
    return gx.ravel(), gy.ravel()


def compute_kappa_tilde(
    field: CoefficientField,
    grids: StructuredGrids,
    pou: Optional["PartitionOfUnity"],
) -> CoefficientField:
    """kappa_tilde = kappa * sum_i H^2 |grad chi_i|^2 at cell centers, and its per-neighborhood minima."""
    if pou is None:
        raise StateError("partition of unity must be built before kappa_tilde")

    energy = np.zeros(grids.n_fine_cells)
    for patch, chi in zip(grids.patches, pou.values):
        rows, cols = patch.shape
        gx, gy = cell_gradients(chi, rows, cols, grids.hx, grids.hy)
        energy[patch.cells] += gx**2 + gy**2

    kappa_tilde = field.kappa * grids.H**2 * energy

    floor = get_settings().kappa_tilde_floor * kappa_tilde.max()
    low = kappa_tilde < floor
    if np.any(low):
        logger.warning("kappa_tilde_floored", cells=int(low.sum()), floor=float(floor))
        kappa_tilde = np.maximum(kappa_tilde, floor)

    minima = np.array([kappa_tilde[p.cells].min() for p in grids.patches])
    return replace(field, kappa_tilde=kappa_tilde, kappa_tilde_min=minima)
