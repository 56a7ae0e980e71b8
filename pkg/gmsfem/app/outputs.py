"""
Text artifacts of a run: convergence table, coarse-node grids and summaries.

Numbers are written with 17 significant digits and '.' as decimal separator.
Coarse-node grids are written top row first (largest y), like the field files.
"""

import csv
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import structlog

from app.errors import OutputError
from app.grid import StructuredGrids
from app.run_config import dump_config
from app.schemas import ConvergenceHistory, RunConfig

logger = structlog.get_logger()

HISTORY_COLUMNS = ["dim", "L2_vs_u", "H1_vs_u", "L2_vs_usnap", "H1_vs_usnap", "sum_eta2", "marked", "seconds"]


def fmt(value) -> str:
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return format(float(value), ".17g")


def _write_rows(path: Path, rows: Sequence[Sequence]) -> None:
    try:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerows(rows)
    except OSError as e:
        logger.error("output_write_failed", path=str(path), error=str(e))
        raise OutputError(f"cannot write ({e})", str(path)) from e


def history_rows(history: ConvergenceHistory) -> List[List[str]]:
    rows = [HISTORY_COLUMNS]
    for r in history.records:
        rows.append([
            fmt(r.dim),
            fmt(r.l2_vs_u),
            fmt(r.h1_vs_u),
            fmt(r.l2_vs_usnap),
            fmt(r.h1_vs_usnap),
            fmt(r.sum_eta2),
            fmt(r.marked),
            fmt(r.seconds),
        ])
    return rows


def coarse_grid_rows(grids: StructuredGrids, values: Sequence) -> List[List[str]]:
    """Per-coarse-node values as (ny_coarse + 1) rows of (nx_coarse + 1), top row first."""
    grid = np.flipud(grids.node_grid(values))
    return [[fmt(v) for v in row] for row in grid.tolist()]


def snapshot_iterations(history: ConvergenceHistory) -> List[int]:
    """First, middle and last iteration, without repeats."""
    last = len(history.records) - 1
    return sorted({0, last // 2, last})


def summary_lines(history: ConvergenceHistory) -> List[str]:
    final = history.final
    values = {
        "iterations": history.iterations,
        "converged": "true" if history.converged else "false",
        "stop_reason": history.stop_reason,
        "indicator": history.indicator.value,
        "snapshots": history.snapshots.value,
        "theta": history.theta,
        "initial_dim": history.records[0].dim,
        "final_dim": final.dim,
        "final_L2_vs_u": final.l2_vs_u,
        "final_H1_vs_u": final.h1_vs_u,
        "final_L2_vs_usnap": final.l2_vs_usnap,
        "final_H1_vs_usnap": final.h1_vs_usnap,
        "final_sum_eta2": final.sum_eta2,
        "snapshot_dim": history.snapshot_dim,
        "snapshot_L2_vs_u": history.snapshot_l2_error,
        "snapshot_H1_vs_u": history.snapshot_h1_error,
        "total_seconds": sum(r.seconds for r in history.records),
    }
    ratios = [r.energy_ratio for r in history.records if r.energy_ratio is not None]
    if ratios:
        values["max_energy_ratio"] = max(ratios)
    effectivities = [r.effectivity for r in history.records if np.isfinite(r.effectivity)]
    if effectivities:
        values["effectivity_min"] = min(effectivities)
        values["effectivity_max"] = max(effectivities)

    return [f"{k} = {v if isinstance(v, str) else fmt(v)}" for k, v in values.items()]


def emit_outputs(
    history: ConvergenceHistory,
    grids: StructuredGrids,
    out_dir: str,
    config: Optional[RunConfig] = None,
) -> Dict[str, str]:
    """
    Write history.csv, basis_counts.csv, energy_error_grid.csv, summary.conf
    and (with a config) run.conf into `out_dir`.

    Returns:
        artifact name -> path
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OutputError(f"cannot create output directory ({e})", str(out)) from e

    paths = {
        "history": out / "history.csv",
        "basis_counts": out / "basis_counts.csv",
        "energy_error_grid": out / "energy_error_grid.csv",
        "summary": out / "summary.conf",
    }

    _write_rows(paths["history"], history_rows(history))
    _write_rows(paths["basis_counts"], coarse_grid_rows(grids, history.final.basis_counts))

    header = ["iteration", "row"] + [f"c{j}" for j in range(grids.nx_coarse + 1)]
    rows = [header]
    for m in snapshot_iterations(history):
        for row, values in enumerate(coarse_grid_rows(grids, history.records[m].local_energy)):
            rows.append([str(m), str(row)] + values)
    _write_rows(paths["energy_error_grid"], rows)

    _write_text(paths["summary"], "\n".join(summary_lines(history)) + "\n")
    if config is not None:
        paths["config"] = out / "run.conf"
        _write_text(paths["config"], dump_config(config))

    logger.info("outputs_written", out=str(out), rows=len(history.records))
    return {name: str(path) for name, path in paths.items()}


def _write_text(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as e:
        logger.error("output_write_failed", path=str(path), error=str(e))
        raise OutputError(f"cannot write ({e})", str(path)) from e


def write_comparison(histories: Dict[str, ConvergenceHistory], path: str) -> str:
    """Side-by-side dim, H1_vs_u and sum_eta2 per iteration for several runs."""
    labels = list(histories)
    header = ["iteration"]
    for label in labels:
        header += [f"{label}_dim", f"{label}_H1_vs_u", f"{label}_sum_eta2"]

    rows = [header]
    length = max(len(h.records) for h in histories.values())
    for m in range(length):
        row = [str(m)]
        for label in labels:
            records = histories[label].records
            if m < len(records):
                row += [fmt(records[m].dim), fmt(records[m].h1_vs_u), fmt(records[m].sum_eta2)]
            else:
                row += ["", "", ""]
        rows.append(row)

    _write_rows(Path(path), rows)
    return str(path)
