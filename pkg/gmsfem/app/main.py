"""
Command-line front end.

    python -m app.main run      --coarse 10x10 --sub 5x5 --field channels --theta 0.7 --out results
    python -m app.main uniform  --per-node 8 --out results/uniform
    python -m app.main compare  --indicator h1w --against l2 --out results/compare

Every flag overrides the same key of the --config file (a path or a preset
name from configs/).
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

import structlog

from app.adapt import prepare, run_adaptive, run_uniform
from app.config import get_settings
from app.errors import ConfigError, GMsFEMError
from app.field import load_field
from app.grid import build_grids
from app.outputs import emit_outputs, write_comparison
from app.run_config import load_run_config
from app.schemas import ConvergenceHistory, IndicatorKind, QFormula, RunConfig, SnapshotFamily

logger = structlog.get_logger()


def configure_logging() -> None:
    """Structured logs on stderr, JSON unless GMSFEM_LOG_JSON=false."""
    settings = get_settings()
    level = logging.getLevelName(settings.log_level.upper())
    renderer = structlog.processors.JSONRenderer() if settings.log_json else structlog.dev.ConsoleRenderer()
    structlog.configure(
        processors=[
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            renderer,
        ],
        wrapper_class=structlog.make_filtering_bound_logger(level if isinstance(level, int) else logging.INFO),
        logger_factory=structlog.PrintLoggerFactory(sys.stderr),
    )


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value file or preset name")
    parser.add_argument("--coarse", help="coarse cells, NxM")
    parser.add_argument("--sub", help="fine cells per coarse cell, NxM")
    parser.add_argument("--field", help="uniform | channels | path to a text matrix")
    parser.add_argument("--contrast", type=float)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--forcing", type=float)
    parser.add_argument("--theta", type=float)
    parser.add_argument("--indicator", choices=[k.value for k in IndicatorKind])
    parser.add_argument("--snapshots", choices=[s.value for s in SnapshotFamily])
    parser.add_argument("--init-basis", dest="init_basis", type=int)
    parser.add_argument("--increment", type=int)
    parser.add_argument("--gap-ratio", dest="gap_ratio", type=float)
    parser.add_argument("--terminate", help="exact:P | exact-literal:P | tol:EPS | tol-rel:EPS | energy:PCT | max-dim:N | max-iter")
    parser.add_argument("--max-iter", dest="max_iter", type=int)
    parser.add_argument("--q-formula", dest="q_formula", choices=[q.value for q in QFormula])
    parser.add_argument("--mark-all", dest="mark_all", action="store_const", const=True)
    parser.add_argument("--no-snapshot-reference", dest="snapshot_reference", action="store_const", const=False)
    parser.add_argument("--no-timing", dest="timing", action="store_const", const=False)
    parser.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gmsfem", description="Adaptive GMsFEM for 2D high-contrast elliptic problems")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="adaptive enrichment")
    _add_run_flags(run)

    uniform = commands.add_parser("uniform", help="fixed number of basis functions per coarse node")
    _add_run_flags(uniform)
    uniform.add_argument("--per-node", dest="per_node", type=int)

    compare = commands.add_parser("compare", help="adaptive runs with two indicators on the same field")
    _add_run_flags(compare)
    compare.add_argument("--against", dest="compare_with", choices=[k.value for k in IndicatorKind])

    return parser


_NON_CONFIG = {"command", "config"}


def config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides = {k: v for k, v in vars(args).items() if k not in _NON_CONFIG}
    return load_run_config(args.config, overrides)


def _grids_and_field(config: RunConfig):
    grids = build_grids(*config.coarse, *config.sub)
    return grids, load_field(config.field_spec(), grids)


def _print_summary(label: str, history: ConvergenceHistory) -> None:
    final = history.final
    print(
        f"{label}: {history.iterations} iterations, dim {history.records[0].dim} -> {final.dim}, "
        f"H1 error {final.h1_vs_u:.4g}%, converged={history.converged} ({history.stop_reason})"
    )


def cmd_run(config: RunConfig) -> Dict[str, str]:
    grids, field = _grids_and_field(config)
    history = run_adaptive(config.adapt_config(), grids, field, config.forcing, config.lifting)
    _print_summary(config.indicator.value, history)
    return emit_outputs(history, grids, config.out, config)


def cmd_uniform(config: RunConfig) -> Dict[str, str]:
    grids, field = _grids_and_field(config)
    adapt = config.adapt_config()
    per_node = config.per_node or adapt.initial_count
    history = run_uniform(adapt, grids, field, per_node, config.forcing, config.lifting)
    _print_summary(f"uniform({per_node})", history)
    return emit_outputs(history, grids, config.out, config)


def cmd_compare(config: RunConfig) -> Dict[str, str]:
    if config.compare_with == config.indicator:
        raise ConfigError("compare_with", "must differ from indicator")
    grids, field = _grids_and_field(config)
    first = config.adapt_config()
    setup = prepare(first, grids, field, config.forcing, config.lifting)

    histories: Dict[str, ConvergenceHistory] = {}
    for kind in (config.indicator, config.compare_with):
        history = run_adaptive(config.adapt_config(indicator=kind), grids, field, setup=setup)
        histories[kind.value] = history
        emit_outputs(history, grids, str(Path(config.out) / kind.value), config)
        _print_summary(kind.value, history)

    path = write_comparison(histories, str(Path(config.out) / "compare.csv"))
    return {"compare": path}


COMMANDS = {"run": cmd_run, "uniform": cmd_uniform, "compare": cmd_compare}


def main(argv: Optional[List[str]] = None) -> int:
    configure_logging()
    args = build_parser().parse_args(argv)
    try:
        config = config_from_args(args)
        paths = COMMANDS[args.command](config)
    except ConfigError as e:
        logger.error("invalid_config", key=e.key, error=str(e))
        print(f"error: {e}", file=sys.stderr)
        return 2
    except GMsFEMError as e:
        logger.error("run_failed", command=args.command, error=str(e))
        print(f"error: {e}", file=sys.stderr)
        return 1

    for name, path in paths.items():
        print(f"  {name}: {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
