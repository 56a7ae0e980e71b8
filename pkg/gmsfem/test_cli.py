"""Tests for run configuration files, presets and the command-line front end."""

import csv

import pytest

from app.errors import ConfigError
from app.main import build_parser, config_from_args, main
from app.run_config import (
    RunConfigManager,
    dump_config,
    get_config_manager,
    load_run_config,
    parse_config,
    read_key_values,
    write_config,
)
from app.schemas import IndicatorKind, QFormula, SnapshotFamily, TerminationKind

SMALL = ["--coarse", "3x3", "--sub", "3x3", "--contrast", "100", "--max-iter", "30", "--no-timing"]


def _read_csv(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


def test_defaults():
    config = parse_config()
    assert config.coarse == (10, 10)
    assert config.sub == (5, 5)
    assert config.theta == 0.7
    assert config.indicator == IndicatorKind.H1W
    assert config.terminate.kind == TerminationKind.EXACT
    assert config.terminate.value == 0.05
    assert config.adapt_config().initial_count == 4


def test_nodal_default_initial_count():
    config = parse_config(overrides={"snapshots": "nodal"})
    assert config.snapshots == SnapshotFamily.NODAL
    assert config.adapt_config().initial_count == 2


def test_file_with_comments(tmp_path):
    path = tmp_path / "run.conf"
    path.write_text("# header\ncoarse = 4x6   # trailing\n\ntheta = 0.4\nterminate = tol:1e-6\n")
    assert read_key_values(str(path)) == {"coarse": "4x6", "theta": "0.4", "terminate": "tol:1e-6"}

    config = parse_config(str(path))
    assert config.coarse == (4, 6)
    assert config.theta == 0.4
    assert config.terminate.kind == TerminationKind.TOL


def test_overrides_beat_file(tmp_path):
    path = tmp_path / "run.conf"
    path.write_text("theta = 0.4\nindicator = l2\n")
    config = parse_config(str(path), {"theta": 0.2, "indicator": None})
    assert config.theta == 0.2
    assert config.indicator == IndicatorKind.L2


def test_dump_round_trip(tmp_path):
    config = parse_config(
        overrides={"coarse": "6x4", "terminate": "max-dim:300", "mark_all": True, "contrast": 1e6, "timing": False}
    )
    path = tmp_path / "dump.conf"
    write_config(config, str(path))
    assert parse_config(str(path)) == config
    assert "coarse = 6x4" in dump_config(config)


def test_invalid_theta_names_key():
    with pytest.raises(ConfigError) as excinfo:
        parse_config(overrides={"theta": 1.5})
    assert excinfo.value.key == "theta"


def test_unknown_key(tmp_path):
    path = tmp_path / "run.conf"
    path.write_text("thetta = 0.5\n")
    with pytest.raises(ConfigError) as excinfo:
        parse_config(str(path))
    assert excinfo.value.key == "thetta"
    assert "unknown key" in str(excinfo.value)


def test_bad_line(tmp_path):
    path = tmp_path / "run.conf"
    path.write_text("theta 0.5\n")
    with pytest.raises(ConfigError) as excinfo:
        parse_config(str(path))
    assert excinfo.value.key == "line 1"


def test_bad_termination_rule():
    with pytest.raises(ConfigError) as excinfo:
        parse_config(overrides={"terminate": "exact:1.5"})
    assert excinfo.value.key == "terminate"
    with pytest.raises(ConfigError):
        parse_config(overrides={"terminate": "sometimes"})


def test_missing_file():
    with pytest.raises(ConfigError):
        parse_config("/nonexistent/run.conf")


def test_bad_pair():
    with pytest.raises(ConfigError) as excinfo:
        parse_config(overrides={"coarse": "ten"})
    assert excinfo.value.key == "coarse"
    assert parse_config(overrides={"sub": "7"}).sub == (7, 7)


def test_preset_manager_caches():
    manager = RunConfigManager()
    presets = manager.list_presets()
    assert "desk_cross" in presets

    first = manager.load_config("desk_cross")
    assert first.coarse == (10, 10)
    assert manager.load_config("desk_cross") is first

    with pytest.raises(ConfigError) as excinfo:
        manager.load_config("missing_preset")
    assert "desk_cross" in str(excinfo.value)


def test_every_preset_is_valid():
    manager = RunConfigManager()
    for name in manager.list_presets():
        manager.load_config(name)


def test_load_run_config_from_preset():
    preset = get_config_manager().load_config("desk_cross")
    config = load_run_config("desk_cross", {"theta": 0.3, "out": None})
    assert config.theta == 0.3
    assert config.out == preset.out
    assert config.terminate == preset.terminate
    # the preset itself is cached and left untouched
    assert get_config_manager().load_config("desk_cross") is preset
    assert preset.theta == 0.7

    with pytest.raises(ConfigError):
        load_run_config("no_such_thing")


def test_load_run_config_from_path(tmp_path):
    path = tmp_path / "run.conf"
    path.write_text("coarse = 4x6\ntheta = 0.4\n")
    config = load_run_config(str(path), {"theta": 0.5})
    assert config.coarse == (4, 6)
    assert config.theta == 0.5
    assert load_run_config().coarse == (10, 10)


def test_q_formula_flag():
    args = build_parser().parse_args(["run", "--q-formula", "paper"])
    assert config_from_args(args).q_formula == QFormula.LOAD_FREE
    args = build_parser().parse_args(["run", "--q-formula", "consistent"])
    assert config_from_args(args).q_formula == QFormula.CONSISTENT


def test_flags_map_to_keys():
    args = build_parser().parse_args(
        ["compare", "--config", "desk_cross", "--theta", "0.3", "--against", "exact", "--mark-all", "--no-timing"]
    )
    config = config_from_args(args)
    assert config.theta == 0.3
    assert config.compare_with == IndicatorKind.EXACT
    assert config.mark_all is True
    assert config.timing is False
    # preset values survive where no flag is given
    assert config.out == "results/desk_cross"


def test_run_writes_outputs(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", *SMALL, "--out", str(out)]) == 0

    rows = _read_csv(out / "history.csv")
    assert rows[0] == ["dim", "L2_vs_u", "H1_vs_u", "L2_vs_usnap", "H1_vs_usnap", "sum_eta2", "marked", "seconds"]
    assert len(rows) >= 2
    assert all(row[-1] == "0" for row in rows[1:])

    counts = _read_csv(out / "basis_counts.csv")
    assert len(counts) == 4 and all(len(row) == 4 for row in counts)
    assert sum(int(v) for row in counts for v in row) == int(rows[-1][0])

    energy_rows = _read_csv(out / "energy_error_grid.csv")
    assert energy_rows[0] == ["iteration", "row", "c0", "c1", "c2", "c3"]

    summary = (out / "summary.conf").read_text()
    assert "stop_reason" in summary
    assert parse_config(str(out / "run.conf")).coarse == (3, 3)
    assert "iterations" in capsys.readouterr().out


def test_history_is_reproducible(tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    assert main(["run", *SMALL, "--out", str(first)]) == 0
    assert main(["run", *SMALL, "--out", str(second)]) == 0
    assert (first / "history.csv").read_bytes() == (second / "history.csv").read_bytes()


def test_uniform_command(tmp_path):
    out = tmp_path / "uniform"
    assert main(["uniform", *SMALL, "--per-node", "3", "--out", str(out)]) == 0
    rows = _read_csv(out / "history.csv")
    assert len(rows) == 2
    assert rows[1][0] == str(3 * 16)


def test_compare_command(tmp_path):
    out = tmp_path / "compare"
    assert main(["compare", *SMALL, "--indicator", "h1w", "--against", "l2", "--out", str(out)]) == 0
    assert (out / "h1w" / "history.csv").exists()
    assert (out / "l2" / "history.csv").exists()
    header = _read_csv(out / "compare.csv")[0]
    assert header == ["iteration", "h1w_dim", "h1w_H1_vs_u", "h1w_sum_eta2", "l2_dim", "l2_H1_vs_u", "l2_sum_eta2"]


def test_compare_needs_two_indicators(tmp_path):
    code = main(["compare", *SMALL, "--indicator", "l2", "--against", "l2", "--out", str(tmp_path)])
    assert code == 2


def test_invalid_theta_exit_code(tmp_path, capsys):
    assert main(["run", *SMALL, "--theta", "1.5", "--out", str(tmp_path)]) == 2
    assert "theta" in capsys.readouterr().err


def test_bad_field_file_exit_code(tmp_path):
    assert main(["run", *SMALL, "--field", str(tmp_path / "missing.txt"), "--out", str(tmp_path)]) == 1


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q"]))
