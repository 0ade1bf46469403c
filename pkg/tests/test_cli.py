import csv
import math
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from qotto import cli
from qotto.config import ConfigError, build_config, load_config
from qotto.models import preset
from qotto.scenarios import COLUMNS, compute_point, header

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


DETUNING = """
scenario = "battery-detuning-sweep"
preset = "desk"
output = "det.csv"

[[sweep]]
axis = "T"
values = [0.0, 0.01]

[[sweep]]
axis = "detuning"
linspace = [-0.01, 0.01, 3]
"""


def test_validate_ok(tmp_path, capsys):
    assert cli.main(["validate", str(_write(tmp_path, DETUNING))]) == 0
    assert "6 grid point" in capsys.readouterr().out


@pytest.mark.parametrize("cfg", sorted(p.name for p in CONFIGS.glob("*.toml")))
def test_shipped_configs_validate(cfg):
    assert cli.main(["validate", str(CONFIGS / cfg)]) == 0


@pytest.mark.parametrize("text, field", [
    (DETUNING + "\nbogus = 1\n", "bogus"),
    (DETUNING + "\n[params]\nOmega = -1e-6\n", "params.Omega"),
    (DETUNING.replace("linspace = [-0.01, 0.01, 3]", "values = []"), "sweep[1]"),
    (DETUNING.replace("linspace = [-0.01, 0.01, 3]", "values = [0.0, 0.0]"), "monotone"),
    (DETUNING.replace('axis = "T"', 'axis = "colour"'), "colour"),
    (DETUNING.replace("battery-detuning-sweep", "battery-juggling"), "scenario"),
])
def test_validation_errors(tmp_path, capsys, text, field):
    assert cli.main(["validate", str(_write(tmp_path, text))]) == cli.EXIT_VALIDATION
    assert field in capsys.readouterr().err
    assert cli.main(["run", str(_write(tmp_path, text)), "--out", str(tmp_path)]) == cli.EXIT_VALIDATION


def test_missing_file_and_bad_usage(tmp_path):
    assert cli.main(["validate", str(tmp_path / "none.toml")]) == cli.EXIT_VALIDATION
    assert cli.main(["frobnicate"]) == cli.EXIT_VALIDATION


def test_minimal_paper_config_gives_fig3_set():
    cfg = build_config({"scenario": "battery-charge", "preset": "paper"})
    assert cfg.params == preset("fig3")


def test_desk_preset_scales_hierarchy():
    cfg = build_config({"scenario": "battery-charge", "preset": "desk"})
    p = cfg.params
    assert p.p * p.rates_m[1] / p.rates_i[1] == pytest.approx(40.0)
    assert p.gamma0_m == pytest.approx(1e-2)


def test_preset_flag_overrides(tmp_path):
    cfg = load_config(_write(tmp_path, DETUNING), preset_override="paper")
    assert cfg.preset == "paper" and cfg.params.gamma0_m == 1e-4


def test_list_scenarios(capsys):
    assert cli.main(["list-scenarios"]) == 0
    out = capsys.readouterr().out
    for name in COLUMNS:
        assert name in out


def test_run_writes_csv_and_sidecar(tmp_path):
    cfg = _write(tmp_path, DETUNING)
    assert cli.main(["run", str(cfg), "--out", str(tmp_path), "--jobs", "1"]) == 0
    rows = _rows(tmp_path / "det.csv")
    assert len(rows) == 6
    assert list(rows[0])[:2] == ["T", "detuning"]
    # grid order: first axis slowest
    assert [(r["T"], r["detuning"]) for r in rows[:3]] == [("0.0", "-0.01"), ("0.0", "0.0"), ("0.0", "0.01")]
    etas = [float(r["eta"]) for r in rows[:3]]
    assert etas[1] == max(etas)
    with open(tmp_path / "det.csv.meta.toml", "rb") as fh:
        meta = tomllib.load(fh)
    assert meta["status"] == "ok" and meta["rows"] == 6
    assert meta["config"]["scenario"] == "battery-detuning-sweep"
    assert "wall_time_s" in meta and "validity_metric" in meta["scenario_info"]
    assert meta["tolerances"]["ness_distance"] == 1e-4


def test_deterministic_and_parallel_order(tmp_path):
    cfg = _write(tmp_path, DETUNING)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["run", str(cfg), "--out", str(a), "--jobs", "1"]) == 0
    assert cli.main(["run", str(cfg), "--out", str(b), "--jobs", "2"]) == 0
    assert (a / "det.csv").read_bytes() == (b / "det.csv").read_bytes()
    assert cli.main(["run", str(cfg), "--out", str(a), "--jobs", "1"]) == 0
    assert (a / "det.csv").read_bytes() == (b / "det.csv").read_bytes()


def test_bad_jobs_flag(tmp_path):
    assert cli.main(["run", str(_write(tmp_path, DETUNING)), "--jobs", "0"]) == cli.EXIT_VALIDATION


def test_undefined_cells_are_empty(tmp_path):
    text = DETUNING + "\n[params]\nOmega = 0.0\n"
    assert cli.main(["run", str(_write(tmp_path, text)), "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "det.csv")
    assert all(r["eta"] == "" for r in rows)


def test_format_cell():
    assert cli.format_cell(0.1) == "0.1"
    assert cli.format_cell(math.nan) == ""
    assert cli.format_cell(None) == ""
    assert cli.format_cell(True) == "true"
    assert float(cli.format_cell(1 / 3)) == 1 / 3


def test_numeric_failure_reports_point(tmp_path, monkeypatch, capsys):
    import qotto.scenarios as sc

    real = sc.compute_point

    def flaky(cfg, point):
        if point[1] > 0:
            raise FloatingPointError("boom")
        return real(cfg, point)

    monkeypatch.setattr(cli, "compute_point", flaky)
    cfg = _write(tmp_path, DETUNING)
    assert cli.main(["run", str(cfg), "--out", str(tmp_path), "--jobs", "1"]) == cli.EXIT_NUMERIC
    err = capsys.readouterr().err
    assert "0.01" in err and "boom" in err
    # rows before the failing point are flushed
    assert len(_rows(tmp_path / "det.csv")) == 2
    with open(tmp_path / "det.csv.meta.toml", "rb") as fh:
        assert tomllib.load(fh)["status"] == "failed"


def test_schema_matches_columns():
    from importlib.resources import files

    schema = tomllib.loads(files("qotto").joinpath("data/csv_schema.toml").read_text())
    assert schema["scenarios"] == COLUMNS
    for cols in COLUMNS.values():
        for c in cols:
            assert c in schema["columns"], c


def test_short_cycle_row_at_resonance():
    cfg = build_config({"scenario": "engine-short-cycle-sweep", "preset": "paper",
                        "params": {"T": 0.0}, "sweep": [{"axis": "detuning", "values": [0.0]}]})
    row = compute_point(cfg, (0.0,))
    assert row["eta_sc"] == pytest.approx(0.4853, abs=1e-4)
    assert set(header(cfg)) >= set(row) - {"detuning"}


@pytest.mark.skipif(shutil.which("qotto") is None, reason="console script not installed")
def test_console_script(tmp_path):
    out = subprocess.run(["qotto", "validate", str(_write(tmp_path, DETUNING))], capture_output=True, text=True)
    assert out.returncode == 0
    out = subprocess.run([sys.executable, "-m", "qotto", "list-scenarios"], capture_output=True, text=True)
    assert out.returncode == 0 and "engine-threshold" in out.stdout
