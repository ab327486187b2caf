import json

import pytest

import cli
from app.constants import EXIT_OK, EXIT_USAGE
from app.models import ScenarioConfig
from app.settings import parse_config

SHORT_SCENARIO = "[plant]\n[mpc]\n[sim]\nduration = 0.2\ncontroller = rmpc\n"


@pytest.fixture(autouse=True)
def _clear_env(monkeypatch) -> None:
    monkeypatch.delenv("DUAL_GPMPC_CONFIG", raising=False)
    monkeypatch.delenv("DUAL_GPMPC_OUTPUT_DIR", raising=False)
    monkeypatch.delenv("DUAL_GPMPC_LOG", raising=False)


def test_unknown_verb_is_usage_error(capsys):
    assert cli.main(["tune"]) == EXIT_USAGE
    assert "invalid choice" in capsys.readouterr().err


def test_version_exits_cleanly():
    assert cli.main(["--version"]) == EXIT_OK


def test_missing_config_is_usage_error(tmp_path, capsys):
    assert cli.main(["simulate", "--config", str(tmp_path / "absent.cfg")]) == EXIT_USAGE
    assert "config file not found" in capsys.readouterr().err


def test_bad_config_value_is_usage_error(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text("[plant]\nmass = -1\n[mpc]\n[sim]\n", encoding="utf-8")
    assert cli.main(["simulate", "--config", str(path)]) == EXIT_USAGE
    assert "plant.mass" in capsys.readouterr().err


def test_write_config_applies_overrides(tmp_path):
    target = tmp_path / "effective.cfg"
    assert cli.main(["simulate", "--seed", "9", "--controller", "rmpc", "--write-config", str(target)]) == EXIT_OK
    config = parse_config(target)
    assert config.sim.seed == 9
    assert config.sim.controller == "rmpc"
    assert config.mpc == ScenarioConfig().mpc


def test_gp_check_passes(capsys):
    assert cli.main(["gp-check"]) == EXIT_OK
    assert "gp-check: 4/4 checks passed" in capsys.readouterr().out


def test_report_without_runs(tmp_path):
    assert cli.main(["report", "--output-dir", str(tmp_path)]) == EXIT_USAGE


def test_simulate_then_report(tmp_path):
    config_path = tmp_path / "short.cfg"
    config_path.write_text(SHORT_SCENARIO, encoding="utf-8")
    out_dir = tmp_path / "results"

    assert cli.main(["simulate", "--config", str(config_path), "--output-dir", str(out_dir)]) == EXIT_OK
    rows = (out_dir / "run_rmpc.csv").read_text(encoding="utf-8").splitlines()
    assert len(rows) == 4
    metrics = json.loads((out_dir / "metrics.json").read_text(encoding="utf-8"))
    assert [item["controller"] for item in metrics["results"]] == ["rmpc"]

    assert cli.main(["report", "--config", str(config_path), "--output-dir", str(out_dir), "--plot"]) == EXIT_OK
    assert (out_dir / "plot_x1.svg").read_text(encoding="utf-8").startswith("<svg")
