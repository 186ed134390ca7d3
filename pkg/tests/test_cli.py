import json
from pathlib import Path

import pytest

from hsep.cli import main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def small_config(tmp_path, **extra):
    lines = {"ic": "step", "epsilons": "0.4", "replicas": "3", "taus": "0.05", "rs": "0", **extra}
    path = tmp_path / "small.cfg"
    path.write_text("".join(f"{k} = {v}\n" for k, v in lines.items()))
    return str(path)


def test_verify_decomposition_smoke(capsys):
    assert main(["verify", "--suite", "decomposition", "--eps", "0.2"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["passed"] and report["suites"]["decomposition"]["passed"]


def test_verify_writes_report_file(tmp_path):
    assert main(["verify", "--suite", "duality", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "suite_duality.json").read_text())["passed"]


@pytest.mark.parametrize("argv", [
    ["simulate"],
    ["compare"],
    ["she"],
    ["simulate", "--config", "nope.cfg", "--out", "x"],
    ["frobnicate"],
    ["verify", "--bogus"],
    ["verify", "--suite", "unknown"],
    ["verify", "--eps", "abc"],
])
def test_usage_errors(argv, capsys):
    assert main(argv) == 2
    assert "usage:" in capsys.readouterr().err


def test_zero_replicas_is_usage_error(tmp_path, capsys):
    assert main(["simulate", "--config", small_config(tmp_path), "--replicas", "0", "--out", str(tmp_path)]) == 2
    assert "replicas" in capsys.readouterr().err


def test_invalid_config_field_is_usage_error(tmp_path, capsys):
    assert main(["simulate", "--config", small_config(tmp_path, ic="flat"), "--out", str(tmp_path)]) == 2
    assert "ic:" in capsys.readouterr().err


def test_simulate_writes_bundle(tmp_path):
    out = tmp_path / "run"
    assert main(["simulate", "--config", small_config(tmp_path), "--seed", "3", "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["spec"]["seed"] == 3 and summary["replicas"] == 3
    assert (out / "stats_eps0.4.csv").exists()


def test_she_subcommand(tmp_path):
    cfg = small_config(tmp_path, she_dx="0.2", she_half_width="2")
    assert main(["she", "--config", cfg, "--replicas", "4", "--out", str(tmp_path / "she")]) == 0
    summary = json.loads((tmp_path / "she" / "she_summary.json").read_text())
    assert summary["ic"] == "delta" and summary["one_point"][0]["n"] == 4


def test_compare_reports_exit_code(tmp_path, capsys):
    cfg = small_config(tmp_path, epsilons="0.4, 0.3", she_dx="0.2", she_paths="20", she_half_width="2",
                       replicas="20")
    code = main(["compare", "--config", cfg])
    report = json.loads(capsys.readouterr().out)
    assert code == (0 if report["passed"] else 1)
    assert report["comparisons"][0]["tau"] == 0.05


def test_shipped_configs_parse():
    from hsep.harness import spec_from_config

    for path in CONFIGS.glob("*.cfg"):
        assert spec_from_config(path).replicas >= 1


def test_version_flag(capsys):
    assert main(["--version"]) == 0
    assert "hsep" in capsys.readouterr().out
