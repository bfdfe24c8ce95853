import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from mpdirk import cli
from mpdirk.cli import ConfigError, load_config, main, parse_strategy, validate_config

CONFIGS = Path(cli.__file__).parent / "configs"

TINY = {
    "name": "tiny",
    "problem": {"name": "pm-a", "n": [8, 12]},
    "sweep": {
        "tableaus": ["sdirk2", "sdirk3"],
        "dt": [0.1, 0.05, 0.025],
        "strategies": [{"kind": "exact"}, {"kind": "chopped", "digits": 4}],
        "plans": [{"name": "none"}, {"name": "phi-jacobian", "count": 1}],
    },
    "reference": {"method": "radau"},
    "outputs": {"h_series": True, "twin": True},
}


def write_toml(path, text):
    path.write_text(text)
    return path


def test_shipped_configs_validate():
    names = sorted(p.name for p in CONFIGS.glob("*.toml"))
    assert names == ["bounds.toml", "burgers_linearization.toml", "mixed_precision.toml",
                     "pm_corrections.toml"]
    for path in CONFIGS.glob("*.toml"):
        cfg = load_config(path)
        assert all(n <= 250 for n in cfg["problem"]["n"])


def test_empty_dt_list_names_the_field():
    bad = json.loads(json.dumps(TINY))
    bad["sweep"]["dt"] = []
    with pytest.raises(ConfigError, match=r"sweep\.dt"):
        validate_config(bad)


def test_schema_errors_carry_paths():
    bad = json.loads(json.dumps(TINY))
    bad["sweep"]["strategies"][1] = {"kind": "chopped"}
    bad["problem"]["name"] = "kdv"
    with pytest.raises(ConfigError) as info:
        validate_config(bad)
    msg = str(info.value)
    assert "problem.name" in msg and "sweep.strategies.1" in msg


def test_increasing_dt_rejected():
    bad = json.loads(json.dumps(TINY))
    bad["sweep"]["dt"] = [0.1, 0.2, 0.05]
    with pytest.raises(ConfigError, match="decreasing"):
        validate_config(bad)


def test_bad_strategy_values_rejected():
    bad = json.loads(json.dumps(TINY))
    bad["sweep"]["strategies"] = [{"kind": "mixed", "pair": "single/double"}]
    with pytest.raises(ConfigError, match="sweep.strategies.0"):
        validate_config(bad)


def test_defaults_filled():
    cfg = validate_config({"problem": {"name": "pm-a", "n": 8}, "sweep": {
        "tableaus": ["sdirk2"], "dt": [0.1, 0.05, 0.025]}})
    assert cfg["problem"]["n"] == [8]
    assert cfg["sweep"]["strategies"] == [{"kind": "exact"}]
    assert cfg["outputs"]["format"] == "csv" and cfg["seed"] == 0


def test_toml_decode_error(tmp_path):
    path = write_toml(tmp_path / "bad.toml", "[problem\nname = 1")
    with pytest.raises(ConfigError):
        load_config(path)
    assert main(["run", str(path)]) == 2


def test_parse_strategy():
    assert parse_strategy("exact").label == "exact"
    assert parse_strategy("exact-extended").label == "exact-extended"
    assert parse_strategy("chop:6").digits == 6
    assert parse_strategy("mixed:double/single").iters == 3
    assert parse_strategy("mixed:extended/double:2").iters == 2
    for bad in ("chop", "newton", "mixed:single/double"):
        with pytest.raises(ValueError):
            parse_strategy(bad)


def test_run_writes_artifacts_and_is_deterministic(tmp_path, tmp_cache):
    cfg = validate_config(TINY)
    a, b = tmp_path / "a", tmp_path / "b"
    manifest = cli.run_experiment(cfg, 1, a)
    cli.run_experiment(cfg, 2, b)
    expected = {"convergence_n8.csv", "convergence_n12.csv", "h_series_n8.csv",
                "h_series_n12.csv", "twin_n8.csv", "twin_n12.csv"}
    assert set(manifest["files"]) == expected
    for name in expected:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    m = json.loads((a / "manifest.json").read_text())
    assert m["config"]["name"] == "tiny" and "numpy" in m["versions"] and m["wall_seconds"] > 0

    with open(a / "convergence_n8.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2 * 2 * 2 * 3
    for r in rows:
        assert r["method"] and r["strategy"] and r["plan"] and r["dt"] and r["n"] == "8"
    exact = [r for r in rows if r["strategy"] == "exact"]
    assert all(float(r["max_h"]) == 0.0 for r in exact)
    with open(a / "twin_n8.csv", newline="") as fh:
        twin = list(csv.DictReader(fh))
    assert twin and all(r["strategy"] == "chop-d4" for r in twin)
    assert list(twin[0]) == cli.TWIN_COLUMNS


def test_output_dir_env_override(tmp_path, tmp_cache, monkeypatch):
    cfg = validate_config({**TINY, "problem": {"name": "pm-a", "n": 8},
                           "outputs": {"h_series": False}})
    monkeypatch.setenv("MPDIRK_OUTPUT_DIR", str(tmp_path / "env"))
    manifest = cli.run_experiment(cfg)
    assert (tmp_path / "env" / "convergence_n8.csv").exists()
    assert manifest["files"] == ["convergence_n8.csv"]


def test_diverged_cells_are_recorded(tmp_path, tmp_cache):
    cfg = validate_config({
        "problem": {"name": "pm-a", "n": 32},
        "sweep": {"tableaus": ["sdirk4"], "dt": [0.05, 0.025, 0.0125],
                  "strategies": [{"kind": "chopped", "digits": 4}],
                  "plans": [{"name": "explicit"}]},
        "outputs": {"h_series": False},
    })
    cli.run_experiment(cfg, 1, tmp_path)
    with open(tmp_path / "convergence_n32.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3
    div = [r for r in rows if r["diverged"] == "1"]
    assert div and all(r["error"] == "inf" for r in div)


def test_run_subcommand(tmp_path, tmp_cache, capsys):
    path = write_toml(tmp_path / "c.toml", """
name = "cmd"
[problem]
name = "pm-a"
n = 8
[sweep]
tableaus = ["sdirk2"]
dt = [0.1, 0.05, 0.025]
[outputs]
h_series = false
""")
    assert main(["run", str(path), "--out", str(tmp_path / "out")]) == 0
    assert "order=" in capsys.readouterr().out
    assert (tmp_path / "out" / "manifest.json").exists()


def test_single_run_burgers_exact(tmp_cache, capsys):
    code = main(["single-run", "--problem", "burgers-a", "--n", "50", "--tableau", "sdirk3",
                 "--dt", "1e-3", "--strategy", "exact", "--reference", "dop853"])
    out = capsys.readouterr().out
    assert code == 0
    err = float(next(l for l in out.splitlines() if l.startswith("error")).split()[1])
    assert err <= 1e-8
    mh = next(l for l in out.splitlines() if l.startswith("max h")).split()[2:]
    assert all(float(v) == 0.0 for v in mh)


def test_single_run_reports_divergence(capsys, tmp_path):
    code = main(["single-run", "--problem", "pm-a", "--n", "64", "--tableau", "sdirk4",
                 "--dt", "0.0125", "--strategy", "chop:4", "--plan", "explicit",
                 "--corrections", "3", "--csv", str(tmp_path / "h.csv")])
    out = capsys.readouterr().out
    assert code == 1 and "diverged" in out
    assert (tmp_path / "h.csv").read_text().startswith("problem,n,method")


def test_single_run_bad_names(capsys):
    assert main(["single-run", "--problem", "pm-a", "--n", "8", "--dt", "0.1",
                 "--tableau", "rk4"]) == 2
    assert main(["single-run", "--problem", "pm-a", "--n", "8", "--dt", "0.1",
                 "--strategy", "chop"]) == 2


def test_validate_tableaus(capsys, tmp_path):
    assert main(["validate-tableaus"]) == 0
    out = capsys.readouterr().out
    for name in ("sdirk2", "sdirk3", "sdirk4"):
        assert f"{name}: PASS" in out
    assert out.count("min-eig(M)=") == 3
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"name": "bad", "A": [[0.5]], "b": [-1.0], "c": [0.5], "p": 1}))
    assert main(["validate-tableaus", "--extra", str(bad)]) == 1
    assert "bad: FAIL" in capsys.readouterr().out


def test_list_problems(capsys):
    assert main(["list-problems"]) == 0
    out = capsys.readouterr().out
    for name in ("burgers-a", "burgers-b", "shallow-water", "pm-a", "pm-b"):
        assert name in out


def test_console_script_entry_point():
    out = subprocess.run([sys.executable, "-m", "mpdirk.cli", "--version"],
                         capture_output=True, text=True, check=True)
    assert out.stdout.startswith("mpdirk ")
