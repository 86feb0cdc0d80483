import json
import subprocess
import sys

import pytest

from osllab.cli import main


def scenario(tmp_path, **over):
    cfg = {
        "field": {"name": "sgn"},
        "regime": "compressive",
        "equation": "transport",
        "data": {"expression": "|x|"},
        "grids": {"t": [0.0, 1.0], "x": {"low": -1, "high": 1, "spacing": 0.25}},
    }
    cfg.update(over)
    p = tmp_path / "sc.json"
    p.write_text(json.dumps(cfg, indent=1))
    return p


def test_run_prints_output_hashes(tmp_path, capsys):
    assert main(["run", str(scenario(tmp_path)), "--out", str(tmp_path / "o")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert [line.split()[1] for line in lines] == ["ledger.csv", "solution.csv"]
    assert all(len(line.split()[0]) == 64 for line in lines)
    assert (tmp_path / "o" / "manifest.json").exists()


def test_run_reports_diagnostics_with_exit_2(tmp_path, capsys):
    path = scenario(tmp_path, grids={"t": [0.0, 1.0], "x": {"low": -1, "high": 1, "spacing": 0.3}})
    assert main(["run", str(path)]) == 2
    err = capsys.readouterr().err
    assert err.startswith(f"{path}: line ")
    assert "spacing" in err


def test_run_rejects_unsupported_combination(tmp_path, capsys):
    path = scenario(tmp_path, equation="fokker-planck", noise={"sigma": 0.1})
    assert main(["run", str(path), "--out", str(tmp_path / "o")]) == 2
    assert "compressive" in capsys.readouterr().err


def test_unknown_suite_exit_2(capsys):
    assert main(["verify", "nonsense"]) == 2
    assert "unknown suite" in capsys.readouterr().err


def test_bad_tolerance_scale_exit_2():
    assert main(["verify", "flows", "--tol-scale", "0"]) == 2


def test_usage_error_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_verify_flows_passes_and_writes_report(tmp_path, capsys):
    report = tmp_path / "r.txt"
    assert main(["verify", "flows", "--report", str(report)]) == 0
    out = capsys.readouterr().out
    assert out == report.read_text()
    assert out.splitlines()[0] == "suite flows tol-scale 1"
    assert out.splitlines()[-1] == "3/3 criteria passed"


def test_tiny_tolerance_scale_makes_checks_fail(capsys):
    assert main(["verify", "flows", "--tol-scale", "1e-9"]) == 1
    assert "[FAIL] criterion 12" in capsys.readouterr().out


def test_schema_command(capsys):
    assert main(["schema"]) == 0
    schema = json.loads(capsys.readouterr().out)
    assert set(schema["required"]) >= {"field", "regime", "equation", "data", "grids"}


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "osllab", "schema"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["type"] == "object"
