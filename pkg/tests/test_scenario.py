import json
from pathlib import Path

import numpy as np
import pytest

from osllab.scenario import (ScenarioError, UnsupportedCombination, load_scenario, run_scenario,
                             scenario_from_config)


def base(**over):
    cfg = {
        "field": {"name": "sgn"},
        "regime": "compressive",
        "equation": "transport",
        "data": {"expression": "pos(|x| - 0.2)"},
        "grids": {"t": [0.0, 0.5, 1.0], "x": {"low": -2, "high": 2, "spacing": 0.125}, "T": 1.0},
        "method": "oracle",
    }
    cfg.update(over)
    return cfg


def write(tmp_path, cfg, name="sc.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg, indent=1))
    return p


def read_csv(path):
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def test_sgn_compressive_transport_matches_closed_form(tmp_path):
    sc = scenario_from_config(base(data={"expression": "|x|"}))
    man = run_scenario(sc, tmp_path / "out")
    rows = read_csv(tmp_path / "out" / "solution.csv")
    t, x, u = rows[:, 0], rows[:, 1], rows[:, 2]
    np.testing.assert_allclose(u, np.maximum(np.abs(x) - (1.0 - t), 0.0), atol=1e-12)
    assert set(man["outputs"]) == {"solution.csv", "ledger.csv"}


def test_zero_field_leaves_data_unchanged(tmp_path):
    sc = scenario_from_config(base(field={"name": "zero"}, data={"expression": "exp(-x^2)"}))
    run_scenario(sc, tmp_path)
    rows = read_csv(tmp_path / "solution.csv")
    np.testing.assert_allclose(rows[:, 2], np.exp(-rows[:, 1] ** 2), atol=1e-12)


def test_powerlaw_continuity_density(tmp_path):
    cfg = base(field={"name": "powerlaw", "params": [0.5]}, equation="continuity",
               data={"expression": "sgn(x)*sqrt(|x|)"},
               grids={"t": [0.0, 0.5], "x": {"low": -1, "high": 1, "spacing": 2.0 ** -9}})
    man = run_scenario(scenario_from_config(cfg), tmp_path)
    assert {"atoms.csv", "density.csv", "ledger.csv"} <= set(man["outputs"])
    ledger = read_csv(tmp_path / "ledger.csv")
    np.testing.assert_allclose(ledger[:, 1], 0.0, atol=1e-9)
    assert ledger[1, 4] == pytest.approx(1 / 6, abs=2e-3)


def test_manifest_rerun_reproduces_bytes(tmp_path):
    cfg = base(regime="compressive", equation="sde", data={"expression": "|x|"}, seed=11,
               noise={"sigma": 0.2, "paths": 50, "dt": 0.01}, outputs={"plots": True},
               method="auto")
    first = run_scenario(scenario_from_config(cfg), tmp_path / "a")
    assert "solution.svg" in first["outputs"]
    again = run_scenario(load_scenario(tmp_path / "a" / "manifest.json"), tmp_path / "b")
    assert first["outputs"] == again["outputs"]
    assert first["config_sha256"] == again["config_sha256"]
    other = run_scenario(scenario_from_config(cfg), tmp_path / "c", seed=12)
    assert other["outputs"]["solution.csv"] != first["outputs"]["solution.csv"]
    assert other["seed"] == 12


def test_csv_terminal_data_is_hashed(tmp_path):
    xs = np.linspace(-2, 2, 33)
    data = tmp_path / "u.csv"
    data.write_text("x,u\n" + "".join(f"{x!r},{abs(x)!r}\n" for x in xs.tolist()))
    cfg = base(data={"csv": "u.csv"})
    man = run_scenario(load_scenario(write(tmp_path, cfg)), tmp_path / "out")
    assert len(man["config"]["data"]["csv_sha256"]) == 64
    bad = base(data={"csv": "u.csv", "csv_sha256": "0" * 64})
    with pytest.raises(ScenarioError, match="sha256"):
        load_scenario(write(tmp_path, bad, "bad.json"))


def test_diagnostics_carry_line_numbers(tmp_path):
    cfg = base(grids={"t": [0.0, 0.5], "x": {"low": -1, "high": 1, "spacing": 0.3}}, data={"expression": "|x"})
    with pytest.raises(ScenarioError) as err:
        load_scenario(write(tmp_path, cfg))
    text = str(err.value)
    assert "spacing" in text and "column" in text
    assert all(line.startswith("line ") for line in text.splitlines())


def test_unknown_field_is_a_schema_error(tmp_path):
    with pytest.raises(ScenarioError, match="field.name"):
        load_scenario(write(tmp_path, base(field={"name": "tanh"})))


def test_unsupported_combination(tmp_path):
    cfg = base(equation="fokker-planck", noise={"sigma": 0.1})
    with pytest.raises(UnsupportedCombination):
        load_scenario(write(tmp_path, cfg))


def test_noise_requirements(tmp_path):
    with pytest.raises(ScenarioError, match="noise"):
        load_scenario(write(tmp_path, base(equation="sde")))
    with pytest.raises(ScenarioError, match="noise"):
        load_scenario(write(tmp_path, base(noise={"sigma": 0.1})))
    with pytest.raises(UnsupportedCombination):
        load_scenario(write(tmp_path, base(regime="expansive", equation="sde", noise={"sigma": "0.1*x"})))


def test_atoms_only_for_compressive_continuity(tmp_path):
    cfg = base(regime="expansive", equation="continuity",
               data={"expression": "1", "atoms": [{"x": [0.0], "w": 1.0}]})
    with pytest.raises(ScenarioError, match="atoms"):
        load_scenario(write(tmp_path, cfg))


def test_invalid_json_reports_position(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text('{\n "field": \n}')
    with pytest.raises(ScenarioError, match="line 3"):
        load_scenario(p)


@pytest.mark.parametrize("path", sorted((Path(__file__).parents[1] / "scenarios").glob("*.json")),
                         ids=lambda p: p.stem)
def test_shipped_scenarios_run(path, tmp_path):
    man = run_scenario(load_scenario(path), tmp_path)
    assert "ledger.csv" in man["outputs"]
