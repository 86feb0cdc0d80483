"""Scenario files: JSON schema, validation with line diagnostics, and the runner.

A scenario names a catalog field (optionally mollified), a regime and an
equation, the data as an expression, a CSV file or a list of atoms, the time
and space grids, optional noise, and the output settings. ``run_scenario``
writes solution CSVs, a norm ledger, optional SVG plots and ``manifest.json``;
the manifest holds the full resolved configuration and can be run again.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
import platform
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from . import __version__
from .continuity import DensitySolution, solve_compressive_duality, solve_good_expansive
from .expr import Expression, ExpressionError
from .field import FieldError, VelocityField, make_catalog_field, mollify
from .flow import write_table
from .gridfunction import GridFunction
from .lattice import Lattice
from .measure import HybridMeasure, MeasureError
from .plots import line_plot_svg, slice_indices
from .stochastic import (NoiseSpec, forward_flow_const_noise, solve_fokker_planck_const_noise,
                         solve_second_order_compressive)
from .transport import solve_compressive, solve_expansive

MANIFEST_VERSION = 1

_NUMBER = {"type": "number"}
_RANGE = {
    "type": "object",
    "properties": {"start": _NUMBER, "stop": _NUMBER, "num": {"type": "integer", "minimum": 1}},
    "required": ["start", "stop", "num"],
    "additionalProperties": False,
}

SCENARIO_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "osllab scenario",
    "type": "object",
    "required": ["field", "regime", "equation", "data", "grids"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "field": {
            "type": "object",
            "required": ["name"],
            "additionalProperties": False,
            "properties": {
                "name": {"enum": ["sgn", "powerlaw", "linear", "zero"]},
                "params": {"type": "array", "items": _NUMBER},
                "dim": {"type": "integer", "minimum": 1, "maximum": 3},
                "mollify": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "regime": {"enum": ["compressive", "expansive"]},
        "equation": {"enum": ["transport", "continuity", "sde", "fokker-planck"]},
        "method": {"enum": ["auto", "oracle", "numeric"]},
        "data": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "expression": {"type": "string", "minLength": 1},
                "csv": {"type": "string", "minLength": 1},
                "csv_sha256": {"type": "string"},
                "atoms": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["x", "w"],
                        "additionalProperties": False,
                        "properties": {"x": {"type": "array", "items": _NUMBER, "minItems": 1}, "w": _NUMBER},
                    },
                },
            },
            "not": {"required": ["expression", "csv"]},
        },
        "grids": {
            "type": "object",
            "required": ["t", "x"],
            "additionalProperties": False,
            "properties": {
                "t": {"oneOf": [{"type": "array", "items": _NUMBER, "minItems": 1}, _RANGE]},
                "x": {
                    "type": "object",
                    "required": ["low", "high"],
                    "additionalProperties": False,
                    "properties": {
                        "low": _NUMBER, "high": _NUMBER,
                        "spacing": {"type": "number", "exclusiveMinimum": 0},
                        "n": {"type": "integer", "minimum": 2},
                    },
                    "oneOf": [{"required": ["spacing"]}, {"required": ["n"]}],
                },
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "T": _NUMBER,
            },
        },
        "noise": {
            "type": "object",
            "required": ["sigma"],
            "additionalProperties": False,
            "properties": {
                "sigma": {"oneOf": [
                    _NUMBER,
                    {"type": "array", "items": {"type": "array", "items": _NUMBER, "minItems": 1}, "minItems": 1},
                    {"type": "string", "minLength": 1},
                ]},
                "paths": {"type": "integer", "minimum": 1},
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "antithetic": {"type": "boolean"},
                "lipschitz": {"type": "number", "minimum": 0},
                "growth": {"type": "number", "minimum": 0},
            },
        },
        "outputs": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dir": {"type": "string"},
                "plots": {"type": "boolean"},
            },
        },
        "seed": {"type": "integer", "minimum": 0},
    },
}

SUPPORTED = {
    ("compressive", "transport"), ("expansive", "transport"),
    ("compressive", "continuity"), ("expansive", "continuity"),
    ("compressive", "sde"), ("expansive", "sde"),
    ("expansive", "fokker-planck"),
}


class ScenarioError(ValueError):
    """Configuration problem; ``diagnostics`` lists ``(line, field path, message)``."""

    def __init__(self, diagnostics: list):
        self.diagnostics = diagnostics
        super().__init__("\n".join(format_diagnostic(*d) for d in diagnostics))


class UnsupportedCombination(ScenarioError):
    pass


def format_diagnostic(line: Optional[int], where: str, message: str) -> str:
    loc = f"line {line}" if line else "line ?"
    return f"{loc}: {where or '<root>'}: {message}"


def _locate(text: str, path) -> Optional[int]:
    """Line of the last key in ``path`` found by scanning keys in order (best effort)."""
    if text is None:
        return None
    pos, found = 0, None
    for part in path:
        if isinstance(part, int):
            continue
        hit = text.find(json.dumps(part), pos)
        if hit < 0:
            break
        pos, found = hit, hit
    if found is None:
        return 1
    return text.count("\n", 0, found) + 1


def _path_str(path) -> str:
    out = ""
    for p in path:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out


@dataclass
class Scenario:
    config: dict
    base_dir: Path
    text: Optional[str] = None

    # resolved pieces -----------------------------------------------------
    @property
    def seed(self) -> int:
        return int(self.config.get("seed", 0))

    @property
    def dim(self) -> int:
        return int(self.config["field"].get("dim", 1))

    @property
    def regime(self) -> str:
        return self.config["regime"]

    @property
    def equation(self) -> str:
        return self.config["equation"]

    @property
    def method(self) -> str:
        return self.config.get("method", "auto")

    @property
    def dt(self) -> float:
        return float(self.config["grids"].get("dt", 1e-3))

    def t_grid(self) -> np.ndarray:
        t = self.config["grids"]["t"]
        if isinstance(t, dict):
            return np.round(np.linspace(t["start"], t["stop"], t["num"]), 12)
        return np.asarray(t, dtype=float)

    @property
    def horizon(self) -> float:
        return float(self.config["grids"].get("T", float(np.max(self.t_grid()))))

    def lattice(self) -> Lattice:
        x = self.config["grids"]["x"]
        if "spacing" in x:
            return Lattice.with_spacing(x["low"], x["high"], x["spacing"], self.dim)
        return Lattice.uniform([x["low"]] * self.dim, [x["high"]] * self.dim, [x["n"]] * self.dim)

    def field(self) -> VelocityField:
        spec = self.config["field"]
        fld = make_catalog_field(spec["name"], spec.get("params", []), self.dim)
        if "mollify" in spec:
            fld = mollify(fld, float(spec["mollify"]))
        return fld

    def noise(self) -> Optional[NoiseSpec]:
        spec = self.config.get("noise")
        if spec is None:
            return None
        sigma = spec["sigma"]
        space = isinstance(sigma, str)
        if space:
            expr = Expression(sigma, self.dim)
            if self.dim != 1:
                raise ScenarioError([(None, "noise.sigma", "expression noise is one-dimensional only")])
            sig = lambda t, pts, e=expr: e(pts, t).reshape(-1, 1, 1)
        else:
            sig = np.asarray(sigma, dtype=float)
        return NoiseSpec(sig, seed=self.seed, paths=int(spec.get("paths", 1000)), dt=float(spec.get("dt", 1e-2)),
                         space_dependent=space, antithetic=bool(spec.get("antithetic", False)),
                         lipschitz=float(spec.get("lipschitz", 0.0)), growth=float(spec.get("growth", 0.0)))

    def data_path(self) -> Optional[Path]:
        name = self.config["data"].get("csv")
        if name is None:
            return None
        p = Path(name)
        return p if p.is_absolute() else (self.base_dir / p)

    def terminal(self):
        """``u_T`` as a compiled expression or a single-slice grid function."""
        data = self.config["data"]
        if "expression" in data:
            return Expression(data["expression"], self.dim)
        table = np.loadtxt(self.data_path(), delimiter=",", skiprows=1, ndmin=2)
        return GridFunction([self.horizon], Lattice((table[:, 0],)), table[:, 1][None, :])

    def initial_measure(self, lattice: Lattice):
        data = self.config["data"]
        atoms = data.get("atoms", [])
        ax = np.array([a["x"] for a in atoms], dtype=float).reshape(-1, self.dim)
        aw = np.array([a["w"] for a in atoms], dtype=float)
        if "csv" in data:
            m = HybridMeasure.from_csv(self.data_path())
            if atoms:
                m = HybridMeasure(m.dim, np.vstack([m.atoms_x, ax]), np.concatenate([m.atoms_w, aw]),
                                  m.lattice, m.density)
            return m
        if "expression" in data:
            return HybridMeasure.from_density(lattice, Expression(data["expression"], self.dim), ax, aw)
        return HybridMeasure.from_atoms(ax, aw, self.dim)


def _schema_errors(config, text) -> list:
    validator = jsonschema.Draft202012Validator(SCENARIO_SCHEMA)
    out = []
    for err in sorted(validator.iter_errors(config), key=lambda e: (list(map(str, e.absolute_path)), e.message)):
        path = list(err.absolute_path)
        out.append((_locate(text, path), _path_str(path), err.message))
    return out


def _semantic_errors(sc: Scenario) -> tuple:
    """``(diagnostics, unsupported)``; the flag marks solver combinations that do not exist."""
    cfg, text, out = sc.config, sc.text, []
    unsupported = False

    def add(path, message):
        out.append((_locate(text, path), _path_str(path), message))

    combo = (sc.regime, sc.equation)
    if combo not in SUPPORTED:
        add(["equation"], f"{sc.equation} is not available in the {sc.regime} regime")
        unsupported = True
    needs_noise = sc.equation in ("sde", "fokker-planck")
    if needs_noise and "noise" not in cfg:
        add(["noise"], f"{sc.equation} needs a noise block")
    if not needs_noise and "noise" in cfg:
        add(["noise"], f"{sc.equation} does not take noise")
    noise = cfg.get("noise", {})
    if isinstance(noise.get("sigma"), str):
        if sc.regime == "expansive":
            add(["noise", "sigma"], "forward stochastic flows need noise constant in space")
            unsupported = True
        if "lipschitz" not in noise or "growth" not in noise:
            add(["noise", "sigma"], "space-dependent noise needs 'lipschitz' and 'growth'")
        try:
            Expression(noise["sigma"], sc.dim)
        except ExpressionError as exc:
            add(["noise", "sigma"], str(exc))
    x = cfg["grids"]["x"]
    if not x["high"] > x["low"]:
        add(["grids", "x", "high"], "high must exceed low")
    elif "spacing" in x:
        n = (x["high"] - x["low"]) / x["spacing"]
        if abs(n - round(n)) > 1e-6 or round(n) < 1:
            add(["grids", "x", "spacing"], "spacing must divide high - low")
    t = sc.t_grid()
    if t.size and (np.any(np.diff(t) <= 0)):
        add(["grids", "t"], "times must be strictly increasing")
    if t.size and t.min() < 0:
        add(["grids", "t"], "times must be nonnegative")
    T = sc.horizon
    if sc.regime == "compressive" and sc.equation in ("transport", "sde") or \
            sc.regime == "expansive" and sc.equation == "transport":
        if t.size and t.max() > T + 1e-12:
            add(["grids", "T"], f"time grid exceeds the horizon T={T:g}")
    if T > 10.0:
        add(["grids", "T"], "horizon beyond the catalog window 10")
    data = cfg["data"]
    has = [k for k in ("expression", "csv", "atoms") if k in data]
    if not has:
        add(["data"], "give an expression, a csv file or atoms")
    if "atoms" in data and not (sc.regime == "compressive" and sc.equation == "continuity"):
        add(["data", "atoms"], "atoms are data for compressive continuity only")
    for k, a in enumerate(data.get("atoms", [])):
        if len(a["x"]) != sc.dim:
            add(["data", "atoms", k, "x"], f"atom location must have {sc.dim} coordinate(s)")
    if "expression" in data:
        try:
            Expression(data["expression"], sc.dim)
        except ExpressionError as exc:
            add(["data", "expression"], str(exc))
    if "csv" in data:
        p = sc.data_path()
        if not p.is_file():
            add(["data", "csv"], f"file not found: {p}")
        elif "csv_sha256" in data and _sha256(p) != data["csv_sha256"]:
            add(["data", "csv_sha256"], "data file changed since the manifest was written")
        elif sc.equation in ("transport", "sde") and sc.dim != 1:
            add(["data", "csv"], "CSV terminal data is one-dimensional only")
    spec = cfg["field"]
    try:
        make_catalog_field(spec["name"], spec.get("params", []), sc.dim)
    except FieldError as exc:
        add(["field", "params"], str(exc))
    return out, unsupported


def load_scenario(path) -> Scenario:
    """Parse and validate a scenario file (or a run manifest, which embeds one)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError([(None, "", f"cannot read {path}: {exc.strerror}")]) from exc
    try:
        config = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError([(exc.lineno, "", f"invalid JSON: {exc.msg} (column {exc.colno})")]) from exc
    if isinstance(config, dict) and "manifest_version" in config:
        if not isinstance(config.get("config"), dict):
            raise ScenarioError([(_locate(text, ["config"]), "config", "manifest has no configuration")])
        config = config["config"]
        text = None
    return scenario_from_config(config, path.parent, text)


def scenario_from_config(config, base_dir=".", text: Optional[str] = None) -> Scenario:
    errors = _schema_errors(config, text)
    if errors:
        raise ScenarioError(errors)
    sc = Scenario(copy.deepcopy(config), Path(base_dir), text)
    errors, unsupported = _semantic_errors(sc)
    if errors:
        raise (UnsupportedCombination if unsupported else ScenarioError)(errors)
    return sc


# ---------------------------------------------------------------------------
# running


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _versions() -> dict:
    from importlib.metadata import PackageNotFoundError, version

    out = {"osllab": __version__, "python": platform.python_version()}
    for dist in ("numpy", "scipy", "jsonschema"):
        try:
            out[dist] = version(dist)
        except PackageNotFoundError:
            out[dist] = "unknown"
    return out


def _grid_ledger(sol: GridFunction) -> tuple:
    header = ["t", "L1", "L2", "Linf", "BV", "Lip"]
    return header, np.array(sol.ledger(), dtype=float)


def _density_ledger(sol: DensitySolution) -> tuple:
    rows = [(t, m, *sol.lp_ledger()[k][1:]) for k, (t, m) in enumerate(zip(sol.t_grid, sol.masses))]
    return ["t", "mass", "L1", "L2", "Linf"], np.array(rows, dtype=float)


def _plot_slices(out: Path, sol: GridFunction, ylabel: str, title: str) -> list:
    if sol.lattice.dim != 1:
        return []
    x = sol.lattice.axes[0]
    curves = [(f"t={sol.t_grid[k]:g}", sol.samples[k]) for k in slice_indices(len(sol.t_grid))]
    target = out / "solution.svg"
    line_plot_svg(target, x, curves, title, ylabel)
    return [target]


def run_scenario(sc: Scenario, out_dir=None, seed: Optional[int] = None, threads: int = 1) -> dict:
    """Run a validated scenario and write its artifacts; returns the manifest."""
    config = copy.deepcopy(sc.config)
    if seed is not None:
        config["seed"] = int(seed)
    if "csv" in config["data"]:
        p = sc.data_path()
        config["data"]["csv"] = str(p.resolve())
        config["data"]["csv_sha256"] = _sha256(p)
    sc = Scenario(config, sc.base_dir, sc.text)
    out = Path(out_dir if out_dir is not None else config.get("outputs", {}).get("dir", "osllab-out"))
    out.mkdir(parents=True, exist_ok=True)
    plots = bool(config.get("outputs", {}).get("plots", False))

    fld = sc.field()
    lattice = sc.lattice()
    t_grid = sc.t_grid()
    T, dt, method = sc.horizon, sc.dt, sc.method
    written = []
    title = f"{config['field']['name']} {sc.regime} {sc.equation}"
    try:
        if sc.equation == "transport":
            solve = solve_compressive if sc.regime == "compressive" else solve_expansive
            sol = solve(fld, sc.terminal(), t_grid, lattice, T, dt=dt, method=method)
            sol.to_csv(out / "solution.csv")
            header, table = _grid_ledger(sol)
            written += [out / "solution.csv"]
            if plots:
                written += _plot_slices(out, sol, "u", title)
        elif sc.equation == "continuity" and sc.regime == "compressive":
            f0 = sc.initial_measure(lattice)
            path = solve_compressive_duality(fld, f0, t_grid, target=f0.lattice, method=method, dt=dt)
            written += _write_measure_path(out, path, lattice)
            header = ["t", "mass", "variation", "atom_mass", "cancelled_mass"]
            table = np.array(path.ledger(), dtype=float)
            if plots and f0.lattice is not None and lattice.dim == 1:
                dens = GridFunction(t_grid, lattice, np.stack([m.density_at(lattice.points) for m in path.measures]))
                written += _plot_slices(out, dens, "density", title)
        elif sc.equation == "continuity":
            sol = solve_good_expansive(fld, _density_data(sc, lattice), t_grid, lattice, dt=dt, method=method)
            sol.to_csv(out / "solution.csv")
            written += [out / "solution.csv"]
            header, table = _density_ledger(sol)
            if plots:
                written += _plot_slices(out, sol, "f", title)
        elif sc.equation == "sde" and sc.regime == "compressive":
            sol = solve_second_order_compressive(fld, sc.noise(), sc.terminal(), t_grid, lattice, T, threads=threads)
            sol.to_csv(out / "solution.csv")
            written += [out / "solution.csv"]
            header, table = _grid_ledger(sol)
            if plots:
                written += _plot_slices(out, sol, "u", title)
        elif sc.equation == "sde":
            s0 = float(t_grid.min())
            ens = forward_flow_const_noise(fld, sc.noise(), s0, t_grid, lattice)
            ens.to_csv(out / "flow.csv")
            written += [out / "flow.csv"]
            ci = ens.ci()
            disp = np.abs(ens.mean() - ens.points[None, :, :])
            header = ["t", "max_mean_displacement", "max_ci"]
            table = np.array([(t, float(disp[k].max()), float(ci[k].max())) for k, t in enumerate(ens.t_grid)])
        else:
            sol = solve_fokker_planck_const_noise(fld, sc.noise(), _density_data(sc, lattice), t_grid, lattice,
                                                  threads=threads)
            sol.to_csv(out / "solution.csv")
            written += [out / "solution.csv"]
            header, table = _density_ledger(sol)
            if plots:
                written += _plot_slices(out, sol, "f", title)
    except (MeasureError, ExpressionError) as exc:
        raise ScenarioError([(None, "data", str(exc))]) from exc
    write_table(out / "ledger.csv", header, table)
    written.append(out / "ledger.csv")

    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "config_sha256": hashlib.sha256(canonical_json(config).encode()).hexdigest(),
        "config": config,
        "seed": int(config.get("seed", 0)),
        "versions": _versions(),
        "outputs": {os.path.relpath(p, out): _sha256(p) for p in sorted(written)},
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def _density_data(sc: Scenario, lattice: Lattice):
    data = sc.config["data"]
    if "expression" in data:
        return Expression(data["expression"], sc.dim)
    return HybridMeasure.from_csv(sc.data_path())


def _write_measure_path(out: Path, path, lattice: Lattice) -> list:
    d = lattice.dim
    coords = [f"x{i + 1}" for i in range(d)]
    atom_rows, dens_rows = [], []
    for t, m in zip(path.t_grid, path.measures):
        for x, w in zip(m.atoms_x, m.atoms_w):
            atom_rows.append([t, *x, w])
        if m.lattice is not None:
            dens_rows.append(np.column_stack([np.full(lattice.size, t), lattice.points, m.density_at(lattice.points)]))
    files = [out / "atoms.csv"]
    write_table(files[0], ["t"] + coords + ["w"], np.array(atom_rows, dtype=float).reshape(-1, d + 2))
    if dens_rows:
        files.append(out / "density.csv")
        write_table(files[1], ["t"] + coords + ["f"], np.concatenate(dens_rows))
    return files

