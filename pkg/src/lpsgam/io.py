"""Configuration, CSV ingestion and deterministic result serialization.

Model configuration is a JSON object::

    {
      "response": "y",
      "family": {"name": "poisson"},            # gaussian needs no dispersion: defaults
                                                # to the empirical variance of y
      "linear": ["z1", "z2"],
      "smooth": ["x1", {"name": "x2", "K": 20, "r": 2}],
      "spline": {"K": 15, "r": 3},              # defaults for smooths given by name
      "hyperprior": {"nu": 3, "a_delta": 1e-4, "b_delta": 1e-4, "zeta": 1e-5},
      "explorer": {"method": null, "grid_points": null, "alpha": 0.05,
                   "chain_length": 500, "dof": 3, "seed": 0},
      "variant": "lps",
      "levels": [0.90, 0.95]
    }

``family.trials`` may be an integer or the name of a column holding the
per-observation number of trials.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .design import SplineBasisSpec
from .explorer import ExplorerOptions
from .families import FamilyKind, ResponseFamily
from .hyperposterior import PenaltyHyperPrior


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"config field '{field_name}': {message}")
        self.field = field_name


class CsvError(ValueError):
    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column '{column}'")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.row = row
        self.column = column


# --------------------------------------------------------------------------
# numbers

def format_float(x) -> str:
    """Shortest decimal string that parses back to the same double."""
    return repr(float(x))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    return obj


def write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


# --------------------------------------------------------------------------
# data

@dataclass
class Dataset:
    columns: dict

    @property
    def n(self) -> int:
        return len(next(iter(self.columns.values()))) if self.columns else 0

    @property
    def names(self) -> list:
        return list(self.columns)

    def __getitem__(self, name):
        return self.columns[name]

    def matrix(self, names) -> np.ndarray:
        if not names:
            return np.zeros((self.n, 0))
        return np.column_stack([self.columns[c] for c in names])


def load_csv(path) -> Dataset:
    """Read a numeric CSV with a header row.

    Rows are numbered as file lines (the header is line 1).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvError("file is empty") from None
        header = [h.strip() for h in header]
        if len(set(header)) != len(header):
            raise CsvError("duplicate column names in header", row=1)
        if any(not h for h in header):
            raise CsvError("empty column name in header", row=1)
        cols = [[] for _ in header]
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise CsvError(f"expected {len(header)} cells, found {len(row)}", row=line_no)
            for k, cell in enumerate(row):
                cell = cell.strip()
                if cell == "":
                    raise CsvError("missing value", row=line_no, column=header[k])
                try:
                    val = float(cell)
                except ValueError:
                    raise CsvError(f"non-numeric cell {cell!r}", row=line_no,
                                   column=header[k]) from None
                if not math.isfinite(val):
                    raise CsvError(f"non-finite cell {cell!r}", row=line_no, column=header[k])
                cols[k].append(val)
    if not cols or not cols[0]:
        raise CsvError("no data rows")
    return Dataset({h: np.array(c) for h, c in zip(header, cols)})


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v for v in r])


# --------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class SmoothConfig:
    name: str
    K: int = 15
    r: int = 3


@dataclass(frozen=True)
class ModelConfig:
    response: str
    family: str
    smooth: tuple
    linear: tuple = ()
    dispersion: float | None = None
    trials: int | str = 1
    prior: PenaltyHyperPrior = PenaltyHyperPrior()
    zeta: float = 1e-5
    explorer: ExplorerOptions = ExplorerOptions()
    variant: str = "lps"
    levels: tuple = (0.90, 0.95)

    def columns(self) -> list:
        cols = [self.response, *self.linear, *(s.name for s in self.smooth)]
        if isinstance(self.trials, str):
            cols.append(self.trials)
        return cols

    def check_columns(self, data: Dataset) -> None:
        for name in self.columns():
            if name not in data.columns:
                raise ConfigError("columns", f"column {name!r} not found in the data")

    def build_family(self, data: Dataset) -> ResponseFamily:
        kind = FamilyKind(self.family)
        if kind is FamilyKind.GAUSSIAN:
            disp = self.dispersion
            if disp is None:
                disp = float(np.var(data[self.response], ddof=1))
            return ResponseFamily.gaussian(disp)
        if kind is FamilyKind.BINOMIAL:
            trials = data[self.trials] if isinstance(self.trials, str) else self.trials
            if isinstance(self.trials, str) and np.any(trials != np.round(trials)):
                raise ConfigError("family.trials", "trial counts must be integers")
            return ResponseFamily.binomial(trials.astype(int) if isinstance(trials, np.ndarray)
                                           else trials)
        if kind is FamilyKind.POISSON:
            return ResponseFamily.poisson()
        return ResponseFamily.bernoulli()

    def spline_specs(self) -> list:
        return [SplineBasisSpec(K=s.K, penalty_order=s.r) for s in self.smooth]


def _get(obj, key, expected, field_name, default=None):
    val = obj.get(key, default)
    if val is None:
        return default
    if expected is float and isinstance(val, int) and not isinstance(val, bool):
        val = float(val)
    if not isinstance(val, expected) or isinstance(val, bool) and expected is not bool:
        raise ConfigError(field_name, f"expected {getattr(expected, '__name__', expected)}, "
                                      f"got {type(val).__name__}")
    return val


def _positive(val, field_name):
    if not (math.isfinite(val) and val > 0):
        raise ConfigError(field_name, f"must be positive, got {val}")
    return val


def parse_config(obj) -> ModelConfig:
    """Validate a decoded JSON object into a ``ModelConfig``."""
    if not isinstance(obj, dict):
        raise ConfigError("<root>", "configuration must be a JSON object")
    known = {"response", "family", "linear", "smooth", "spline", "hyperprior", "explorer",
             "variant", "levels"}
    for key in obj:
        if key not in known:
            raise ConfigError(key, "unknown field")

    response = _get(obj, "response", str, "response")
    if not response:
        raise ConfigError("response", "required")

    fam = obj.get("family")
    if isinstance(fam, str):
        fam = {"name": fam}
    if not isinstance(fam, dict):
        raise ConfigError("family", "required object with a 'name'")
    fam_name = _get(fam, "name", str, "family.name")
    if fam_name not in {k.value for k in FamilyKind}:
        raise ConfigError("family.name", f"unknown family {fam_name!r}")
    dispersion = _get(fam, "dispersion", float, "family.dispersion")
    if dispersion is not None:
        _positive(dispersion, "family.dispersion")
        if fam_name != "gaussian":
            raise ConfigError("family.dispersion", f"fixed at 1 for the {fam_name} family")
    trials = fam.get("trials", 1)
    if isinstance(trials, bool) or not isinstance(trials, (int, str)):
        raise ConfigError("family.trials", "must be a positive integer or a column name")
    if isinstance(trials, int) and trials < 1:
        raise ConfigError("family.trials", "must be a positive integer")
    if fam_name != "binomial" and trials != 1:
        raise ConfigError("family.trials", "only the binomial family takes trials")

    linear = obj.get("linear", [])
    if not isinstance(linear, list) or not all(isinstance(c, str) for c in linear):
        raise ConfigError("linear", "must be a list of column names")

    spline = _get(obj, "spline", dict, "spline", {})
    K_def = _get(spline, "K", int, "spline.K", 15)
    r_def = _get(spline, "r", int, "spline.r", 3)
    smooth_raw = obj.get("smooth")
    if not isinstance(smooth_raw, list) or not smooth_raw:
        raise ConfigError("smooth", "must be a non-empty list")
    smooth = []
    for i, s in enumerate(smooth_raw):
        fname = f"smooth[{i}]"
        if isinstance(s, str):
            s = {"name": s}
        if not isinstance(s, dict):
            raise ConfigError(fname, "must be a column name or an object")
        name = _get(s, "name", str, f"{fname}.name")
        if not name:
            raise ConfigError(f"{fname}.name", "required")
        K = _get(s, "K", int, f"{fname}.K", K_def)
        r = _get(s, "r", int, f"{fname}.r", r_def)
        if r < 1:
            raise ConfigError(f"{fname}.r", "penalty order must be >= 1")
        if K <= r or K < 4:
            raise ConfigError(f"{fname}.K", f"K={K} must exceed r={r} and be at least 4")
        smooth.append(SmoothConfig(name, K, r))

    names = [response, *linear, *(s.name for s in smooth)]
    dup = sorted({n for n in names if names.count(n) > 1})
    if dup:
        raise ConfigError("columns", f"column names used more than once: {dup}")

    hp = _get(obj, "hyperprior", dict, "hyperprior", {})
    nu = _positive(_get(hp, "nu", float, "hyperprior.nu", 3.0), "hyperprior.nu")
    a = _positive(_get(hp, "a_delta", float, "hyperprior.a_delta", 1e-4), "hyperprior.a_delta")
    b = _positive(_get(hp, "b_delta", float, "hyperprior.b_delta", 1e-4), "hyperprior.b_delta")
    zeta = _positive(_get(hp, "zeta", float, "hyperprior.zeta", 1e-5), "hyperprior.zeta")

    ex = _get(obj, "explorer", dict, "explorer", {})
    method = _get(ex, "method", str, "explorer.method")
    if method is not None and method not in ("grid", "imh", "mode"):
        raise ConfigError("explorer.method", "must be 'grid', 'imh' or 'mode'")
    M = _get(ex, "grid_points", int, "explorer.grid_points")
    if M is not None and M < 2:
        raise ConfigError("explorer.grid_points", "must be at least 2")
    alpha = _get(ex, "alpha", float, "explorer.alpha", 0.05)
    if not 0 < alpha < 1:
        raise ConfigError("explorer.alpha", "must lie in (0, 1)")
    chain = _get(ex, "chain_length", int, "explorer.chain_length", 500)
    if chain < 1:
        raise ConfigError("explorer.chain_length", "must be positive")
    dof = _get(ex, "dof", float, "explorer.dof", 3.0)
    if not dof > 2:
        raise ConfigError("explorer.dof", "must exceed 2")
    seed = _get(ex, "seed", int, "explorer.seed", 0)
    if seed < 0:
        raise ConfigError("explorer.seed", "must be non-negative")

    variant = _get(obj, "variant", str, "variant", "lps").lower()
    if variant not in ("lps", "lpsmap"):
        raise ConfigError("variant", "must be 'lps' or 'lpsmap'")
    levels = obj.get("levels", [0.90, 0.95])
    if (not isinstance(levels, list) or not levels
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) and 0 < v < 1
                       for v in levels)):
        raise ConfigError("levels", "must be a non-empty list of numbers in (0, 1)")

    return ModelConfig(
        response=response, family=fam_name, smooth=tuple(smooth), linear=tuple(linear),
        dispersion=dispersion, trials=trials,
        prior=PenaltyHyperPrior(nu, a, b), zeta=zeta,
        explorer=ExplorerOptions(method=method, grid_points=M, alpha=alpha, chain_length=chain,
                                 dof=dof, seed=seed),
        variant=variant, levels=tuple(float(v) for v in sorted(levels)))


def load_config(path) -> ModelConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON: {exc}") from None
    return parse_config(obj)


# --------------------------------------------------------------------------
# report

def level_tag(level: float) -> str:
    return format(100 * level, "g")


@dataclass
class FitReport:
    coef_header: list
    coef_rows: list
    smooth_tables: dict  # name -> (header, rows)
    diagnostics: dict
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "coefficients": [dict(zip(self.coef_header, r)) for r in self.coef_rows],
            "smooths": {k: [dict(zip(h, r)) for r in rows]
                        for k, (h, rows) in self.smooth_tables.items()},
            "diagnostics": self.diagnostics,
            "config": self.config,
        }

    def write(self, out_dir) -> list:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "fit_report.json", out / "coefficients.csv", out / "diagnostics.json"]
        write_json(self.to_dict(), paths[0])
        write_csv(paths[1], self.coef_header, self.coef_rows)
        write_json(self.diagnostics, paths[2])
        for name, (header, rows) in self.smooth_tables.items():
            p = out / f"smooth_{name}.csv"
            write_csv(p, header, rows)
            paths.append(p)
        return paths
