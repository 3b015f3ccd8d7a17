"""Experiment configuration: JSON parsing, defaults and precondition checks.

Every key is declared; unknown keys are errors. Errors carry the line of the
offending key in the source file so typos are easy to find.
"""

from __future__ import annotations

import copy
import json
import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

from ..ensemble import EnsembleError, EnsembleKind, EnsembleSpec

OUTPUT_ENV = "STOCHHOM_OUTPUT_DIR"
EXPERIMENTS = ("annealed_moments", "sensitivity", "spectral_gap", "strong_fluct", "weak_fluct",
               "lipschitz_scan", "deterministic_bounds")

COMMON = {"experiment": None, "ensemble": None, "name": None, "dim": 2, "N": None,
          "master_seed": 0, "output_dir": None, "parallelism": 1, "tolerance": 1e-10,
          "bands": None}

PARAMS = {
    "annealed_moments": {"mu": 0.01, "radii": [4, 8, 16, 32], "q_list": [2, 4, 8],
                         "rate_policy": "joint", "c_hat": 0.0, "box_radius": None, "beta": None,
                         "weighting": "uniform"},
    "deterministic_bounds": {"mu": 0.01, "radii": [4, 8, 16, 32], "annulus_radii": [4, 8, 16],
                             "box_radius": None},
    "sensitivity": {"mu": 0.05, "box_radius": 24, "f_width": 10.0, "pairs": None, "n_random": 6,
                    "lambda2": 2.0},
    "spectral_gap": {"mu": 0.1, "box_radius": 9, "zeta": "point_value", "site": None,
                     "f_width": 3.0, "batches": 2, "n_random": 6},
    "strong_fluct": {"sizes": [32, 64, 128, 256], "mu": 1.0, "rhs": "bump", "test": "bump",
                     "p": 2.0, "theta": 1.0, "lam": 2.0, "lam1": 2.0, "lam2": 2.0, "q": None,
                     "r": None, "r_tilde": None, "q_tilde": None},
    "lipschitz_scan": {"R_list": [8, 16, 32, 64], "q_list": [1, 2, 4], "p": 4.0,
                       "mu_factor": 0.25},
}
PARAMS["weak_fluct"] = PARAMS["strong_fluct"]

DEFAULT_N = {"annealed_moments": 400, "deterministic_bounds": 8, "sensitivity": 50,
             "spectral_gap": 200, "strong_fluct": 200, "weak_fluct": 200, "lipschitz_scan": 100}


def default_bands(experiment: str, dim: int, params: dict) -> dict:
    if experiment == "annealed_moments":
        return {"grad_exponent_tol": 0.25, "mixed_exponent_tol": 0.35, "q_exponent_tol": 0.3,
                "flatness_growth_max": 2.0}
    if experiment == "deterministic_bounds":
        return {"max_negative_samples": 0}
    if experiment == "sensitivity":
        return {"spread_max": 3.0, "min_records": 500}
    if experiment == "spectral_gap":
        return {"batch_ratio_max": 1.5, "analytic_sigma": 3.0}
    if experiment == "strong_fluct":
        return {"slope_strong": [0.75, 1.2]}
    if experiment == "weak_fluct":
        return {"slope_weak": [0.8, 1.25]} if dim == 2 else {"gap": [0.2, 0.8]}
    return {"growth_max": 3.0}


BAND_KEYS = {
    "annealed_moments": {"grad_exponent_tol", "mixed_exponent_tol", "q_exponent_tol",
                         "flatness_growth_max"},
    "deterministic_bounds": {"max_negative_samples"},
    "sensitivity": {"spread_max", "min_records"},
    "spectral_gap": {"batch_ratio_max", "analytic_sigma"},
    "strong_fluct": {"slope_strong", "slope_weak", "gap"},
    "weak_fluct": {"slope_strong", "slope_weak", "gap"},
    "lipschitz_scan": {"growth_max"},
}


class ConfigError(ValueError):
    """Invalid configuration; ``line`` is the 1-based source line when known."""

    kind = "ConfigError"

    def __init__(self, message: str, key: str | None = None, line: int | None = None,
                 source: str | None = None):
        self.key, self.line, self.source = key, line, source
        where = f"{source or '<config>'}:{line}" if line else (source or "<config>")
        super().__init__(f"{where}: {self.kind}: {message}")


class MissingField(ConfigError):
    kind = "MissingField"


class RangeViolation(ConfigError):
    kind = "RangeViolation"


class UnknownKey(ConfigError):
    kind = "UnknownKey"


@dataclass
class ExperimentConfig:
    experiment: str
    ensemble: EnsembleSpec
    name: str
    dim: int
    N: int
    master_seed: int
    output_dir: str | None
    parallelism: int
    tolerance: float
    params: dict
    bands: dict
    source: str | None = None
    raw: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        """Fully resolved configuration; parsing it again gives the same config."""
        return {"experiment": self.experiment, "name": self.name,
                "ensemble": self.ensemble.active_params(), "dim": self.dim, "N": self.N,
                "master_seed": self.master_seed, "output_dir": self.output_dir,
                "parallelism": self.parallelism, "tolerance": self.tolerance,
                **copy.deepcopy(self.params), "bands": copy.deepcopy(self.bands)}

    def with_overrides(self, seed: int | None = None, jobs: int | None = None) -> "ExperimentConfig":
        out = copy.copy(self)
        if seed is not None:
            out.master_seed = int(seed)
        if jobs is not None:
            if jobs < 1:
                raise RangeViolation("--jobs must be >= 1")
            out.parallelism = int(jobs)
        return out

    def output_root(self) -> Path:
        return Path(self.output_dir or os.environ.get(OUTPUT_ENV, "runs"))


class _Locator:
    """Maps dotted key paths to source lines by scanning the raw JSON text."""

    def __init__(self, text: str, source: str | None):
        self.lines = text.splitlines()
        self.source = source

    def line(self, path: str) -> int | None:
        start = 0
        found = None
        for part in path.split("."):
            pat = re.compile(r'"%s"\s*:' % re.escape(part))
            found = None
            for i in range(start, len(self.lines)):
                if pat.search(self.lines[i]):
                    found = i
                    break
            if found is None:
                return None
            start = found
        return None if found is None else found + 1

    def error(self, cls, message, path=None):
        return cls(message, path, self.line(path) if path else None, self.source)


def _number(loc, path, value, *, integer=False, lo=None, hi=None, lo_open=False, allow_none=False,
            why=""):
    if value is None and allow_none:
        return None
    ok_type = isinstance(value, int) if integer else isinstance(value, (int, float))
    if isinstance(value, bool) or not ok_type:
        kind = "an integer" if integer else "a number"
        raise loc.error(RangeViolation, f"'{path}' must be {kind}, got {value!r}", path)
    if isinstance(value, float) and not math.isfinite(value):
        raise loc.error(RangeViolation, f"'{path}' must be finite", path)
    bad = (lo is not None and (value <= lo if lo_open else value < lo)) or (hi is not None and value > hi)
    if bad:
        rel = ">" if lo_open else ">="
        bound = f"{rel} {lo}" if lo is not None else ""
        if hi is not None:
            bound += (" and " if bound else "") + f"<= {hi}"
        raise loc.error(RangeViolation, f"'{path}' = {value} violates {why or bound}", path)
    return value


def _int_list(loc, path, value, lo, min_len=1):
    if not isinstance(value, list) or len(value) < min_len:
        raise loc.error(RangeViolation, f"'{path}' must be a list of at least {min_len} integers", path)
    for v in value:
        _number(loc, path, v, integer=True, lo=lo)
    if len(set(value)) != len(value):
        raise loc.error(RangeViolation, f"'{path}' has repeated entries", path)
    return sorted(value)


def _choice(loc, path, value, options):
    if value not in options:
        raise loc.error(RangeViolation, f"'{path}' = {value!r} not in {list(options)}", path)
    return value


def _check_keys(loc, given: dict, allowed, prefix=""):
    for k in given:
        if k not in allowed:
            path = f"{prefix}{k}"
            hint = ""
            close = [a for a in allowed if a.startswith(k[:3])]
            if close:
                hint = f" (did you mean {close[0]!r}?)"
            raise loc.error(UnknownKey, f"unknown key '{path}'{hint}", path)


def _ensemble(loc, raw) -> EnsembleSpec:
    if not isinstance(raw, dict):
        raise loc.error(RangeViolation, "'ensemble' must be an object", "ensemble")
    allowed = set(EnsembleSpec.__dataclass_fields__)
    _check_keys(loc, raw, allowed, "ensemble.")
    if "kind" not in raw:
        raise loc.error(MissingField, "missing required field 'ensemble.kind'", "ensemble")
    _choice(loc, "ensemble.kind", raw["kind"], [k.value for k in EnsembleKind])
    try:
        return EnsembleSpec.from_dict(raw)
    except (EnsembleError, TypeError, ValueError) as exc:
        key = next((k for k in raw if k in str(exc)), None)
        raise loc.error(RangeViolation, f"ensemble: {exc}", f"ensemble.{key}" if key else "ensemble")


def _validate_params(loc, exp, dim, p):
    def num(key, **kw):
        return _number(loc, key, p[key], **kw)

    if exp in ("annealed_moments", "deterministic_bounds", "sensitivity", "spectral_gap"):
        num("mu", lo=0, lo_open=True)
    if exp == "annealed_moments":
        p["radii"] = _int_list(loc, "radii", p["radii"], 3, 3)
        if not isinstance(p["q_list"], list) or not p["q_list"]:
            raise loc.error(RangeViolation, "'q_list' must be a non-empty list", "q_list")
        for q in p["q_list"]:
            _number(loc, "q_list", q, lo=1)
        p["q_list"] = sorted(float(q) for q in p["q_list"])
        _choice(loc, "rate_policy", p["rate_policy"], ("joint", "fixed"))
        num("c_hat", lo=0)
        num("box_radius", integer=True, lo=2 * max(p["radii"]) + 2, allow_none=True,
            why="box must contain twice the largest probe radius")
        num("beta", lo=0, lo_open=True, allow_none=True)
        _choice(loc, "weighting", p["weighting"], ("uniform", "inverse-variance"))
    elif exp == "deterministic_bounds":
        p["radii"] = _int_list(loc, "radii", p["radii"], 3, 2)
        p["annulus_radii"] = _int_list(loc, "annulus_radii", p["annulus_radii"], 1, 0) if p["annulus_radii"] else []
        num("box_radius", integer=True, lo=2 * max(p["radii"] + p["annulus_radii"]) + 2, allow_none=True)
    elif exp == "sensitivity":
        num("box_radius", integer=True, lo=12)
        num("f_width", lo=0, lo_open=True)
        num("n_random", integer=True, lo=0)
        num("lambda2", lo=1)
        if p["pairs"] is not None:
            if not isinstance(p["pairs"], list) or not p["pairs"]:
                raise loc.error(RangeViolation, "'pairs' must be a list of [x, z] site pairs", "pairs")
            for pair in p["pairs"]:
                if (not isinstance(pair, list) or len(pair) != 2
                        or any(not isinstance(s, list) or len(s) != dim for s in pair)):
                    raise loc.error(RangeViolation, f"pair {pair!r} is not [x, z] with {dim}-d sites", "pairs")
    elif exp == "spectral_gap":
        num("box_radius", integer=True, lo=3)
        _choice(loc, "zeta", p["zeta"], ("site_value", "edge_conductance", "point_value", "ball_average"))
        if p["site"] is not None and (not isinstance(p["site"], list) or len(p["site"]) != dim):
            raise loc.error(RangeViolation, f"'site' must be a list of {dim} integers", "site")
        num("f_width", lo=0, lo_open=True)
        num("batches", integer=True, lo=1)
        num("n_random", integer=True, lo=0)
    elif exp in ("strong_fluct", "weak_fluct"):
        p["sizes"] = _int_list(loc, "sizes", p["sizes"], 4, 3)
        num("mu", lo=0, lo_open=True)
        for key in ("rhs", "test"):
            _choice(loc, key, p[key], ("bump", "plane_wave", "tilted_wave"))
        num("p", lo=1)
        num("theta", lo=1)
        num("lam", lo=dim / 2, lo_open=True, why=f"lam > d/2 = {dim / 2} (need λ > d/2)")
        num("lam1", lo=1)
        num("lam2", lo=1)
        if not 1 / p["lam1"] + 1 / p["lam2"] < (dim + 2) / dim:
            raise loc.error(RangeViolation, "need 1/lam1 + 1/lam2 < (d + 2)/d", "lam1")
        for key in ("q", "r", "r_tilde", "q_tilde"):
            num(key, lo=1, allow_none=True)
        if (p["q"] is None) != (p["r"] is None):
            raise loc.error(MissingField, "'q' and 'r' must be given together", "q" if p["q"] is not None else "r")
        if p["q"] is not None and abs(1 + 1 / p["p"] - 1 / p["r"] - 1 / p["q"]) > 1e-12:
            raise loc.error(RangeViolation, "need 1 + 1/p = 1/r + 1/q", "q")
        if (p["r_tilde"] is None) != (p["q_tilde"] is None):
            raise loc.error(MissingField, "'r_tilde' and 'q_tilde' must be given together", "r_tilde")
        if p["r_tilde"] is not None:
            if p["q"] is None:
                raise loc.error(MissingField, "'r_tilde' needs 'q' and 'r'", "r_tilde")
            total = 1 / p["r"] + 1 / p["r_tilde"] + 1 / p["q"] + 1 / p["q_tilde"]
            if abs(total - 2.5) > 1e-12:
                raise loc.error(RangeViolation, "need 1/r + 1/r_tilde + 1/q + 1/q_tilde = 5/2", "r_tilde")
    elif exp == "lipschitz_scan":
        p["R_list"] = _int_list(loc, "R_list", p["R_list"], 8, 2)
        for q in p["q_list"]:
            _number(loc, "q_list", q, lo=1)
        p["q_list"] = sorted(float(q) for q in p["q_list"])
        num("p", lo=dim, lo_open=True, why=f"p > d = {dim}")
        num("mu_factor", lo=0, lo_open=True)


def _bands(loc, exp, dim, params, raw):
    bands = default_bands(exp, dim, params)
    if raw is None:
        return bands
    if not isinstance(raw, dict):
        raise loc.error(RangeViolation, "'bands' must be an object", "bands")
    _check_keys(loc, raw, BAND_KEYS[exp], "bands.")
    out = {}
    for k, v in raw.items():
        path = f"bands.{k}"
        if isinstance(v, list):
            if len(v) != 2 or not all(isinstance(x, (int, float)) for x in v) or v[0] > v[1]:
                raise loc.error(RangeViolation, f"'{path}' must be [lo, hi] with lo <= hi", path)
        else:
            _number(loc, path, v, lo=0)
        out[k] = v
    return out


def parse_text(text: str, source: str | None = None) -> ExperimentConfig:
    loc = _Locator(text, source)
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", None, exc.lineno, source) from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object", None, 1, source)
    if "config" in raw and "manifest_version" in raw:
        raw = raw["config"]
    for key in ("experiment", "ensemble"):
        if key not in raw:
            raise MissingField(f"missing required field '{key}'", key, None, source)
    exp = _choice(loc, "experiment", raw["experiment"], EXPERIMENTS)
    params = PARAMS[exp]
    _check_keys(loc, raw, set(COMMON) | set(params))
    dim = _number(loc, "dim", raw.get("dim", 2), integer=True, lo=2, hi=3)
    N = _number(loc, "N", raw.get("N", DEFAULT_N[exp]), integer=True, lo=1)
    if exp == "annealed_moments" and N < 50:
        raise loc.error(RangeViolation, f"'N' = {N} below the minimum of 50 samples", "N")
    if exp in ("strong_fluct", "weak_fluct", "spectral_gap") and N < 2:
        raise loc.error(RangeViolation, "'N' must be >= 2", "N")
    seed = _number(loc, "master_seed", raw.get("master_seed", 0), integer=True, lo=0, hi=2 ** 64 - 1)
    jobs = _number(loc, "parallelism", raw.get("parallelism", 1), integer=True, lo=1)
    tol = _number(loc, "tolerance", raw.get("tolerance", 1e-10), lo=0, lo_open=True, hi=1e-4)
    out_dir = raw.get("output_dir")
    if out_dir is not None and not isinstance(out_dir, str):
        raise loc.error(RangeViolation, "'output_dir' must be a string", "output_dir")
    name = raw.get("name") or (Path(source).stem if source else exp)
    if not isinstance(name, str) or not re.fullmatch(r"[A-Za-z0-9_.-]+", name):
        raise loc.error(RangeViolation, "'name' must be a plain file name", "name")
    ensemble = _ensemble(loc, raw["ensemble"])
    p = copy.deepcopy(params)
    p.update({k: copy.deepcopy(v) for k, v in raw.items() if k in params})
    _validate_params(loc, exp, dim, p)
    bands = _bands(loc, exp, dim, p, raw.get("bands"))
    return ExperimentConfig(exp, ensemble, name, dim, N, seed, out_dir, jobs, tol, p, bands,
                            source, raw)


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"no such config file: {path}", source=str(path))
    return parse_text(path.read_text(encoding="utf-8"), str(path))
