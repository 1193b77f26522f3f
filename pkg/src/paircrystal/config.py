"""Experiment configuration files (TOML) and their schema.

A config is a flat TOML file: optional top-level ``command`` and
``description`` plus one table per concern.  Every key is checked against
:data:`SCHEMA` before any computation; unknown sections or keys are errors.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .dynamics import STANDARD_INIT

COMMANDS = ("simulate", "find-orbit", "unit-cell", "poincare", "lyapunov", "quantum")
FORMATS = ("csv", "json")


class ConfigError(ValueError):
    pass


def _num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _pos(v):
    return v > 0


def _nonneg(v):
    return v >= 0


def _f(default, check=None):
    return ("float", default, check)


def _i(default, check=None):
    return ("int", default, check)


def _b(default):
    return ("bool", default, None)


def _s(default, choices=None):
    return ("str", default, choices)


def _vec(default, n):
    return ("vec", default, n)


_INITIAL = {name: _f(getattr(STANDARD_INIT, name)) for name in ("Mx", "My", "Mz", "X", "P")}

SCHEMA = {
    "output": {
        "dir": _s("out"),
        "format": _s("csv", FORMATS),
        "plot": _b(True),
    },
    "initial": _INITIAL,
    "integrator": {
        "method": _s("adaptive_rk", ("adaptive_rk", "strang_split")),
        "rel_tol": _f(1e-10, _pos),
        "abs_tol": _f(1e-12, _pos),
        "max_step": _f(0.5, _pos),
        "fixed_dt": _f(1e-3, _pos),
    },
    "scales": {
        "m": _f(1.0, _pos),
        "e": _f(1.0),
        "gamma": _f(1.0),
        "p_c": _f(0.0),
    },
    "simulate": {
        "tau_end": _f(100 * math.pi, _pos),
        "sample_dt": _f(math.pi / 100, _pos),
        "pair_number": _b(False),
        "observable": _s("Mx", ("Mx", "My", "Mz", "X", "P", "H", "Msq", "N_p")),
    },
    "window": {
        "X0_min": _f(-0.06),
        "X0_max": _f(-0.03),
        "grid_n": _i(41, _pos),
        "tau_horizon": _f(200 * math.pi, _pos),
    },
    "refine": {
        "T_box": _f(0.02, _pos),
        "X_box": _f(0.01, _pos),
        "n_pre": _i(41, lambda v: v >= 3),
    },
    "thresholds": {
        "periodic": _f(1e-3, _pos),
        "quasiperiodic": _f(1e-1, _pos),
        "chaos_lambda": _f(0.01, _pos),
    },
    "find_orbit": {
        "lyapunov_tau": _f(0.0, _nonneg),
    },
    "unit_cell": {
        "T": _f(20 * math.pi, _pos),
        "n_shifts": _i(4, lambda v: v >= 2),
        "component": _s("Mx", ("Mx", "My", "Mz", "X", "P")),
        "sample_dt": _f(math.pi / 100, _pos),
    },
    "poincare": {
        "tau_end": _f(100 * math.pi, _pos),
        "direction": _s("both", ("both", "upward", "downward")),
        "eps": _f(1e-3, _pos),
        "checkpoints": _vec([], None),
    },
    "lyapunov": {
        "tau_total": _f(2000.0, _pos),
        "renorm_dt": _f(math.pi / 2, _pos),
        "delta0": _f(1e-8, _pos),
        "perturbation": _vec([1.0, 1.0, 1.0, 1.0, 1.0], 5),
        "rel_tol": _f(1e-12, _pos),
        "abs_tol": _f(1e-14, _pos),
    },
    "quantum": {
        "energy": _f(2.0),
        "fixed": _vec([1.0, 0.0, 0.0, 0.0], 4),
        "free_slot": _s("dphi2", ("phi1", "dphi1", "phi2", "dphi2")),
        "y_max": _f(12.0, _pos),
        "bracket": _vec([-1.0, 0.0], 2),
        "coupling": _f(2.0 ** (2.0 / 3.0)),
        "tol": _f(1e-10, _pos),
        "dy": _f(0.005, _pos),
        "mirror": _b(False),
    },
}

COMMAND_SECTIONS = {
    "simulate": ("initial", "integrator", "scales", "simulate"),
    "find-orbit": ("initial", "integrator", "window", "refine", "thresholds", "find_orbit", "lyapunov"),
    "unit-cell": ("initial", "integrator", "unit_cell", "thresholds"),
    "poincare": ("initial", "integrator", "poincare"),
    "lyapunov": ("initial", "lyapunov"),
    "quantum": ("quantum",),
}


def _coerce(section, key, rule, value):
    kind, _, extra = rule
    where = f"[{section}].{key}"
    if kind == "float":
        if not _num(value):
            raise ConfigError(f"{where} must be a number, got {value!r}")
        value = float(value)
        if not math.isfinite(value):
            raise ConfigError(f"{where} must be finite")
        if extra is not None and not extra(value):
            raise ConfigError(f"{where} out of range: {value!r}")
    elif kind == "int":
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{where} must be an integer, got {value!r}")
        if extra is not None and not extra(value):
            raise ConfigError(f"{where} out of range: {value!r}")
    elif kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be true or false, got {value!r}")
    elif kind == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string, got {value!r}")
        if extra is not None and value not in extra:
            raise ConfigError(f"{where} must be one of {list(extra)}, got {value!r}")
    elif kind == "vec":
        if not isinstance(value, list) or not all(_num(v) for v in value):
            raise ConfigError(f"{where} must be a list of numbers")
        if extra is not None and len(value) != extra:
            raise ConfigError(f"{where} must have {extra} entries")
        value = [float(v) for v in value]
    return value


def validate(raw: dict, command: str) -> dict:
    """Fill defaults and type-check ``raw`` for ``command``; returns a new dict."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    raw = dict(raw)
    declared = raw.pop("command", command)
    if declared != command:
        raise ConfigError(f"config is for {declared!r}, not {command!r}")
    description = raw.pop("description", "")
    if not isinstance(description, str):
        raise ConfigError("description must be a string")
    allowed = ("output",) + COMMAND_SECTIONS[command]
    out = {"command": command, "description": description}
    for section in raw:
        if section not in allowed:
            raise ConfigError(f"unknown section [{section}] for {command}")
        if not isinstance(raw[section], dict):
            raise ConfigError(f"[{section}] must be a table")
    for section in allowed:
        given = raw.get(section, {})
        rule = SCHEMA[section]
        unknown = sorted(set(given) - set(rule))
        if unknown:
            raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")
        out[section] = {
            key: _coerce(section, key, s, given[key]) if key in given else copy.copy(s[1])
            for key, s in rule.items()
        }
    _cross_checks(out)
    return out


def _cross_checks(cfg):
    if "window" in cfg and cfg["window"]["X0_min"] > cfg["window"]["X0_max"]:
        raise ConfigError("[window] X0_min must not exceed X0_max")
    if "quantum" in cfg:
        lo, hi = cfg["quantum"]["bracket"]
        if not lo < hi:
            raise ConfigError("[quantum] bracket must satisfy lo < hi")
    if "lyapunov" in cfg and cfg["command"] == "lyapunov":
        ly = cfg["lyapunov"]
        if ly["tau_total"] < 100 * ly["renorm_dt"]:
            raise ConfigError("[lyapunov] tau_total must be at least 100 renorm_dt")
        if not any(ly["perturbation"]):
            raise ConfigError("[lyapunov] perturbation must be non-zero")
    th = cfg.get("thresholds")
    if th and th["periodic"] > th["quasiperiodic"]:
        raise ConfigError("[thresholds] periodic must not exceed quasiperiodic")


def load_config(path, command: str) -> dict:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return validate(raw, command)


def config_hash(cfg: dict) -> str:
    """sha256 of the validated config, independent of key order and output location."""
    body = {k: v for k, v in cfg.items() if k != "output"}
    blob = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
