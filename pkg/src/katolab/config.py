"""Campaign configuration: YAML file merged over defaults, validated before any work."""

from __future__ import annotations

import copy
import math
from pathlib import Path

import yaml

from .coefficients import CoefficientError, CoefficientKind, make_coefficients
from .lattice import GridError, make_grid

__all__ = ["ConfigError", "DEFAULTS", "SUBCOMMANDS", "load_config", "validate_config", "build_operator_spec"]

SCHEMA_VERSION = 1
SUBCOMMANDS = ("assemble", "heat", "offdiag", "lpq", "kato", "sqfn")


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "schema": SCHEMA_VERSION,
    "grid": {"dim": 2, "N": 16, "side_length": 1.0},
    "coefficients": {"kind": "BMO_LOG", "lambda0": 1.0, "Lambda0": None, "kappa": 0.5},
    "assemble": {"samples": 8, "sector_radii": [1.0, 100.0, 10000.0], "sector_angles": 5},
    "heat": {
        "oracle_times": [0.01, 0.1, 1.0],
        "oracle_tol": 1e-8,
        "fit_times": None,  # default: h^2 * {2, 4, 8, 16} clipped to sqrt(t) <= L/4
        "fit_times_l1": None,  # default: h^2 * {8, 16, 32, 64}, same clipping
        "conservation_tol": 1e-6,
        "beta_r2_min": 0.8,
        "offset_tol": 0.2,
        "holder_columns": 4,
    },
    "offdiag": {
        "families": ["SEMIGROUP", "T_LT", "SQRT_T_GRAD"],
        "times": None,  # default: h^2 * {1, 2, 4, 8}
        "separations": [2, 3, 4, 6, 8, 10],
        "box_cells": None,
        "angle_fraction": 0.5,
        "r2_min": 0.85,
        "adjoint_check": True,
    },
    "lpq": {
        "pairs": [["SEMIGROUP", 1, 2], ["SEMIGROUP", 1.5, 2], ["T_LT", 1, 2], ["T_LT", 1.5, 2],
                  ["SQRT_T_GRAD", 2, 2], ["SQRT_T_GRAD", 2, 2.5], ["SQRT_T_GRAD", 2, 3]],
        "times": None,  # default: geometric, 9 points in [max(h^2, 1e-3), L^2 / 16]
        "slope_pair": ["SEMIGROUP", 1, 2],
        "slope_tol": 0.15,
        "resolutions": None,
        "stability": 0.5,
        "epsilon_p": [2.25, 2.5, 3.0, 4.0],
        "epsilon_threshold": 10.0,
    },
    "kato": {
        "samples": 8,
        "family": "mixed",
        "ps": [1.5, 2.0, 3.0, 4.0],
        "oracle_tol": 1e-6,
        "square_tol": 1e-5,
        "riesz_tol": 1e-6,
        "resolutions": None,
        "stability": 0.5,
    },
    "sqfn": {
        "samples": 4,
        "family": "band",
        "kinds": ["GL", "GGRAD", "G1", "G2X", "G2T"],
        "ps": [1.5, 2.0, 3.0],
        "plancherel_tol": 1e-4,
        "identity_tol": 1e-8,
        "ratio": 1.1,
        "resolutions": None,
        "stability": 0.5,
    },
    "gates": {},
}


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        where = f"{path}{k}"
        if k not in base:
            raise ConfigError(f"unknown key {where!r}")
        if isinstance(base[k], dict) and k != "gates":
            if not isinstance(v, dict):
                raise ConfigError(f"{where!r} must be a mapping")
            out[k] = _merge(base[k], v, where + ".")
        else:
            out[k] = v
    return out


def _num_list(cfg, section, key, allow_none=True):
    v = cfg[section][key]
    if v is None and allow_none:
        return
    if not isinstance(v, list) or not v or not all(isinstance(x, (int, float)) and math.isfinite(x) for x in v):
        raise ConfigError(f"{section}.{key} must be a nonempty list of numbers")


def validate_config(raw) -> dict:
    """Merge ``raw`` over the defaults and check every field; raises :class:`ConfigError`."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    if "seed" not in raw:
        raise ConfigError("seed is mandatory")
    raw = dict(raw)
    seed = raw.pop("seed")
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    cfg = _merge(DEFAULTS, raw)
    cfg["seed"] = seed
    if cfg["schema"] != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema {cfg['schema']!r}")
    g = cfg["grid"]
    N = g["N"]
    if not isinstance(N, int) or N < 4 or N & (N - 1):
        raise ConfigError("grid.N must be a power of two >= 4")
    try:
        grid = make_grid(g["dim"], N, g["side_length"])
        c = cfg["coefficients"]
        CoefficientKind(c["kind"])
        make_coefficients(c["kind"], grid, lambda0=c["lambda0"], Lambda0=c["Lambda0"], kappa=c["kappa"])
    except (GridError, CoefficientError, ValueError, TypeError) as exc:
        raise ConfigError(f"invalid grid/coefficients: {exc}") from exc
    _num_list(cfg, "heat", "oracle_times", False)
    _num_list(cfg, "heat", "fit_times")
    _num_list(cfg, "heat", "fit_times_l1")
    _num_list(cfg, "offdiag", "times")
    _num_list(cfg, "offdiag", "separations", False)
    _num_list(cfg, "lpq", "times")
    _num_list(cfg, "lpq", "epsilon_p", False)
    _num_list(cfg, "kato", "ps", False)
    _num_list(cfg, "sqfn", "ps", False)
    for sec in ("heat", "offdiag", "lpq"):
        key = {"heat": "oracle_times"}.get(sec, "times")
        vals = cfg[sec][key]
        if vals is not None and any(t <= 0 for t in vals):
            raise ConfigError(f"{sec}.{key} must be positive")
    for fam in cfg["offdiag"]["families"]:
        _family(fam)
    for pair in cfg["lpq"]["pairs"] + [cfg["lpq"]["slope_pair"]]:
        if not (isinstance(pair, list) and len(pair) == 3):
            raise ConfigError("lpq pairs must be [family, p, q]")
        _family(pair[0])
        p, q = float(pair[1]), float(pair[2])
        if not 1 <= p <= q:
            raise ConfigError(f"lpq pair {pair}: need 1 <= p <= q")
    if any(not 1 < p < math.inf for p in cfg["kato"]["ps"] + cfg["sqfn"]["ps"]):
        raise ConfigError("kato.ps and sqfn.ps must lie in (1, inf)")
    from .squarefn import SquareFnKind

    for k in cfg["sqfn"]["kinds"]:
        try:
            SquareFnKind(k)
        except ValueError as exc:
            raise ConfigError(f"unknown square-function kind {k!r}") from exc
    for sec in ("lpq", "kato", "sqfn"):
        res = cfg[sec]["resolutions"]
        if res is not None:
            if not isinstance(res, list) or not all(isinstance(n, int) and n >= 4 and not n & (n - 1) for n in res):
                raise ConfigError(f"{sec}.resolutions must be a list of powers of two")
    if cfg["kato"]["family"] not in ("band", "bumps", "mixed") or cfg["sqfn"]["family"] not in ("band", "bumps", "mixed"):
        raise ConfigError("test family must be band, bumps or mixed")
    for name, mode in cfg["gates"].items():
        if mode not in ("gate", "record"):
            raise ConfigError(f"gates.{name} must be 'gate' or 'record'")
    return cfg


def _family(name):
    from .bounds import FamilyTag

    try:
        FamilyTag(name)
    except ValueError as exc:
        raise ConfigError(f"unknown family {name!r}") from exc


def load_config(path, seed_override: int | None = None) -> dict:
    """Read YAML at ``path``; ``seed_override`` replaces the config seed."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML: {exc}") from exc
    if raw is None:
        raw = {}
    if seed_override is not None and isinstance(raw, dict):
        raw["seed"] = int(seed_override)
    return validate_config(raw)


def build_operator_spec(cfg: dict, N: int | None = None):
    """``(grid, coefficients)`` for the configured operator, optionally at another resolution."""
    g = cfg["grid"]
    grid = make_grid(g["dim"], N or g["N"], g["side_length"])
    c = cfg["coefficients"]
    coeffs = make_coefficients(c["kind"], grid, lambda0=c["lambda0"], Lambda0=c["Lambda0"], kappa=c["kappa"])
    return grid, coeffs
