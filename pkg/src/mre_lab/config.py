"""JSON experiment configuration: strict parsing into SimConfig.

Unknown keys are rejected by name so typos in sweep configs fail loudly.
"""

from __future__ import annotations

import json
import math

from .solver import InitialData, SimConfig
from .spectral import Grid


class ConfigError(ValueError):
    pass


_TOP_KEYS = {
    "dim", "n", "gamma", "t_end", "cfl", "dt_max", "dt_fixed",
    "output_every", "initial_data", "diagnostics", "seed",
}
_REQUIRED = ("dim", "n", "gamma", "t_end", "initial_data")

_RECIPE_PARAMS = {
    "shear": {"amplitude", "mode"},
    "random_bandlimited": {"kmax", "amplitude"},
    "e1_plus_perturbation": {"eta", "kmax"},
    "abc": {"a", "b", "c", "amplitude", "eta", "kmax"},
    "modes": {"modes"},
}

_DIAG_KEYS = {"p_list", "alpha_list"}


def _number(obj: dict, key: str, cls=float):
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"key '{key}' must be a number, got {type(v).__name__}")
    return cls(v)


def _exponent(v, key: str) -> float:
    if v == "inf":
        return math.inf
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"entries of '{key}' must be numbers or \"inf\"")
    return float(v)


def validate_config(doc: dict) -> SimConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    for k in doc:
        if k not in _TOP_KEYS:
            raise ConfigError(f"unknown key '{k}'")
    for k in _REQUIRED:
        if k not in doc:
            raise ConfigError(f"missing required key '{k}'")

    dim = _number(doc, "dim", int)
    n = _number(doc, "n", int)
    try:
        grid = Grid(dim, n)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    gamma = _number(doc, "gamma")
    if gamma < 0:
        raise ConfigError("gamma must be >= 0")
    t_end = _number(doc, "t_end")
    if t_end <= 0:
        raise ConfigError("t_end must be positive")

    idata = doc["initial_data"]
    if not isinstance(idata, dict) or "recipe" not in idata:
        raise ConfigError("initial_data must be an object with a 'recipe' key")
    recipe = idata["recipe"]
    if recipe not in _RECIPE_PARAMS:
        raise ConfigError(f"unknown initial data recipe '{recipe}'")
    params = {k: v for k, v in idata.items() if k != "recipe"}
    for k in params:
        if k not in _RECIPE_PARAMS[recipe]:
            raise ConfigError(f"unknown key '{k}' for recipe '{recipe}'")

    diag = doc.get("diagnostics", {})
    if not isinstance(diag, dict):
        raise ConfigError("diagnostics must be an object")
    for k in diag:
        if k not in _DIAG_KEYS:
            raise ConfigError(f"unknown key '{k}' in diagnostics")
    p_list = tuple(_exponent(v, "p_list") for v in diag.get("p_list", [2, 4]))
    alpha_list = tuple(_exponent(v, "alpha_list") for v in diag.get("alpha_list", [1]))
    for p in p_list:
        if p < 1:
            raise ConfigError("entries of 'p_list' must be >= 1")

    cfl = _number(doc, "cfl") if "cfl" in doc else 0.5
    if not 0 < cfl <= 1:
        raise ConfigError("cfl must lie in (0, 1]")
    dt_max = _number(doc, "dt_max") if "dt_max" in doc else 0.05
    if dt_max <= 0:
        raise ConfigError("dt_max must be positive")
    dt_fixed = _number(doc, "dt_fixed") if "dt_fixed" in doc else None
    if dt_fixed is not None and dt_fixed <= 0:
        raise ConfigError("dt_fixed must be positive")
    output_every = _number(doc, "output_every") if "output_every" in doc else None
    if output_every is not None and output_every <= 0:
        raise ConfigError("output_every must be positive")
    seed = _number(doc, "seed", int) if "seed" in doc else 0

    return SimConfig(
        grid=grid,
        gamma=gamma,
        t_end=t_end,
        initial_data=InitialData(recipe, params),
        cfl=cfl,
        dt_max=dt_max,
        dt_fixed=dt_fixed,
        output_every=output_every,
        diagnostics_p_list=p_list,
        diagnostics_alpha_list=alpha_list,
        rng_seed=seed,
    )


def parse_config(path) -> SimConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    return validate_config(doc)


def emit_config(config: SimConfig) -> dict:
    """Dict mirror of a SimConfig; parse(emit(c)) reproduces c exactly."""
    def clean(x: float):
        return "inf" if math.isinf(x) else x

    doc = {
        "dim": config.grid.d,
        "n": config.grid.n,
        "gamma": config.gamma,
        "t_end": config.t_end,
        "cfl": config.cfl,
        "dt_max": config.dt_max,
        "output_every": config.cadence,
        "initial_data": {"recipe": config.initial_data.recipe, **config.initial_data.params},
        "diagnostics": {
            "p_list": [clean(p) for p in config.diagnostics_p_list],
            "alpha_list": [clean(a) for a in config.diagnostics_alpha_list],
        },
        "seed": config.rng_seed,
    }
    if config.dt_fixed is not None:
        doc["dt_fixed"] = config.dt_fixed
    return doc
