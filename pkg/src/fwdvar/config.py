"""Run configuration: a flat JSON object with a strict schema.

Values are layered as profile defaults, then the config file, then
command-line flags.  Unknown keys, wrong types and out-of-range values are
rejected with a :class:`ConfigError` naming the key.
"""

from __future__ import annotations

import difflib
import hashlib
import json
import math
import os
from dataclasses import dataclass

from .errors import ConfigError
from .kernels import Family

PROFILES = {
    "desk": {"n": 2000, "replications": 300},
    "paper": {"n": 10000, "replications": 1000, "epsilon_sweep": [1e-2, 1e-3, 1e-4, 1e-5]},
}


def _number(key, v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"config key '{key}': expected a number, got {type(v).__name__}")
    v = float(v)
    if not math.isfinite(v):
        raise ConfigError(f"config key '{key}': must be finite, got {v}")
    return v


def _integer(key, v):
    if isinstance(v, bool) or not (isinstance(v, int) or (isinstance(v, float) and v.is_integer())):
        raise ConfigError(f"config key '{key}': expected an integer, got {v!r}")
    return int(v)


def _boolean(key, v):
    if not isinstance(v, bool):
        raise ConfigError(f"config key '{key}': expected true or false, got {v!r}")
    return v


def _string(key, v):
    if not isinstance(v, str):
        raise ConfigError(f"config key '{key}': expected a string, got {type(v).__name__}")
    return v


def _number_list(key, v):
    if not isinstance(v, (list, tuple)):
        raise ConfigError(f"config key '{key}': expected a list of numbers, got {type(v).__name__}")
    return [_number(key, x) for x in v]


def _positive(key, v):
    v = _number(key, v)
    if not v > 0:
        raise ConfigError(f"config key '{key}': must be > 0, got {v}")
    return v


def _at_least(lo):
    def check(key, v):
        v = _integer(key, v)
        if v < lo:
            raise ConfigError(f"config key '{key}': must be >= {lo}, got {v}")
        return v

    return check


def _optional(check):
    def wrapped(key, v):
        return None if v is None else check(key, v)

    return wrapped


def _epsilon(key, v):
    v = _number(key, v)
    if not v > 0:
        raise ConfigError(
            f"config key '{key}': epsilon must be > 0 (the regularized contrast is only defined for epsilon > 0), got {v:g}"
        )
    return v


def _epsilon_list(key, v):
    return [_epsilon(key, x) for x in _number_list(key, v)]


def _kernel(key, v):
    v = _string(key, v)
    try:
        return Family(v).value
    except ValueError:
        raise ConfigError(f"config key '{key}': unknown kernel {v!r}; choose one of {[f.value for f in Family]}") from None


def _level(key, v):
    v = _number(key, v)
    if not 0 < v < 1:
        raise ConfigError(f"config key '{key}': must lie in (0, 1), got {v}")
    return v


def _seed(key, v):
    v = _integer(key, v)
    if not 0 <= v < 2**64:
        raise ConfigError(f"config key '{key}': must be a 64-bit unsigned integer, got {v}")
    return v


def _maturities(key, v):
    v = _number_list(key, v)
    if len(v) < 2 or v[0] != 0 or any(b <= a for a, b in zip(v, v[1:])) or v[-1] > 1:
        raise ConfigError(f"config key '{key}': must start at 0, increase strictly and end at or below 1")
    return v


def _fixed(key, v):
    if not isinstance(v, dict):
        raise ConfigError(f"config key '{key}': expected an object mapping parameter names to values")
    return {_string(key, k): _number(f"{key}.{k}", x) for k, x in v.items()}


def _v0(key, v):
    if not isinstance(v, dict):
        return _positive(key, v)
    if set(v) != {"knots", "values"}:
        raise ConfigError(f"config key '{key}': a curve needs exactly the fields 'knots' and 'values'")
    knots, values = _number_list(f"{key}.knots", v["knots"]), _number_list(f"{key}.values", v["values"])
    if len(knots) != len(values) or len(knots) < 1:
        raise ConfigError(f"config key '{key}': 'knots' and 'values' must be non-empty lists of equal length")
    if any(b <= a for a, b in zip(knots, knots[1:])):
        raise ConfigError(f"config key '{key}.knots': must increase strictly")
    if any(not x > 0 for x in values):
        raise ConfigError(f"config key '{key}.values': forward variances must be > 0")
    return {"knots": knots, "values": values}


def _path(key, v):
    return os.fspath(_string(key, v))


# key -> (checker, default, help)
SCHEMA = {
    "kernel": (_kernel, "exponential", "kernel family"),
    "shift": (_optional(_positive), None, "shift c of the power-law kernels (default 0.01)"),
    "theta0": (_number_list, [1.0, -1.0], "true parameter for simulation and studentization"),
    "v0": (_v0, 1.0, "initial forward variance: a level, or {knots, values} interpolated linearly"),
    "n": (_at_least(1), 2000, "number of time steps"),
    "d": (_optional(_at_least(1)), None, "number of maturities (default ceil(n^0.95))"),
    "maturities": (_optional(_maturities), None, "explicit maturity grid, overrides d"),
    "refinement": (_at_least(1), 1, "u-mesh refinement"),
    "seed": (_seed, 0, "seed of the Brownian path or master seed of the study"),
    "box_lower": (_number_list, [0.01, -3.0], "lower corner of the parameter box"),
    "box_upper": (_number_list, [10.0, 3.0], "upper corner of the parameter box"),
    "epsilon": (_epsilon, 1e-3, "regularization level"),
    "multistart_count": (_at_least(1), 9, "multistart points"),
    "simplex_tolerance": (_positive, 1e-6, "simplex tolerance"),
    "max_iterations": (_at_least(0), 2000, "simplex iteration cap"),
    "grid_refine": (_boolean, False, "refine the multistart grid around the best point"),
    "descents": (_at_least(0), 2, "simplex descents from the best multistart points"),
    "profile_scale": (_boolean, True, "profile the kernel scale out exactly"),
    "fixed": (_fixed, {}, "parameters held fixed, by name"),
    "replications": (_at_least(1), 300, "Monte Carlo replications"),
    "epsilon_sweep": (_epsilon_list, [], "regularization levels of a Monte Carlo sweep"),
    "level": (_level, 0.95, "confidence level"),
    "surface": (_optional(_path), None, "input surface CSV"),
    "chain": (_optional(_path), None, "input option chain CSV"),
    "strict": (_boolean, False, "strict surface validation"),
    "out_dir": (_path, ".", "output directory"),
    "workers": (_at_least(1), 1, "worker processes"),
    "verbosity": (_at_least(0), 0, "log verbosity (0, 1 or 2)"),
}

# keys that change where and how fast a run happens, not what it computes
PLUMBING_KEYS = frozenset({"out_dir", "workers", "verbosity"})

READ_PATHS = {"estimate": "surface", "infer": "surface", "validate": "surface", "ingest": "chain"}


@dataclass(frozen=True)
class RunConfig:
    """Validated effective configuration.  ``explicit`` lists keys set by a file or flag."""

    values: dict
    explicit: frozenset
    profile: str

    def __getitem__(self, key):
        return self.values[key]

    def __getattr__(self, key):
        try:
            return self.values[key]
        except KeyError:
            raise AttributeError(key) from None

    def canonical_json(self) -> str:
        """Sorted, compact JSON of every key that affects numeric output."""
        semantic = {k: v for k, v in self.values.items() if k not in PLUMBING_KEYS}
        return json.dumps(semantic, sort_keys=True, separators=(",", ":"))

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]


def _check(key, value):
    if key not in SCHEMA:
        hint = difflib.get_close_matches(key, SCHEMA, n=1)
        extra = f"; did you mean '{hint[0]}'?" if hint else ""
        raise ConfigError(f"unknown config key '{key}'{extra}")
    return SCHEMA[key][0](key, value)


def load_config_file(path) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return data


def parse_config(source=None, overrides: dict | None = None, profile: str = "desk", command: str | None = None) -> RunConfig:
    """Build the effective configuration.

    Parameters
    ----------
    source : path or dict, optional
        Config file, or an already-loaded mapping.
    overrides : dict, optional
        Flag values; ``None`` entries are ignored.
    profile : {'desk', 'paper'}
        Default set the file and flags are layered on.
    command : str, optional
        Subcommand; used to check that its input file exists.
    """
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose one of {sorted(PROFILES)}")
    values = {k: spec[1] for k, spec in SCHEMA.items()}
    values.update(PROFILES[profile])
    explicit = set()
    layers = []
    if source is not None:
        layers.append(load_config_file(source) if not isinstance(source, dict) else dict(source))
    layers.append({k: v for k, v in (overrides or {}).items() if v is not None})
    for layer in layers:
        for key, value in layer.items():
            values[key] = _check(key, value)
            explicit.add(key)
    values = {k: (list(v) if isinstance(v, tuple) else v) for k, v in values.items()}
    _cross_check(values)
    if command in READ_PATHS:
        key = READ_PATHS[command]
        if values[key] is None:
            raise ConfigError(f"config key '{key}': the {command} subcommand needs an input file")
        if not os.path.isfile(values[key]):
            raise ConfigError(f"config key '{key}': file {values[key]} does not exist")
    return RunConfig(values, frozenset(explicit), profile)


def _cross_check(values):
    q = 2
    for key in ("theta0", "box_lower", "box_upper"):
        if len(values[key]) != q:
            raise ConfigError(f"config key '{key}': expected {q} entries for kernel {values['kernel']}, got {len(values[key])}")
    if any(lo > hi for lo, hi in zip(values["box_lower"], values["box_upper"])):
        raise ConfigError("config key 'box_lower': exceeds box_upper")
    if values["kernel"] == Family.EXPONENTIAL.value and values["shift"] is not None:
        raise ConfigError("config key 'shift': the exponential kernel takes no shift")
    names = ("eta", "H") if values["kernel"] == Family.SHIFTED_POWER_LAW.value else ("eta", "xi")
    for name in values["fixed"]:
        if name not in names:
            raise ConfigError(f"config key 'fixed.{name}': unknown parameter; kernel parameters are {list(names)}")
