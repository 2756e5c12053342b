"""
Run configuration: a strict sectioned ``key = value`` format.

Grammar::

    # comment (also allowed after a value)
    [section]
    key = value

Lists are comma separated (``extent = 1.0, 2.0``). Unknown sections, unknown
keys and repeated keys are errors carrying the line number. Every key and its
default is listed in ``SCHEMA``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, GridError, MotilityError
from .grid import Grid, build_grid
from .motility import PRESET_PARAMS, MotilityFunction, preset

INITIAL_KINDS = ("flat", "cosine", "gaussian", "random", "file")
CHECK_NAMES = ("mass", "v_floor", "elliptic_sup", "invariant_region", "u_bounds", "v_ceiling",
               "ode_domination", "liapunov", "stabilization")
CORRUPTIONS = ("none", "nonconservative", "halve_V", "floor")


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",")]


def _ints(text: str) -> list[int]:
    out = []
    for x in text.split(","):
        value = float(x)
        if value != int(value):
            raise ValueError(f"expected an integer, got {x.strip()!r}")
        out.append(int(value))
    return out


def _int(text: str) -> int:
    (value,) = _ints(text)
    return value


def _optional_int(text: str):
    return None if text.strip().lower() in ("auto", "none") else _int(text)


def _str(text: str) -> str:
    return text.strip()


# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple]] = {
    "grid": {"dimension": (_int, 1), "extent": (_floats, [1.0]), "cells": (_ints, [64])},
    "motility": {"preset": (_str, None), "k": (float, None), "chi": (float, None),
                 "a": (float, None), "b": (float, None)},
    "initial": {"kind": (_str, "cosine"), "level": (float, 1.0), "amplitude": (float, 0.5),
                "mode": (_int, 1), "center": (_floats, [0.5]), "width": (float, 0.1),
                "height": (float, 1.0), "floor": (float, 0.1), "path": (_str, "")},
    "run": {"T": (float, None), "sigma": (float, 0.9), "dt_min": (float, 1e-12),
            "dt_max": (float, math.inf), "max_steps": (_int, 100_000_000),
            "cadence": (_optional_int, None), "seed": (_int, 0), "solver": (_str, "direct")},
    "checks": {**{name: (_bool, name != "stabilization") for name in CHECK_NAMES},
               "delta_stab": (float, 1e-3)},
    "output": {"dir": (_str, "out"), "snapshots": (_int, 2)},
    "debug": {"corrupt": (_str, "none")},
}


def parse_sections(text: str) -> dict[str, dict[str, tuple[str, int]]]:
    """Raw ``{section: {key: (value_text, line)}}`` with grammar checks only."""
    raw: dict[str, dict[str, tuple[str, int]]] = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if body.startswith("["):
            if not body.endswith("]"):
                raise ConfigError(f"malformed section header {body!r}", lineno)
            section = body[1:-1].strip()
            if section not in SCHEMA and section != "sweep":
                raise ConfigError(f"unknown section [{section}]", lineno)
            if section in raw:
                raise ConfigError(f"section [{section}] appears twice", lineno)
            raw[section] = {}
            continue
        if "=" not in body:
            raise ConfigError(f"expected 'key = value', got {body!r}", lineno)
        if section is None:
            raise ConfigError("assignment before any [section] header", lineno)
        key, value = (part.strip() for part in body.split("=", 1))
        if not key or not value:
            raise ConfigError(f"empty key or value in {body!r}", lineno)
        if section != "sweep" and key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]", lineno, f"{section}.{key}")
        if key in raw[section]:
            raise ConfigError(f"key {key!r} repeated in [{section}]", lineno, f"{section}.{key}")
        raw[section][key] = (value, lineno)
    return raw


@dataclass(frozen=True)
class RunConfig:
    grid: dict
    motility: dict
    initial: dict
    run: dict
    checks: dict
    output: dict
    debug: dict = field(default_factory=lambda: {"corrupt": "none"})

    def to_dict(self) -> dict:
        return asdict(self)

    def build_grid(self) -> Grid:
        return build_grid(self.grid["dimension"], self.grid["extent"], self.grid["cells"])

    def build_motility(self) -> MotilityFunction:
        return preset(self.motility["preset"], **self.motility["params"])

    @property
    def enabled_checks(self) -> list[str]:
        return [name for name in CHECK_NAMES if self.checks[name]]


def parse_config(text: str, overrides: dict[str, str] | None = None) -> RunConfig:
    """Parse and validate; ``overrides`` maps ``section.key`` to value text."""
    raw = parse_sections(text)
    raw.pop("sweep", None)
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"unknown override {dotted!r}", field=dotted)
        raw.setdefault(section, {})[key] = (str(value), None)

    values: dict[str, dict] = {}
    for section, keys in SCHEMA.items():
        given = raw.get(section, {})
        out = {}
        for key, (parser, default) in keys.items():
            if key in given:
                text_value, lineno = given[key]
                try:
                    out[key] = parser(text_value)
                except ValueError as exc:
                    raise ConfigError(f"bad value for {section}.{key}: {exc}", lineno, f"{section}.{key}") from None
            else:
                out[key] = default
        values[section] = out
    return _validate(values, raw)


def _line(raw, section, key):
    return raw.get(section, {}).get(key, (None, None))[1]


def _validate(values: dict, raw) -> RunConfig:
    grid = values["grid"]
    dim = grid["dimension"]
    if dim not in (1, 2):
        raise ConfigError("dimension must be 1 or 2", _line(raw, "grid", "dimension"), "grid.dimension")
    for key in ("extent", "cells"):
        if len(grid[key]) == 1 and dim == 2:
            grid[key] = grid[key] * 2
        if len(grid[key]) != dim:
            raise ConfigError(f"grid.{key} needs {dim} entries", _line(raw, "grid", key), f"grid.{key}")
    if any(n < 3 for n in grid["cells"]):
        raise ConfigError("cells ≥ 3 required", _line(raw, "grid", "cells"), "grid.cells")
    try:
        build_grid(dim, grid["extent"], grid["cells"])
    except GridError as exc:
        raise ConfigError(str(exc), _line(raw, "grid", "extent"), "grid.extent") from None

    mot = values["motility"]
    name = mot.pop("preset")
    if name is None:
        raise ConfigError("motility.preset is required", field="motility.preset")
    if name not in PRESET_PARAMS:
        raise ConfigError(f"unknown preset {name!r}", _line(raw, "motility", "preset"), "motility.preset")
    given = {k: v for k, v in mot.items() if v is not None}
    extra = set(given) - set(PRESET_PARAMS[name])
    if extra:
        key = sorted(extra)[0]
        raise ConfigError(f"preset {name!r} does not take {key!r}", _line(raw, "motility", key), f"motility.{key}")
    try:
        gamma = preset(name, **given)
    except MotilityError as exc:
        raise ConfigError(str(exc), _line(raw, "motility", "preset"), "motility") from None
    motility = {"preset": name, "params": dict(gamma.params)}

    run = values["run"]
    if run["T"] is None:
        raise ConfigError("run.T is required", field="run.T")
    if not (run["T"] >= 0 and math.isfinite(run["T"])):
        raise ConfigError("run.T must be finite and nonnegative", _line(raw, "run", "T"), "run.T")
    if not (0 < run["sigma"] <= 1):
        raise ConfigError("run.sigma must lie in (0, 1]", _line(raw, "run", "sigma"), "run.sigma")
    if not (0 < run["dt_min"] <= run["dt_max"]):
        raise ConfigError("need 0 < dt_min <= dt_max", _line(raw, "run", "dt_min"), "run.dt_min")
    if run["max_steps"] < 1:
        raise ConfigError("run.max_steps must be positive", _line(raw, "run", "max_steps"), "run.max_steps")
    if run["cadence"] is not None and run["cadence"] < 1:
        raise ConfigError("run.cadence must be positive", _line(raw, "run", "cadence"), "run.cadence")
    if run["solver"] not in ("direct", "cg"):
        raise ConfigError("run.solver must be direct or cg", _line(raw, "run", "solver"), "run.solver")

    checks = values["checks"]
    if not checks["delta_stab"] > 0:
        raise ConfigError("checks.delta_stab must be positive", _line(raw, "checks", "delta_stab"), "checks.delta_stab")
    if values["output"]["snapshots"] < 0:
        raise ConfigError("output.snapshots must be >= 0", _line(raw, "output", "snapshots"), "output.snapshots")
    if values["debug"]["corrupt"] not in CORRUPTIONS:
        raise ConfigError(f"debug.corrupt must be one of {CORRUPTIONS}", _line(raw, "debug", "corrupt"),
                          "debug.corrupt")

    initial = values["initial"]
    if initial["kind"] not in INITIAL_KINDS:
        raise ConfigError(f"initial.kind must be one of {INITIAL_KINDS}", _line(raw, "initial", "kind"),
                          "initial.kind")
    if len(initial["center"]) == 1 and dim == 2:
        initial["center"] = initial["center"] * 2
    cfg = RunConfig(grid, motility, initial, run, checks, values["output"], values["debug"])
    u = initial_condition(cfg)
    if not np.all(np.isfinite(u)) or u.min() < 0:
        raise ConfigError("initial condition must be finite and nonnegative", field="initial")
    if np.sum(u) <= 0:
        raise ConfigError("initial condition must have positive mass", field="initial")
    return cfg


def load_config(path, overrides: dict[str, str] | None = None) -> RunConfig:
    return parse_config(Path(path).read_text(), overrides)


def initial_condition(cfg: RunConfig) -> np.ndarray:
    """Evaluate the configured u_in on the grid's cell centers."""
    g = cfg.build_grid()
    init = cfg.initial
    kind = init["kind"]
    X = g.coordinates()
    if kind == "flat":
        return g.field(init["level"])
    if kind == "cosine":
        shape = np.ones(g.shape)
        for x, lo, L in zip(X, g.lower, g.extent):
            shape = shape * np.cos(init["mode"] * np.pi * (x - lo) / L)
        return init["level"] + init["amplitude"] * shape
    if kind == "gaussian":
        r2 = sum((x - c) ** 2 for x, c in zip(X, init["center"]))
        return init["floor"] + init["height"] * np.exp(-r2 / (2.0 * init["width"] ** 2))
    if kind == "random":
        rng = np.random.default_rng(cfg.run["seed"])
        return init["floor"] + init["amplitude"] * rng.random(g.shape)
    path = Path(init["path"])
    if not path.is_file():
        raise ConfigError(f"initial.path {str(path)!r} not found", field="initial.path")
    u = np.loadtxt(path, delimiter=",", comments="#", ndmin=1)
    if u.size != g.size:
        raise ConfigError(f"initial.path holds {u.size} values, grid has {g.size} cells", field="initial.path")
    return u.reshape(g.shape)


def render_config(cfg: RunConfig) -> str:
    """The resolved configuration in the input grammar."""
    def fmt(value):
        if isinstance(value, bool):
            return "true" if value else "false"
        if isinstance(value, (list, tuple)):
            return ", ".join(fmt(v) for v in value)
        if value is None:
            return "auto"
        if isinstance(value, float):
            return repr(value)
        return str(value)

    lines = []
    for section in SCHEMA:
        lines.append(f"[{section}]")
        if section == "motility":
            lines.append(f"preset = {cfg.motility['preset']}")
            for key, value in sorted(cfg.motility["params"].items()):
                lines.append(f"{key} = {fmt(value)}")
        else:
            for key, value in getattr(cfg, section).items():
                if value != "":
                    lines.append(f"{key} = {fmt(value)}")
        lines.append("")
    return "\n".join(lines)
