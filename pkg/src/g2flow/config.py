"""Run configuration: a flat INI-style text format with strict validation.

Every key is checked against a per-section schema before any grid storage is
allocated; unknown sections, unknown keys, malformed values and out-of-range
values are all rejected with a ConfigError naming the offender.

Components and axes are 1-based in config files (matching e1..e7) and 0-based
in code.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field

import numpy as np

from . import families as fam
from . import grid as gr
from .flow import Background, FlowControls


class ConfigError(ValueError):
    """Invalid run configuration."""


# ---------------------------------------------------------------------------
# typed option parsing


def _parse_int(raw, lo=None, hi=None):
    try:
        v = int(raw)
    except ValueError:
        raise ConfigError(f"expected an integer, got {raw!r}")
    if lo is not None and v < lo or hi is not None and v > hi:
        raise ConfigError(f"integer {v} out of range [{lo}, {hi}]")
    return v


def _parse_float(raw, lo=None):
    try:
        v = float(raw)
    except ValueError:
        raise ConfigError(f"expected a number, got {raw!r}")
    if lo is not None and v < lo:
        raise ConfigError(f"number {v} must be >= {lo}")
    return v


def _parse_floats(raw, count=None):
    vals = [_parse_float(x) for x in raw.split()]
    if count is not None and len(vals) != count:
        raise ConfigError(f"expected {count} numbers, got {len(vals)}")
    return vals


def _parse_ints(raw, count=None):
    vals = [_parse_int(x) for x in raw.split()]
    if count is not None and len(vals) != count:
        raise ConfigError(f"expected {count} integers, got {len(vals)}")
    return vals


def _parse_choice(raw, choices):
    if raw not in choices:
        raise ConfigError(f"expected one of {sorted(choices)}, got {raw!r}")
    return raw


def _parse_dt(raw):
    if raw == "auto":
        return None
    return _parse_float(raw, lo=0.0)


# schema: section -> key -> (parser, default-as-string or REQUIRED)
_REQUIRED = object()

_SCHEMAS = {
    "grid": {
        "sizes": (lambda r: _parse_ints(r, 7), _REQUIRED),
        "lengths": (lambda r: _parse_floats(r, 7), None),
    },
    "run": {
        "seed": (lambda r: _parse_int(r, lo=0), "0"),
    },
    "background": {
        "kind": (lambda r: _parse_choice(r, {"constant", "twisted"}), "constant"),
        "family": (lambda r: _parse_choice(
            r, {"circle_twist", "single_mode", "band_limited", "constant"}), "circle_twist"),
        "component": (lambda r: _parse_int(r, lo=1, hi=7), "4"),
        "axis": (lambda r: _parse_int(r, lo=1, hi=7), "1"),
        "rate": (lambda r: _parse_int(r), "1"),
        "amplitude": (lambda r: _parse_float(r, lo=0.0), "0.5"),
        "kmax": (lambda r: _parse_int(r, lo=0), "1"),
        "wavevector": (lambda r: _parse_ints(r, 7), "1 0 0 0 0 0 0"),
        "order": (lambda r: _parse_choice(r, {"2", "4"}), "2"),
    },
    "initial": {
        "family": (lambda r: _parse_choice(
            r, {"single_mode", "band_limited", "constant", "checkpoint"}), "single_mode"),
        "amplitude": (lambda r: _parse_float(r, lo=0.0), "0.1"),
        "component": (lambda r: _parse_int(r, lo=1, hi=7), "2"),
        "wavevector": (lambda r: _parse_ints(r, 7), "1 0 0 0 0 0 0"),
        "phase": (lambda r: _parse_float(r), "0.0"),
        "kmax": (lambda r: _parse_int(r, lo=0), "1"),
        "vector": (lambda r: _parse_floats(r, 7), "0 0 0 0 0 0 0"),
        "path": (lambda r: r, ""),
    },
    "integrator": {
        "formulation": (lambda r: _parse_choice(r, {"vector", "spinor"}), "vector"),
        "dt": (_parse_dt, "auto"),
        "dt_safety": (lambda r: _parse_float(r, lo=0.0), "0.5"),
        "t_end": (lambda r: _parse_float(r, lo=0.0), "1.0"),
        "clamp": (lambda r: _parse_float(r, lo=0.0), "0.99"),
        "order": (lambda r: _parse_choice(r, {"2", "4"}), "2"),
        "metric_every": (lambda r: _parse_int(r, lo=0), "0"),
    },
    "energy": {
        "pairs": (lambda r: _parse_int(r, lo=1), "20"),
        "eps": (_parse_floats, "1e-2 1e-3 1e-4"),
        "amplitude": (lambda r: _parse_float(r, lo=0.0), "0.2"),
        "kmax": (lambda r: _parse_int(r, lo=0), "2"),
        "order": (lambda r: _parse_choice(r, {"2", "4"}), "4"),
        "tol": (lambda r: _parse_float(r, lo=0.0), "1e-4"),
    },
    "spectrum": {
        "k": (lambda r: _parse_int(r, lo=1), "12"),
        "order": (lambda r: _parse_choice(r, {"2", "4"}), "2"),
        "rel_threshold": (lambda r: _parse_float(r, lo=0.0), "1e-8"),
    },
    "symbol": {
        "samples": (lambda r: _parse_int(r, lo=1), "10000"),
        "umax": (lambda r: _parse_float(r, lo=0.0), "0.9"),
        "coercivity_floor": (lambda r: _parse_float(r, lo=0.0), "0.43"),
        "refine": (_parse_ints, "16 32 64"),
        "order": (lambda r: _parse_choice(r, {"2", "4"}), "2"),
    },
}

_COMMAND_SECTIONS = {
    "verify": {"run"},
    "evolve": {"grid", "run", "background", "initial", "integrator"},
    "energy": {"grid", "run", "background", "energy"},
    "spectrum": {"grid", "run", "background", "spectrum"},
    "symbol": {"run", "symbol"},
}


@dataclass
class RunConfig:
    command: str
    options: dict            # section -> key -> typed value
    echo: dict = field(default_factory=dict)  # section -> key -> raw string

    def __getitem__(self, section: str) -> dict:
        return self.options[section]


def parse_config(text: str, command: str) -> RunConfig:
    """Parse and validate a config for one command; rejects unknown content."""
    if command not in _COMMAND_SECTIONS:
        raise ConfigError(f"unknown command {command!r}")
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                   inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax error: {exc}")

    allowed = _COMMAND_SECTIONS[command]
    for section in cp.sections():
        if section not in allowed:
            raise ConfigError(f"section [{section}] is not used by '{command}'")
        schema = _SCHEMAS[section]
        for key in cp[section]:
            if key not in schema:
                raise ConfigError(f"unknown key '{key}' in section [{section}]")

    options, echo = {}, {}
    for section in sorted(allowed):
        schema = _SCHEMAS[section]
        options[section], echo[section] = {}, {}
        for key, (parser, default) in schema.items():
            if cp.has_option(section, key):
                raw = cp.get(section, key)
            elif default is _REQUIRED:
                raise ConfigError(f"missing required key '{key}' in section [{section}]")
            elif default is None:
                raw = None
            else:
                raw = default
            if raw is None:
                options[section][key] = None
                continue
            try:
                options[section][key] = parser(raw)
            except ConfigError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}")
            echo[section][key] = raw
    return RunConfig(command=command, options=options, echo=echo)


# ---------------------------------------------------------------------------
# builders (validation already done; these allocate)


def build_grid(cfg: RunConfig) -> gr.GridShape:
    opts = cfg["grid"]
    lengths = opts["lengths"] if opts["lengths"] is not None else [gr.TWO_PI] * 7
    try:
        return gr.GridShape.make(opts["sizes"], lengths)
    except ValueError as exc:
        raise ConfigError(f"[grid] {exc}")


def build_background(cfg: RunConfig, grid: gr.GridShape,
                     rng: np.random.Generator) -> Background:
    opts = cfg["background"]
    if opts["kind"] == "constant":
        return Background.constant(grid)
    family = opts["family"]
    order = int(opts["order"])
    if family == "circle_twist":
        W, w = fam.circle_twist(grid, opts["rate"], opts["axis"] - 1, opts["component"] - 1)
    elif family == "single_mode":
        W, w = fam.chart_pair(fam.single_mode(grid, opts["amplitude"],
                                              opts["component"] - 1, opts["wavevector"]))
    elif family == "band_limited":
        W, w = fam.chart_pair(fam.band_limited(grid, opts["amplitude"], opts["kmax"], rng))
    else:  # constant pair: a rotated but parallel structure
        vec = np.zeros(7)
        vec[opts["component"] - 1] = opts["amplitude"]
        W, w = fam.chart_pair(fam.constant_field(grid, vec))
    try:
        return Background.twisted(grid, W, w, order=order)
    except ValueError as exc:
        raise ConfigError(f"[background] {exc}")


def build_initial(cfg: RunConfig, grid: gr.GridShape,
                  rng: np.random.Generator) -> np.ndarray:
    opts = cfg["initial"]
    family = opts["family"]
    if family == "single_mode":
        return fam.single_mode(grid, opts["amplitude"], opts["component"] - 1,
                               opts["wavevector"], opts["phase"])
    if family == "band_limited":
        return fam.band_limited(grid, opts["amplitude"], opts["kmax"], rng)
    if family == "constant":
        try:
            return fam.constant_field(grid, opts["vector"])
        except ValueError as exc:
            raise ConfigError(f"[initial] {exc}")
    # checkpoint
    if not opts["path"]:
        raise ConfigError("[initial] checkpoint family needs a 'path'")
    ck_grid, values = gr.load_field(opts["path"])
    if ck_grid.sizes != grid.sizes or values.shape != grid.sizes + (7,):
        raise ConfigError("[initial] checkpoint grid does not match [grid]")
    return values


def build_controls(cfg: RunConfig) -> FlowControls:
    opts = cfg["integrator"]
    return FlowControls(
        dt=opts["dt"], dt_safety=opts["dt_safety"], t_end=opts["t_end"],
        clamp=opts["clamp"], order=int(opts["order"]),
        metric_every=opts["metric_every"],
    )
