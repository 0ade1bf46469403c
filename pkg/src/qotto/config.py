"""Scenario configuration files (TOML) and their validation.

A config looks like::

    scenario = "battery-detuning-sweep"
    preset = "desk"          # paper | desk
    base = "fig4"            # parameter set the overrides start from
    output = "fig4.csv"

    [params]                 # overrides, in omega_i units at paper scale
    T = 0.01

    [options]                # scenario-specific knobs
    threshold = 1e-4

    [[sweep]]                # outer axis
    axis = "T"
    values = [0.01, 0.05, 0.1]

    [[sweep]]                # inner axis
    axis = "detuning"
    linspace = [-0.02, 0.02, 41]

Rates, amplitudes and times are written at paper scale; the ``desk`` preset
multiplies rate-like quantities by ``DESK_SCALE`` and divides time-like ones
by it, after all overrides are applied.
"""

from __future__ import annotations

import dataclasses
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .models import DESK_SCALE, RATE_FIELDS, BatteryParams, EngineParams, preset

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field path."""


TIME_AXES = ("t", "tau", "tau_r")


@dataclass(frozen=True)
class ScenarioDef:
    name: str
    kind: str  # "battery" or "engine"
    base: str
    axes: tuple[str, ...]
    options: dict
    description: str
    max_axes: int = 2


_BATTERY_FIELDS = tuple(f.name for f in dataclasses.fields(BatteryParams))
_ENGINE_FIELDS = tuple(f.name for f in dataclasses.fields(EngineParams))

SCENARIOS: dict[str, ScenarioDef] = {
    s.name: s
    for s in [
        ScenarioDef("battery-charge", "battery", "fig3", ("t",),
                    {"points": 101, "threshold": 1e-4},
                    "charging trajectory from the Gibbs state: populations, effective-model "
                    "population, running efficiency", max_axes=1),
        ScenarioDef("battery-detuning-sweep", "battery", "fig4", ("detuning",) + _BATTERY_FIELDS,
                    {"threshold": 1e-4},
                    "charging efficiency and power at the NESS time versus pump detuning"),
        ScenarioDef("battery-pump-sweep", "battery", "fig7", ("p_bar",) + _BATTERY_FIELDS,
                    {"threshold": 1e-4},
                    "NESS population of i versus normalised pumping rate, with the Rabi-flip cap"),
        ScenarioDef("battery-stored-vs-eff", "battery", "fig4", ("tau",) + _BATTERY_FIELDS,
                    {},
                    "stored free energy and efficiency after charging for a time tau"),
        ScenarioDef("engine-short-cycle-sweep", "engine", "fig5", ("detuning",) + _ENGINE_FIELDS,
                    {"tau": 1.0, "numeric": False, "tau_r": 0.0},
                    "short-cycle closed-form efficiency and power versus detuning"),
        ScenarioDef("engine-threshold", "engine", "fig6", ("T",) + _ENGINE_FIELDS,
                    {"tau": 1.0, "n_relax": 10.0, "discharge_mode": "finite_pulse", "asymptotic": True},
                    "short-cycle and asymptotic-cycle work output versus temperature", max_axes=1),
        ScenarioDef("engine-asymptotic", "engine", "fig6", ("tau_r",) + _ENGINE_FIELDS,
                    {"discharge_mode": "ideal_swap", "method": "expm"},
                    "operational-steady-state figures versus recharge time"),
    ]
}

_TOP_KEYS = {"scenario", "preset", "base", "output", "params", "options", "sweep"}
_SWEEP_KEYS = {"axis", "values", "linspace", "geomspace"}


@dataclass
class SweepAxis:
    axis: str
    values: tuple[float, ...]


@dataclass
class ScenarioConfig:
    scenario: str
    preset: str
    base: str
    params: BatteryParams
    sweep: list[SweepAxis]
    options: dict
    output: str
    overrides: dict = field(default_factory=dict)
    source: str | None = None

    @property
    def definition(self) -> ScenarioDef:
        return SCENARIOS[self.scenario]

    def grid(self) -> list[tuple[float, ...]]:
        """Cartesian product of the axes, first axis slowest."""
        pts = [()]
        for ax in self.sweep:
            pts = [p + (v,) for p in pts for v in ax.values]
        return pts if self.sweep else []

    def axis_names(self) -> list[str]:
        return [a.axis for a in self.sweep]

    def scale_axis_value(self, axis: str, value: float) -> float:
        """Paper-scale value -> value used in the run (desk scaling)."""
        if self.preset != "desk":
            return value
        if axis in RATE_FIELDS:
            return value * DESK_SCALE
        if axis in TIME_AXES:
            return value / DESK_SCALE
        return value

    def resolved(self) -> dict:
        """Plain-data echo of the resolved configuration."""
        return {
            "scenario": self.scenario,
            "preset": self.preset,
            "base": self.base,
            "output": self.output,
            "params": self.params.as_dict(),
            "options": dict(self.options),
            "sweep": [{"axis": a.axis, "values": list(a.values)} for a in self.sweep],
        }


def _num(path: str, v) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {v!r}")
    v = float(v)
    if not math.isfinite(v):
        raise ConfigError(f"{path}: must be finite")
    return v


def _axis_values(path: str, tbl: dict) -> tuple[float, ...]:
    given = [k for k in ("values", "linspace", "geomspace") if k in tbl]
    if len(given) != 1:
        raise ConfigError(f"{path}: give exactly one of values, linspace, geomspace")
    key = given[0]
    raw = tbl[key]
    if not isinstance(raw, list):
        raise ConfigError(f"{path}.{key}: expected a list")
    if key == "values":
        vals = [_num(f"{path}.values[{n}]", v) for n, v in enumerate(raw)]
    else:
        if len(raw) != 3:
            raise ConfigError(f"{path}.{key}: expected [start, stop, num]")
        a, b = _num(f"{path}.{key}[0]", raw[0]), _num(f"{path}.{key}[1]", raw[1])
        n = raw[2]
        if isinstance(n, bool) or not isinstance(n, int) or n < 1:
            raise ConfigError(f"{path}.{key}[2]: num must be a positive integer")
        if key == "geomspace" and (a <= 0 or b <= 0):
            raise ConfigError(f"{path}.geomspace: endpoints must be > 0")
        vals = list((np.linspace if key == "linspace" else np.geomspace)(a, b, n))
    if not vals:
        raise ConfigError(f"{path}: grid is empty")
    d = np.diff(vals)
    if len(vals) > 1 and not (np.all(d > 0) or np.all(d < 0)):
        raise ConfigError(f"{path}: grid must be strictly monotone")
    return tuple(float(v) for v in vals)


def _apply_overrides(params: BatteryParams, overrides: dict, path: str = "params") -> BatteryParams:
    names = {f.name for f in dataclasses.fields(params)}
    kw = {}
    for k, v in overrides.items():
        if k == "detuning":
            continue
        if k not in names:
            raise ConfigError(f"{path}.{k}: unknown parameter (known: {', '.join(sorted(names))}, detuning)")
        kw[k] = None if (k == "omega_f" and v is None) else _num(f"{path}.{k}", v)
    try:
        out = params.replace(**kw)
        if "detuning" in overrides:
            out = out.with_detuning(_num(f"{path}.detuning", overrides["detuning"]))
    except ValueError as exc:
        msg = str(exc)
        field_name, _, rest = msg.partition(" ")
        if field_name in kw:
            raise ConfigError(f"{path}.{field_name}: {rest}") from None
        raise ConfigError(f"{path}: {msg}") from None
    return out


def desk_scaled(params: BatteryParams) -> BatteryParams:
    names = {f.name for f in dataclasses.fields(params)}
    return params.replace(**{k: getattr(params, k) * DESK_SCALE for k in RATE_FIELDS if k in names})


def build_config(data: dict, preset_override: str | None = None, source: str | None = None) -> ScenarioConfig:
    """Validate a parsed config mapping and fill defaults."""
    if not isinstance(data, dict):
        raise ConfigError("<root>: expected a table")
    for k in data:
        if k not in _TOP_KEYS:
            raise ConfigError(f"{k}: unknown key (allowed: {', '.join(sorted(_TOP_KEYS))})")
    name = data.get("scenario")
    if name is None:
        raise ConfigError("scenario: missing")
    if name not in SCENARIOS:
        raise ConfigError(f"scenario: unknown scenario {name!r} (known: {', '.join(SCENARIOS)})")
    sdef = SCENARIOS[name]
    kind = preset_override or data.get("preset", "paper")
    if kind not in ("paper", "desk"):
        raise ConfigError(f"preset: must be 'paper' or 'desk', got {kind!r}")
    base = data.get("base", sdef.base)
    try:
        params = preset(base, "paper")
    except KeyError as exc:
        raise ConfigError(f"base: {exc.args[0]}") from None
    if sdef.kind == "engine" and not isinstance(params, EngineParams):
        raise ConfigError(f"base: {base!r} is a battery parameter set; scenario {name} needs an engine set")
    if sdef.kind == "battery" and isinstance(params, EngineParams):
        params = BatteryParams(**{f.name: getattr(params, f.name) for f in dataclasses.fields(BatteryParams)})
    overrides = data.get("params", {})
    if not isinstance(overrides, dict):
        raise ConfigError("params: expected a table")
    params = _apply_overrides(params, overrides)
    if kind == "desk":
        params = desk_scaled(params)

    opts = dict(sdef.options)
    given = data.get("options", {})
    if not isinstance(given, dict):
        raise ConfigError("options: expected a table")
    for k, v in given.items():
        if k not in sdef.options:
            allowed = ", ".join(sorted(sdef.options)) or "none"
            raise ConfigError(f"options.{k}: unknown option for {name} (allowed: {allowed})")
        default = sdef.options[k]
        if isinstance(default, bool):
            if not isinstance(v, bool):
                raise ConfigError(f"options.{k}: expected true/false")
        elif isinstance(default, str):
            if not isinstance(v, str):
                raise ConfigError(f"options.{k}: expected a string")
        elif isinstance(default, int):
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise ConfigError(f"options.{k}: expected a positive integer")
        else:
            v = _num(f"options.{k}", v)
            if v < 0:
                raise ConfigError(f"options.{k}: must be >= 0")
        opts[k] = v
    if "discharge_mode" in opts and opts["discharge_mode"] not in ("ideal_swap", "finite_pulse"):
        raise ConfigError("options.discharge_mode: must be 'ideal_swap' or 'finite_pulse'")
    if "method" in opts and opts["method"] not in ("expm", "rk45"):
        raise ConfigError("options.method: must be 'expm' or 'rk45'")

    sweep_raw = data.get("sweep", [])
    if isinstance(sweep_raw, dict):
        sweep_raw = [sweep_raw]
    if not isinstance(sweep_raw, list):
        raise ConfigError("sweep: expected an array of tables")
    if len(sweep_raw) > sdef.max_axes:
        raise ConfigError(f"sweep: {name} takes at most {sdef.max_axes} axes")
    sweep = []
    for n, tbl in enumerate(sweep_raw):
        path = f"sweep[{n}]"
        if not isinstance(tbl, dict):
            raise ConfigError(f"{path}: expected a table")
        for k in tbl:
            if k not in _SWEEP_KEYS:
                raise ConfigError(f"{path}.{k}: unknown key (allowed: {', '.join(sorted(_SWEEP_KEYS))})")
        axis = tbl.get("axis")
        if axis not in sdef.axes:
            raise ConfigError(f"{path}.axis: {axis!r} is not a sweep axis of {name} "
                              f"(allowed: {', '.join(sdef.axes)})")
        if axis in [a.axis for a in sweep]:
            raise ConfigError(f"{path}.axis: {axis!r} swept twice")
        sweep.append(SweepAxis(axis, _axis_values(path, tbl)))
    if not sweep and name != "battery-charge":
        raise ConfigError("sweep: at least one axis is required")

    output = data.get("output", f"{name}.csv")
    if not isinstance(output, str) or not output:
        raise ConfigError("output: expected a file name")
    cfg = ScenarioConfig(scenario=name, preset=kind, base=base, params=params, sweep=sweep,
                         options=opts, output=output, overrides=dict(overrides), source=source)
    # catch invalid parameter points before any job starts
    for pt in cfg.grid():
        try:
            point_params(cfg, dict(zip(cfg.axis_names(), pt)))
        except ConfigError as exc:
            raise ConfigError(f"sweep point {pt}: {exc}") from None
    return cfg


def point_params(cfg: ScenarioConfig, point: dict) -> BatteryParams:
    """Parameters at one grid point; sweep values are paper-scale and get desk scaling here."""
    p = cfg.params
    kw = {}
    for axis, v in point.items():
        if axis in TIME_AXES or axis in ("detuning", "p_bar"):
            continue
        kw[axis] = cfg.scale_axis_value(axis, v)
    try:
        if kw:
            p = p.replace(**kw)
        if "detuning" in point:
            p = p.with_detuning(point["detuning"])
        if "p_bar" in point:
            if point["p_bar"] < 0:
                raise ValueError("p_bar must be >= 0")
            p = p.replace(Omega=p.Omega * math.sqrt(point["p_bar"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return p


def load_config(path, preset_override: str | None = None) -> ScenarioConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"<file>: {path} does not exist") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"<file>: {path}: {exc}") from None
    return build_config(data, preset_override, source=str(path))
