"""Run configuration: one INI-style file, one section per parameter bundle.

Every key is optional; missing keys keep the dataclass defaults. Values are
SI (angles in radians). Tuples are comma-separated. Example::

    [env]
    wind_speed = 9.0

    [sweep]
    winds = 6.5, 7.0, 7.5
    relative = true

Unknown sections or keys are rejected so that typos do not silently fall
back to defaults.
"""
from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from .controllers import FlightConfig, ReelRefState, SupervisorConfig, WinchLoopGains
from .cycle import ConstraintSet, SimConfig
from .design import SweepGrid
from .params import EnvParams, KiteParams, ParameterError, PlantParams, TetherParams, WinchParams


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending section/field."""

    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}" if path else msg)
        self.path = path


@dataclass(frozen=True)
class DesignSettings:
    sigma: float | None = None   # kernel width in standardised units; None = median pairwise distance
    mu: float = 1e-6
    max_iter: int = 10
    workers: int = 1

    def __post_init__(self):
        if self.sigma is not None and not self.sigma > 0:
            raise ParameterError("design.sigma", "must be positive")
        if not (math.isfinite(self.mu) and self.mu >= 0):
            raise ParameterError("design.mu", "must be >= 0")
        if self.max_iter < 1:
            raise ParameterError("design.max_iter", "must be >= 1")
        if self.workers < 1:
            raise ParameterError("design.workers", "must be >= 1")


@dataclass(frozen=True)
class CompareSettings:
    # reel-in speed of the fast-recovery strategy
    fast_recovery_speed: float = -8.0
    # reel-out candidates for the traction-power strategy, as fractions of v_w
    trac_fractions: tuple[float, ...] = (0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5)
    online_cycles: int = 8

    def __post_init__(self):
        if not self.fast_recovery_speed < 0:
            raise ParameterError("compare.fast_recovery_speed", "must be negative")
        if not self.trac_fractions or min(self.trac_fractions) <= 0:
            raise ParameterError("compare.trac_fractions", "must be a non-empty list of positive fractions")
        if self.online_cycles < 2:
            raise ParameterError("compare.online_cycles", "must be >= 2")


@dataclass(frozen=True)
class RunConfig:
    sim: SimConfig = field(default_factory=SimConfig)
    reel: ReelRefState = field(default_factory=ReelRefState)
    sweep: SweepGrid = field(default_factory=SweepGrid)
    design: DesignSettings = field(default_factory=DesignSettings)
    compare: CompareSettings = field(default_factory=CompareSettings)
    output: str = "out"

    @property
    def plant(self) -> PlantParams:
        return self.sim.plant


# section -> (dataclass, path to the instance inside RunConfig)
_SECTIONS = {
    "kite": (KiteParams, ("sim", "plant", "kite")),
    "tether": (TetherParams, ("sim", "plant", "tether")),
    "winch": (WinchParams, ("sim", "plant", "winch")),
    "env": (EnvParams, ("sim", "plant", "env")),
    "supervisor": (SupervisorConfig, ("sim", "supervisor")),
    "flight": (FlightConfig, ("sim", "flight")),
    "winch_control": (WinchLoopGains, ("sim", "winch_gains")),
    "constraints": (ConstraintSet, ("sim", "constraints")),
    "simulation": (SimConfig, ("sim",)),
    "reel": (ReelRefState, ("reel",)),
    "sweep": (SweepGrid, ("sweep",)),
    "design": (DesignSettings, ("design",)),
    "compare": (CompareSettings, ("compare",)),
}

# fields that hold nested bundles and cannot be set from a flat key
_NESTED = {"plant", "supervisor", "flight", "winch_gains", "constraints"}


def _scalar_fields(cls) -> dict:
    out = {}
    for f in dataclasses.fields(cls):
        if f.name in _NESTED and cls is SimConfig:
            continue
        if f.name == "last_target":
            continue
        out[f.name] = f
    return out


def _parse_value(text: str, default, path: str):
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float) or default is None:
            if default is None and text.lower() in ("", "auto", "none"):
                return None
            value = float(text)
            if not math.isfinite(value):
                raise ValueError("must be finite")
            return value
        if isinstance(default, tuple):
            items = [s for s in (p.strip() for p in text.split(",")) if s]
            values = tuple(float(s) for s in items)
            if not all(math.isfinite(v) for v in values):
                raise ValueError("must be finite")
            return values
        return text
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from None


def _get(obj, attrs):
    for a in attrs:
        obj = getattr(obj, a)
    return obj


def _set(obj, attrs, value):
    if not attrs:
        return value
    head, rest = attrs[0], attrs[1:]
    return replace(obj, **{head: _set(getattr(obj, head), rest, value)})


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError("", f"{source}: {exc}") from None
    cfg = RunConfig()
    for section in parser.sections():
        if section == "output":
            for key, value in parser.items(section):
                if key != "directory":
                    raise ConfigError(f"output.{key}", "unknown key")
                cfg = replace(cfg, output=value.strip())
            continue
        if section not in _SECTIONS:
            raise ConfigError(section, f"unknown section (known: {', '.join([*_SECTIONS, 'output'])})")
        cls, attrs = _SECTIONS[section]
        fields = _scalar_fields(cls)
        current = _get(cfg, attrs)
        updates = {}
        for key, value in parser.items(section):
            path = f"{section}.{key}"
            if key not in fields:
                raise ConfigError(path, "unknown key")
            updates[key] = _parse_value(value, getattr(current, key), path)
        try:
            new = replace(current, **updates)
        except ParameterError as exc:
            raise ConfigError(exc.path, str(exc).split(": ", 1)[-1]) from None
        except (ValueError, TypeError) as exc:
            keys = sorted(updates)
            where = f"{section}.{keys[0]}" if len(keys) == 1 else f"{section}.{{{', '.join(keys)}}}"
            raise ConfigError(where, str(exc)) from None
        cfg = _set(cfg, attrs, new)
    _cross_check(cfg)
    return cfg


def _cross_check(cfg: RunConfig):
    lo, hi = cfg.plant.winch.speed_limits
    if not (cfg.reel.trac_bounds[1] <= hi and cfg.reel.retr_bounds[0] >= lo):
        raise ConfigError("reel.trac_bounds", f"reference bounds exceed the winch speed limits {lo, hi}")
    if cfg.compare.fast_recovery_speed < lo:
        raise ConfigError("compare.fast_recovery_speed", f"below the winch speed limit {lo}")


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError("", f"{path}: file not found")
    return parse_config(p.read_text(), source=str(p))


def dump_config(cfg: RunConfig) -> str:
    """Render every configurable key with its value (a complete, loadable file)."""
    lines = []
    for section, (cls, attrs) in _SECTIONS.items():
        obj = _get(cfg, attrs)
        lines.append(f"[{section}]")
        for name in _scalar_fields(cls):
            value = getattr(obj, name)
            if isinstance(value, tuple):
                text = ", ".join(repr(float(v)) for v in value)
            elif value is None:
                text = "auto"
            elif isinstance(value, bool):
                text = "true" if value else "false"
            elif isinstance(value, float):
                text = repr(value)
            else:
                text = str(value)
            lines.append(f"{name} = {text}")
        lines.append("")
    lines += ["[output]", f"directory = {cfg.output}", ""]
    return "\n".join(lines)
