"""Scenario configuration: schema, INI parse and write.

The file is plain ``configparser`` text with one section per settings group.
Every key is optional inside a present section; values not given keep the
benchmark defaults from ``app.models``.
"""

from __future__ import annotations

import configparser
import dataclasses
import math
from collections.abc import Mapping
from pathlib import Path
from typing import Any

from app.constants import CONTROLLERS, DISTURBANCE_SCALINGS, GP_MODES, INDUCING_RULES, INTEGRATORS, TIGHTENING_GAINS
from app.errors import ConfigError
from app.models import ScenarioConfig
from utils.formatting import format_number, format_vector, parse_box, parse_float, parse_int, parse_vector

VECTOR = "vector"
SETPOINTS = "setpoints"
NOISE = "noise"

_DEFAULTS = ScenarioConfig()

CONFIG_SCHEMA: dict[str, dict[str, tuple[Any, Any]]] = {
    "plant": {
        "mass": (float, _DEFAULTS.plant.mass),
        "damping": (float, _DEFAULTS.plant.damping),
        "spring": (float, _DEFAULTS.plant.spring),
        "ts": (float, _DEFAULTS.plant.ts),
        "integrator": (str, _DEFAULTS.plant.integrator),
        "noise": (NOISE, _DEFAULTS.plant.noise),
    },
    "mpc": {
        "horizon": (int, _DEFAULTS.mpc.horizon),
        "q": (VECTOR, _DEFAULTS.mpc.q),
        "r": (float, _DEFAULTS.mpc.r),
        "contingency_weight": (float, _DEFAULTS.mpc.contingency_weight),
        "x_lower": (VECTOR, _DEFAULTS.mpc.x_lower),
        "x_upper": (VECTOR, _DEFAULTS.mpc.x_upper),
        "u_lower": (VECTOR, _DEFAULTS.mpc.u_lower),
        "u_upper": (VECTOR, _DEFAULTS.mpc.u_upper),
        "w_lower": (VECTOR, _DEFAULTS.mpc.w_lower),
        "w_upper": (VECTOR, _DEFAULTS.mpc.w_upper),
        "disturbance_scaling": (str, _DEFAULTS.mpc.disturbance_scaling),
        "tightening_gain": (str, _DEFAULTS.mpc.tightening_gain),
        "soft_penalty": (float, _DEFAULTS.mpc.soft_penalty),
    },
    "gp": {
        "sigma_f2": (float, _DEFAULTS.gp.sigma_f2),
        "length_scale": (float, _DEFAULTS.gp.length_scale),
        "sigma_v2": (float, _DEFAULTS.gp.sigma_v2),
        "jitter": (float, _DEFAULTS.gp.jitter),
        "mode": (str, _DEFAULTS.gp.mode),
        "inducing_points": (int, _DEFAULTS.gp.inducing_points),
        "inducing": (str, _DEFAULTS.gp.inducing),
        "refit_every": (int, _DEFAULTS.gp.refit_every),
        "max_points": (int, _DEFAULTS.gp.max_points),
    },
    "learning": {
        "beta_bar": (float, _DEFAULTS.learning.beta_bar),
        "gamma_bar": (float, _DEFAULTS.learning.gamma_bar),
        "beta_max": (float, _DEFAULTS.learning.beta_max),
        "gamma_max": (float, _DEFAULTS.learning.gamma_max),
    },
    "sim": {
        "duration": (float, _DEFAULTS.sim.duration),
        "x0": (VECTOR, _DEFAULTS.sim.x0),
        "setpoints": (SETPOINTS, _DEFAULTS.sim.setpoints),
        "controller": (str, _DEFAULTS.sim.controller),
        "seed": (int, _DEFAULTS.sim.seed),
        "workers": (int, _DEFAULTS.sim.workers),
    },
    "solver": {
        "max_iter": (int, _DEFAULTS.solver.max_iter),
        "kkt_tol": (float, _DEFAULTS.solver.kkt_tol),
        "feas_tol": (float, _DEFAULTS.solver.feas_tol),
        "qp_elastic_penalty": (float, _DEFAULTS.solver.qp_elastic_penalty),
        "verify_derivatives": (bool, _DEFAULTS.solver.verify_derivatives),
        "trace": (bool, _DEFAULTS.solver.trace),
    },
}

REQUIRED_SECTIONS = ("plant", "mpc", "sim")

CHOICES: dict[str, tuple[str, ...]] = {
    "plant.integrator": INTEGRATORS,
    "mpc.disturbance_scaling": DISTURBANCE_SCALINGS,
    "mpc.tightening_gain": TIGHTENING_GAINS,
    "gp.mode": GP_MODES,
    "gp.inducing": INDUCING_RULES,
    "sim.controller": CONTROLLERS,
}

# key path -> (minimum, maximum, minimum is exclusive)
RANGES: dict[str, tuple[float, float, bool]] = {
    "plant.mass": (0.0, math.inf, True),
    "plant.damping": (0.0, math.inf, False),
    "plant.ts": (0.0, math.inf, True),
    "mpc.horizon": (1, math.inf, False),
    "mpc.r": (0.0, math.inf, True),
    "mpc.contingency_weight": (0.0, 1.0, False),
    "mpc.soft_penalty": (0.0, math.inf, True),
    "gp.sigma_f2": (0.0, math.inf, True),
    "gp.length_scale": (0.0, math.inf, True),
    "gp.sigma_v2": (0.0, math.inf, False),
    "gp.jitter": (0.0, math.inf, True),
    "gp.inducing_points": (1, math.inf, False),
    "gp.refit_every": (1, math.inf, False),
    "gp.max_points": (0, math.inf, False),
    "learning.beta_bar": (0.0, math.inf, False),
    "learning.gamma_bar": (0.0, math.inf, False),
    "learning.beta_max": (0.0, math.inf, False),
    "learning.gamma_max": (0.0, math.inf, False),
    "sim.duration": (0.0, math.inf, False),
    "sim.seed": (0, math.inf, False),
    "sim.workers": (1, math.inf, False),
    "solver.max_iter": (1, math.inf, False),
    "solver.kkt_tol": (0.0, math.inf, True),
    "solver.feas_tol": (0.0, math.inf, True),
    "solver.qp_elastic_penalty": (0.0, math.inf, True),
}

# key path -> vector length
VECTOR_SIZES = {
    "mpc.q": 2,
    "mpc.x_lower": 2,
    "mpc.x_upper": 2,
    "mpc.u_lower": 1,
    "mpc.u_upper": 1,
    "mpc.w_lower": 2,
    "mpc.w_upper": 2,
    "sim.x0": 2,
}


def _coerce_bool(value: Any, key_path: str) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in {"1", "true", "yes", "on"}:
        return True
    if text in {"0", "false", "no", "off"}:
        return False
    raise ConfigError(f"expected a boolean, got {value!r}", key_path=key_path)


def _coerce_int(value: Any, key_path: str) -> int:
    if isinstance(value, int) and not isinstance(value, bool):
        return value
    parsed = parse_int(str(value))
    if parsed is None:
        raise ConfigError(f"expected an integer, got {value!r}", key_path=key_path)
    return parsed


def _coerce_float(value: Any, key_path: str) -> float:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        if math.isnan(value):
            raise ConfigError("NaN is not allowed", key_path=key_path)
        return float(value)
    parsed = parse_float(str(value))
    if parsed is None:
        raise ConfigError(f"expected a number, got {value!r}", key_path=key_path)
    return parsed


def _coerce_vector(value: Any, key_path: str) -> tuple[float, ...]:
    if isinstance(value, (tuple, list)):
        return tuple(_coerce_float(item, key_path) for item in value)
    parsed = parse_vector(str(value))
    if parsed is None:
        raise ConfigError(f"expected comma-separated numbers, got {value!r}", key_path=key_path)
    return parsed


def _coerce_noise(value: Any, key_path: str) -> tuple[float, float] | None:
    if value is None:
        return None
    if isinstance(value, (tuple, list)):
        low, high = _coerce_vector(value, key_path)
        return low, high
    if str(value).strip().lower() == "none":
        return None
    parsed = parse_box(str(value))
    if parsed is None:
        raise ConfigError(f"expected 'none' or 'box(lo, hi)', got {value!r}", key_path=key_path)
    return parsed


def _coerce_setpoints(value: Any, key_path: str) -> tuple[tuple[float, tuple[float, ...]], ...]:
    """``t: x1, x2; t: x1, x2`` or an already structured tuple."""
    if isinstance(value, (tuple, list)):
        return tuple((_coerce_float(start, key_path), _coerce_vector(point, key_path)) for start, point in value)
    entries = []
    for chunk in str(value).split(";"):
        if not chunk.strip():
            continue
        start, sep, point = chunk.partition(":")
        if not sep:
            raise ConfigError(f"setpoint entry {chunk.strip()!r} lacks 't:'", key_path=key_path)
        entries.append((_coerce_float(start, key_path), _coerce_vector(point, key_path)))
    return tuple(entries)


def _coerce_value(typ: Any, value: Any, key_path: str) -> Any:
    if typ is bool:
        return _coerce_bool(value, key_path)
    if typ is int:
        return _coerce_int(value, key_path)
    if typ is float:
        return _coerce_float(value, key_path)
    if typ == VECTOR:
        return _coerce_vector(value, key_path)
    if typ == NOISE:
        return _coerce_noise(value, key_path)
    if typ == SETPOINTS:
        return _coerce_setpoints(value, key_path)
    return str(value).strip().lower()


def _format_value(typ: Any, value: Any) -> str:
    if typ == VECTOR:
        return format_vector(value)
    if typ == NOISE:
        return "none" if value is None else f"box({format_number(value[0])}, {format_number(value[1])})"
    if typ == SETPOINTS:
        return "; ".join(f"{format_number(start)}: {format_vector(point)}" for start, point in value)
    if typ in (bool, int, float):
        return format_number(value)
    return str(value)


def _check_range(key_path: str, value: float) -> None:
    low, high, exclusive = RANGES[key_path]
    too_low = value <= low if exclusive else value < low
    if too_low or value > high:
        bound = f"> {low:g}" if exclusive else f">= {low:g}"
        if math.isfinite(high):
            bound += f" and <= {high:g}"
        raise ConfigError(f"must be {bound}, got {value!r}", key_path=key_path)


def validate_config(config: ScenarioConfig) -> ScenarioConfig:
    """Raise ConfigError on the first schema violation."""
    for section, keys in CONFIG_SCHEMA.items():
        group = getattr(config, section)
        for key in keys:
            key_path = f"{section}.{key}"
            value = getattr(group, key)
            if key_path in CHOICES and value not in CHOICES[key_path]:
                raise ConfigError(f"must be one of {', '.join(CHOICES[key_path])}, got {value!r}", key_path=key_path)
            if key_path in RANGES:
                _check_range(key_path, value)
            if key_path in VECTOR_SIZES and len(value) != VECTOR_SIZES[key_path]:
                raise ConfigError(f"expected {VECTOR_SIZES[key_path]} values, got {len(value)}", key_path=key_path)

    mpc = config.mpc
    if any(q < 0 for q in mpc.q):
        raise ConfigError("weights must be non-negative", key_path="mpc.q")
    for name in ("x", "u", "w"):
        lower, upper = getattr(mpc, f"{name}_lower"), getattr(mpc, f"{name}_upper")
        if any(lo > hi for lo, hi in zip(lower, upper, strict=True)):
            raise ConfigError(f"{name} box is empty: lower {lower} exceeds upper {upper}", key_path=f"mpc.{name}_lower")
    if not all(math.isfinite(v) for v in mpc.w_lower + mpc.w_upper):
        raise ConfigError("disturbance bounds must be finite", key_path="mpc.w_lower")

    noise = config.plant.noise
    if noise is not None and not (math.isfinite(noise[0]) and math.isfinite(noise[1]) and noise[0] <= noise[1]):
        raise ConfigError(f"noise box is empty or unbounded: {noise}", key_path="plant.noise")

    steps = config.sim.duration / config.plant.ts
    if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
        raise ConfigError(f"duration {config.sim.duration:g} is not a multiple of ts {config.plant.ts:g}", key_path="sim.duration")

    schedule = config.sim.setpoints
    if not schedule:
        raise ConfigError("at least one setpoint is required", key_path="sim.setpoints")
    starts = [start for start, _ in schedule]
    if any(later <= earlier for earlier, later in zip(starts, starts[1:], strict=False)):
        raise ConfigError(f"setpoint times must be strictly increasing, got {starts}", key_path="sim.setpoints")
    if any(len(point) != 2 for _, point in schedule):
        raise ConfigError("every setpoint needs 2 values", key_path="sim.setpoints")
    return config


def settings_map_to_config(settings_map: Mapping[str, Any], *, defaults: ScenarioConfig | None = None) -> ScenarioConfig:
    """Build a validated config from flat ``section.key`` entries over ``defaults``."""
    base = defaults or ScenarioConfig()
    updates: dict[str, dict[str, Any]] = {}
    for key_path, raw in settings_map.items():
        section, _, key = key_path.partition(".")
        if section not in CONFIG_SCHEMA:
            raise ConfigError("unknown section", key_path=section)
        if key not in CONFIG_SCHEMA[section]:
            raise ConfigError("unknown key", key_path=key_path)
        typ, _ = CONFIG_SCHEMA[section][key]
        updates.setdefault(section, {})[key] = _coerce_value(typ, raw, key_path)
    groups = {section: dataclasses.replace(getattr(base, section), **values) for section, values in updates.items()}
    return validate_config(dataclasses.replace(base, **groups))


def config_to_map(config: ScenarioConfig) -> dict[str, Any]:
    return {f"{section}.{key}": getattr(getattr(config, section), key) for section, keys in CONFIG_SCHEMA.items() for key in keys}


def _error_line(exc: configparser.Error) -> int | None:
    line = getattr(exc, "lineno", None)
    if line is None and isinstance(exc, configparser.ParsingError) and exc.errors:
        line = exc.errors[0][0]
    return line


def config_from_text(text: str, *, source: str = "<config>") -> ScenarioConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",), default_section="__defaults__")
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        message = getattr(exc, "message", str(exc)).splitlines()[0]
        raise ConfigError(message, line=_error_line(exc)) from exc

    if parser.defaults():
        raise ConfigError("unknown section", key_path="__defaults__")
    for section in parser.sections():
        if section not in CONFIG_SCHEMA:
            raise ConfigError("unknown section", key_path=section)
    for section in REQUIRED_SECTIONS:
        if not parser.has_section(section):
            raise ConfigError(f"missing section [{section}]", key_path=section)

    flat = {f"{section}.{key}": value for section in parser.sections() for key, value in parser.items(section)}
    return settings_map_to_config(flat)


def parse_config(path: Path) -> ScenarioConfig:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror or exc}") from exc
    return config_from_text(text, source=str(path))


def config_to_text(config: ScenarioConfig) -> str:
    lines: list[str] = []
    for section, keys in CONFIG_SCHEMA.items():
        if lines:
            lines.append("")
        lines.append(f"[{section}]")
        group = getattr(config, section)
        for key, (typ, _) in keys.items():
            lines.append(f"{key} = {_format_value(typ, getattr(group, key))}")
    return "\n".join(lines) + "\n"


def write_config(config: ScenarioConfig, path: Path) -> Path:
    validate_config(config)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(config_to_text(config), encoding="utf-8")
    return path
