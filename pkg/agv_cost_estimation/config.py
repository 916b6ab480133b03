"""Configuration loading and validation."""
from __future__ import annotations

import logging
import os
from typing import Any

import voluptuous as vol
import yaml

from .const import (
    ARC_KIND_CORRIDOR,
    ARC_KIND_PORT_APPROACH,
    BATTERY_AGE_DRAINED,
    BATTERY_AGE_NEW,
    DEFAULT_AGV,
    DEFAULT_ALPHA1,
    DEFAULT_ALPHA2,
    DEFAULT_BATTERY_AGE,
    DEFAULT_BATTERY_KNOTS,
    DEFAULT_COLLAPSE_SOC,
    DEFAULT_FRICTION,
    DEFAULT_HALT_SOC,
    DEFAULT_K_CANDIDATES,
    DEFAULT_KF_CALIBRATION,
    DEFAULT_KF_Q_RATIO,
    DEFAULT_LAMBDA,
    DEFAULT_MISSION_LEGS,
    DEFAULT_MISSION_METHOD,
    DEFAULT_NOISE_FRACTION,
    DEFAULT_P0,
    DEFAULT_RUN_IN_DROP,
    DEFAULT_RUN_IN_SOC,
    DEFAULT_SAG_DEPTH,
    DEFAULT_SAG_HIGH,
    DEFAULT_SAG_LOW,
    DEFAULT_SAMPLING_INTERVAL,
    DEFAULT_SEED,
    DEFAULT_SPEED_FLOOR,
    DEFAULT_SPEED_PEAK,
    DEFAULT_T_EMPTY,
    DEFAULT_V_MAX,
    DEFAULT_WARMUP_INTERVAL,
    DEFAULT_WARMUP_TRAVERSALS,
    DEFAULT_WINDOW,
    METHOD_FIELD_NAMES,
    METHOD_ORDER,
    METHOD_TEMPLATES,
)
from .estimators import MethodConfig
from .exceptions import ConfigError
from .utils import digest_lines, format_number

_LOGGER = logging.getLogger(__name__)

_POSITIVE = vol.All(vol.Coerce(float), vol.Range(min=0, min_included=False))
_NON_NEGATIVE = vol.All(vol.Coerce(float), vol.Range(min=0))
_FRACTION = vol.All(vol.Coerce(float), vol.Range(min=0, max=1))
_OPEN_FRACTION = vol.All(
    vol.Coerce(float), vol.Range(min=0, max=1, min_included=False, max_included=False)
)

BATTERY_SCHEMA = vol.Schema(
    {
        vol.Optional("t_empty", default=DEFAULT_T_EMPTY): _POSITIVE,
        vol.Optional(
            "knots", default=[list(knot) for knot in DEFAULT_BATTERY_KNOTS]
        ): vol.All(
            [vol.ExactSequence([vol.Coerce(float), vol.Coerce(float)])],
            vol.Length(min=2),
        ),
    }
)

SPEED_SCHEMA = vol.Schema(
    {
        vol.Optional("peak", default=DEFAULT_SPEED_PEAK): _POSITIVE,
        vol.Optional("run_in_soc", default=DEFAULT_RUN_IN_SOC): _OPEN_FRACTION,
        vol.Optional("run_in_drop", default=DEFAULT_RUN_IN_DROP): vol.All(
            vol.Coerce(float), vol.Range(min=0, max=1, max_included=False)
        ),
        vol.Optional("sag_high", default=DEFAULT_SAG_HIGH): _OPEN_FRACTION,
        vol.Optional("sag_low", default=DEFAULT_SAG_LOW): _OPEN_FRACTION,
        vol.Optional("sag_depth", default=DEFAULT_SAG_DEPTH): vol.All(
            vol.Coerce(float), vol.Range(min=0, max=1, max_included=False)
        ),
        vol.Optional("collapse_soc", default=DEFAULT_COLLAPSE_SOC): _OPEN_FRACTION,
        vol.Optional("floor", default=DEFAULT_SPEED_FLOOR): _OPEN_FRACTION,
    }
)

COST_SCHEMA = vol.Schema(
    {
        vol.Optional("noise_fraction", default=DEFAULT_NOISE_FRACTION): _NON_NEGATIVE,
        vol.Optional("halt_soc", default=DEFAULT_HALT_SOC): _OPEN_FRACTION,
        vol.Optional("friction", default={}): vol.Schema(
            {
                vol.Optional(
                    ARC_KIND_CORRIDOR, default=DEFAULT_FRICTION[ARC_KIND_CORRIDOR]
                ): _POSITIVE,
                vol.Optional(
                    ARC_KIND_PORT_APPROACH,
                    default=DEFAULT_FRICTION[ARC_KIND_PORT_APPROACH],
                ): _POSITIVE,
            }
        ),
        vol.Optional("speed", default={}): SPEED_SCHEMA,
    }
)

ARC_OVERRIDE_SCHEMA = vol.Schema(
    {
        vol.Optional("friction"): _POSITIVE,
        vol.Optional("noise_fraction"): _NON_NEGATIVE,
    }
)

ESTIMATORS_SCHEMA = vol.Schema(
    {
        vol.Optional("lsmw", default={}): vol.Schema(
            {
                vol.Optional("window", default=DEFAULT_WINDOW): vol.All(
                    vol.Coerce(int), vol.Range(min=1)
                ),
            }
        ),
        vol.Optional("rls", default={}): vol.Schema(
            {
                vol.Optional("lambda", default=DEFAULT_LAMBDA): vol.All(
                    vol.Coerce(float), vol.Range(min=0, max=1, min_included=False)
                ),
                vol.Optional("p0", default=DEFAULT_P0): _POSITIVE,
            }
        ),
        vol.Optional("rls_adaptive", default={}): vol.Schema(
            {
                vol.Optional("alpha1", default=DEFAULT_ALPHA1): _OPEN_FRACTION,
                vol.Optional("alpha2", default=DEFAULT_ALPHA2): _POSITIVE,
                vol.Optional("alpha3", default=None): vol.Any(None, _NON_NEGATIVE),
                vol.Optional("p0", default=DEFAULT_P0): _POSITIVE,
            }
        ),
        vol.Optional("kf", default={}): vol.Schema(
            {
                vol.Optional("q", default=None): vol.Any(None, _NON_NEGATIVE),
                vol.Optional("r", default=None): vol.Any(None, _POSITIVE),
                vol.Optional("calibration", default=DEFAULT_KF_CALIBRATION): vol.All(
                    vol.Coerce(int), vol.Range(min=3)
                ),
                vol.Optional("q_ratio", default=DEFAULT_KF_Q_RATIO): _NON_NEGATIVE,
            }
        ),
    }
)

MISSION_SCHEMA = vol.Schema(
    {
        vol.Optional("method", default=DEFAULT_MISSION_METHOD): vol.In(METHOD_ORDER),
        vol.Optional("per_agv_banks", default=False): vol.Boolean(),
        vol.Optional("k_candidates", default=DEFAULT_K_CANDIDATES): vol.All(
            vol.Coerce(int), vol.Range(min=1)
        ),
        vol.Optional("warmup", default=DEFAULT_WARMUP_TRAVERSALS): vol.All(
            vol.Coerce(int), vol.Range(min=0)
        ),
        vol.Optional("warmup_interval", default=DEFAULT_WARMUP_INTERVAL): _POSITIVE,
        vol.Optional("legs", default=DEFAULT_MISSION_LEGS): vol.All(
            vol.Coerce(int), vol.Range(min=1)
        ),
        vol.Optional("battery_age", default={}): vol.Schema(
            {
                vol.Optional(
                    BATTERY_AGE_NEW, default=DEFAULT_BATTERY_AGE[BATTERY_AGE_NEW]
                ): vol.All(vol.Coerce(float), vol.Range(min=0, max=1, max_included=False)),
                vol.Optional(
                    BATTERY_AGE_DRAINED,
                    default=DEFAULT_BATTERY_AGE[BATTERY_AGE_DRAINED],
                ): vol.All(vol.Coerce(float), vol.Range(min=0, max=1, max_included=False)),
            }
        ),
        vol.Optional("reservations", default=[]): [
            vol.ExactSequence([str, str, vol.Coerce(float), vol.Coerce(float)])
        ],
    }
)

CONFIG_SCHEMA = vol.Schema(
    {
        vol.Optional("seed", default=DEFAULT_SEED): vol.All(
            vol.Coerce(int), vol.Range(min=0, max=2**64 - 1)
        ),
        vol.Optional("debug", default=False): vol.Boolean(),
        vol.Optional("agv", default=DEFAULT_AGV): vol.All(str, vol.Length(min=1)),
        vol.Optional("sampling_interval", default=DEFAULT_SAMPLING_INTERVAL): _POSITIVE,
        vol.Optional("reference_arc", default=None): vol.Any(None, str),
        vol.Optional("battery", default={}): BATTERY_SCHEMA,
        vol.Optional("vehicle", default={}): vol.Schema(
            {vol.Optional("v_max", default=DEFAULT_V_MAX): _POSITIVE}
        ),
        vol.Optional("cost", default={}): COST_SCHEMA,
        vol.Optional("arcs", default={}): vol.Schema({str: ARC_OVERRIDE_SCHEMA}),
        vol.Optional("estimators", default={}): ESTIMATORS_SCHEMA,
        vol.Optional("mission", default={}): MISSION_SCHEMA,
    }
)


def parse_settings_text(text: str) -> dict[str, Any]:
    """Parse ``key value`` lines into a nested mapping.

    Dotted keys nest (``battery.t_empty 7500``), ``#`` starts a comment and
    the value text is typed with YAML (numbers, booleans, flow lists).
    """
    settings: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split(None, 1)
        if len(parts) != 2:
            raise ConfigError(f"line {lineno}: expected 'key value', got {line!r}")
        key, value_text = parts
        try:
            value = yaml.safe_load(value_text)
        except yaml.YAMLError as err:
            raise ConfigError(f"line {lineno}: cannot parse value {value_text!r}") from err

        node = settings
        *parents, leaf = key.split(".")
        for part in parents:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"line {lineno}: {key} nests below a scalar key")
            node = child
        if leaf in node:
            raise ConfigError(f"line {lineno}: duplicate key {key}")
        node[leaf] = value
    return settings


def validate_settings(raw: dict[str, Any]) -> dict[str, Any]:
    """Apply CONFIG_SCHEMA, filling in every default."""
    try:
        return CONFIG_SCHEMA(raw)
    except vol.Invalid as err:
        raise ConfigError(f"invalid configuration: {err}") from err


def load_settings(
    path: str | None = None, overrides: dict[str, Any] | None = None
) -> dict[str, Any]:
    """Load and validate a configuration file.

    Files ending in ``.yaml``/``.yml`` are read as a YAML mapping, anything
    else as ``key value`` lines. Without a path the defaults are returned.
    ``overrides`` maps dotted keys to values that replace the file's.
    """
    raw: dict[str, Any] = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as file:
            content = file.read()
        if os.path.splitext(path)[1].lower() in (".yaml", ".yml"):
            loaded = yaml.safe_load(content)
            if loaded is None:
                loaded = {}
            if not isinstance(loaded, dict):
                raise ConfigError(f"{path}: top level must be a mapping")
            raw = loaded
        else:
            raw = parse_settings_text(content)
        _LOGGER.debug("Loaded configuration from %s", path)

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        node = raw
        *parents, leaf = key.split(".")
        for part in parents:
            node = node.setdefault(part, {})
        node[leaf] = value
    return validate_settings(raw)


def _format_value(value: Any) -> str:
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format_number(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_format_value(item) for item in value) + "]"
    return str(value)


def flatten_settings(settings: dict[str, Any], prefix: str = "") -> list[str]:
    """Canonical sorted ``key value`` lines of a settings mapping."""
    lines: list[str] = []
    for key in sorted(settings):
        value = settings[key]
        dotted = f"{prefix}{key}"
        if isinstance(value, dict):
            lines.extend(flatten_settings(value, dotted + "."))
        else:
            lines.append(f"{dotted} {_format_value(value)}")
    return lines


def config_digest(settings: dict[str, Any]) -> str:
    """64-bit digest of the canonical configuration text."""
    return digest_lines(flatten_settings(settings))


def method_config_from_settings(
    settings: dict[str, Any], kind: str, overrides: dict[str, Any] | None = None
) -> MethodConfig:
    """Build the MethodConfig of ``kind`` from the ``estimators`` section.

    ``overrides`` uses MethodConfig field names; None values are ignored.
    """
    template = METHOD_TEMPLATES.get(kind)
    if template is None:
        raise ConfigError(f"unknown method {kind!r}")
    section = settings["estimators"][template["section"]]
    params = {
        METHOD_FIELD_NAMES.get(name, name): section[name] for name in template["params"]
    }
    params.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return MethodConfig(kind=kind, **params)
