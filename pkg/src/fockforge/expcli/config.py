"""Experiment configuration: TOML loading, schema validation and per-kind
defaults.

Angles are radians; any angle key may instead be given with a ``_deg``
suffix (e.g. ``waveplate_angle_jitter_deg``) and is converted on load.
"""

from __future__ import annotations

import copy
import math
from pathlib import Path
from typing import Any

import jsonschema

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

KINDS = (
    "delay_scan",
    "power_scan",
    "hom",
    "tomo2",
    "tomo4",
    "tomo_fock",
    "fringe1",
    "fringe2",
    "fringe4",
    "brightness",
    "budget",
)

SAMPLING_KINDS = {"delay_scan", "power_scan", "hom", "tomo2", "tomo4", "tomo_fock", "fringe1", "fringe2", "fringe4"}

ANGLE_KEYS = {"waveplate_angle_jitter_rad", "min", "max", "theta"}


class ConfigError(ValueError):
    """Invalid experiment config; ``errors`` lists ``(field, message)`` pairs."""

    def __init__(self, errors: list[tuple[str, str]]):
        self.errors = errors
        super().__init__("; ".join(f"{f}: {m}" for f, m in errors))


_num = {"type": "number"}
_nonneg = {"type": "number", "minimum": 0}
_prob = {"type": "number", "minimum": 0, "maximum": 1}

SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["kind"],
    "additionalProperties": False,
    "properties": {
        "kind": {"enum": list(KINDS)},
        "seed": {"type": "integer", "minimum": 0},
        "output": {"type": "string"},
        "description": {"type": "string"},
        "squeeze_r": _nonneg,
        "integration_s": {"type": "number", "exclusiveMinimum": 0},
        "cutoff": {"type": "integer", "minimum": 1, "maximum": 12},
        "pump": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "p1": _nonneg,
                "p2": _nonneg,
                "rep_rate": {"type": "number", "exclusiveMinimum": 0},
                "delay": _num,
                "pulse_fwhm": {"type": "number", "exclusiveMinimum": 0},
                "mode": {"enum": ["dual", "single"]},
                "ref_power": {"type": "number", "exclusiveMinimum": 0},
                "ref_pairs_per_pulse": _nonneg,
            },
        },
        "noise": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "waveplate_angle_jitter_rad": _nonneg,
                "distinguishability": _prob,
                "include_higher_order": {"type": "boolean"},
            },
        },
        "detector": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "efficiency": _prob,
                "dark_rate_hz": _nonneg,
                "window_s": _nonneg,
                "dark_click_prob": _prob,
                "raw": {"type": "boolean"},
            },
        },
        "tree": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "h_detectors": {"type": "integer", "minimum": 1, "maximum": 8},
                "v_detectors": {"type": "integer", "minimum": 1, "maximum": 8},
            },
        },
        "losses": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "waveguide": _nonneg,
                "coupler": _nonneg,
                "manipulation": _nonneg,
                "filters": _nonneg,
                "detector": _nonneg,
                "stated_total_db": _nonneg,
            },
        },
        "scan": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "min": _num,
                "max": _num,
                "points": {"type": "integer", "minimum": 2},
                "theta": _num,
                "endpoint": {"type": "boolean"},
                "fixed_power": _nonneg,
            },
        },
        "hom": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "c_max": {"type": "number", "exclusiveMinimum": 0},
                "envelope_fwhm": {"type": "number", "exclusiveMinimum": 0},
                "accidental_fraction": _nonneg,
            },
        },
        "tomography": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "resamples": {"type": "integer", "minimum": 0},
                "counts_per_setting": {"type": "number", "exclusiveMinimum": 0},
                "fock_state": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 2, "maxItems": 2},
            },
        },
        "brightness": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"postprocessing_factor": _nonneg},
        },
        "delay_scan": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "peak_counts": {"type": "number", "exclusiveMinimum": 0},
                "background_counts": _nonneg,
            },
        },
    },
}

_BASE = {
    "seed": 0,
    "cutoff": 8,
    "integration_s": 1.0,
    "pump": {
        "p1": 80.0,
        "p2": 80.0,
        "rep_rate": 100e6,
        "delay": 0.0,
        "pulse_fwhm": 23.0,
        "mode": "dual",
        "ref_power": 80.0,
        "ref_pairs_per_pulse": 0.002,
    },
    "noise": {"waveplate_angle_jitter_rad": 0.0, "distinguishability": 1.0, "include_higher_order": False},
    "detector": {"efficiency": 0.85, "dark_rate_hz": 100.0, "window_s": 1.0e-9, "raw": True},
    "losses": {
        "waveguide": 1.0,
        "coupler": 5.0,
        "manipulation": 4.3,
        "filters": 2.0,
        "detector": 0.7,
        "stated_total_db": 12.0,
    },
}

# per-kind overrides on top of _BASE, pinned to the stated experimental conditions
KIND_DEFAULTS: dict[str, dict[str, Any]] = {
    "delay_scan": {
        "scan": {"min": -60.0, "max": 60.0, "points": 41},
        "delay_scan": {"peak_counts": 2000.0, "background_counts": 50.0},
        "integration_s": 10.0,
    },
    "power_scan": {"scan": {"min": 20.0, "max": 200.0, "points": 10, "fixed_power": 80.0}, "integration_s": 10.0},
    "hom": {
        "scan": {"min": -60.0, "max": 60.0, "points": 41},
        "hom": {"c_max": 1000.0, "envelope_fwhm": 23.0, "accidental_fraction": 0.0},
        "noise": {"distinguishability": 0.97},
    },
    "tomo2": {
        "detector": {"window_s": 0.8e-9},
        "tree": {"h_detectors": 2, "v_detectors": 2},
        "integration_s": 1.0,
        "tomography": {"resamples": 20},
    },
    "tomo4": {
        "pump": {"p1": 400.0, "p2": 400.0},
        "tree": {"h_detectors": 3, "v_detectors": 3},
        "integration_s": 600.0,
        "tomography": {"resamples": 20},
    },
    "tomo_fock": {
        "pump": {"p1": 400.0, "p2": 400.0},
        "tree": {"h_detectors": 3, "v_detectors": 3},
        "integration_s": 600.0,
        "tomography": {"resamples": 20, "fock_state": [2, 2]},
    },
    "fringe1": {
        "scan": {"min": 0.0, "max": 2 * math.pi, "points": 25, "theta": math.pi / 4, "endpoint": False},
        "tree": {"h_detectors": 1, "v_detectors": 1},
        "integration_s": 1.0e-4,
    },
    "fringe2": {
        "scan": {"min": 0.0, "max": 2 * math.pi, "points": 25, "theta": math.pi / 4, "endpoint": False},
        "detector": {"window_s": 0.8e-9},
        "tree": {"h_detectors": 1, "v_detectors": 1},
        "integration_s": 1.0,
    },
    "fringe4": {
        "pump": {"p1": 250.0, "p2": 250.0},
        "scan": {"min": 0.0, "max": 2 * math.pi, "points": 25, "theta": math.pi / 4, "endpoint": False},
        "tree": {"h_detectors": 1, "v_detectors": 3},
        "integration_s": 600.0,
    },
    "brightness": {"pump": {"p1": 250.0, "p2": 250.0}, "brightness": {"postprocessing_factor": 0.1}},
    "budget": {},
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _convert_degrees(doc: Any, path: str = "") -> tuple[Any, list[tuple[str, str]]]:
    errors: list[tuple[str, str]] = []
    if not isinstance(doc, dict):
        return doc, errors
    out = {}
    for key, value in doc.items():
        here = f"{path}.{key}" if path else key
        if isinstance(value, dict):
            value, errs = _convert_degrees(value, here)
            errors += errs
            out[key] = value
            continue
        if key.endswith("_deg"):
            stem = key[: -len("_deg")]
            target = stem if stem in ANGLE_KEYS else stem + "_rad"
            if target not in ANGLE_KEYS:
                errors.append((here, "degree suffix not allowed on this field"))
                continue
            if target in doc:
                errors.append((here, f"given together with {target}"))
                continue
            if not isinstance(value, (int, float)):
                errors.append((here, "must be a number"))
                continue
            out[target] = math.radians(value)
        else:
            out[key] = value
    return out, errors


def validate_config(raw: dict) -> dict:
    """Return the fully defaulted config or raise :class:`ConfigError`."""
    doc, errors = _convert_degrees(raw)
    scan = raw.get("scan")
    if isinstance(scan, dict) and not str(raw.get("kind", "")).startswith("fringe"):
        errors += [(f"scan.{k}", "degree units only apply to phase scans") for k in scan if k.endswith("_deg")]
    validator = jsonschema.Draft202012Validator(SCHEMA)
    for err in sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path)):
        field = ".".join(str(p) for p in err.absolute_path) or "<root>"
        errors.append((field, err.message))
    if errors:
        raise ConfigError(errors)
    kind = doc["kind"]
    if kind in SAMPLING_KINDS and "seed" not in doc:
        raise ConfigError([("seed", f"required for sampling experiment '{kind}'")])
    cfg = _merge(_merge(_BASE, KIND_DEFAULTS[kind]), doc)
    scan = cfg.get("scan")
    if scan and scan["max"] <= scan["min"]:
        raise ConfigError([("scan.max", "must exceed scan.min")])
    return cfg


def load_config(path: str | Path) -> dict:
    p = Path(path)
    try:
        with p.open("rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([("<file>", f"TOML parse error: {exc}")]) from exc
    return validate_config(raw)
