"""Experiment configuration files.

Config files are TOML documents (``.cfg`` by convention) with four optional
tables::

    [environment]
    name = "graph"          # graph | toy_mc
    chain_len = 20          # graph only
    gamma = 0.98
    horizon = 20            # optional; defaults to chain_len (graph) or 100 (toy_mc)

    [policies]
    pi_e_p = 0.9            # probability of action 0
    pi_b_p = 0.5

    [sweep]
    n_values = [0, 5, 10]   # optional; defaults to 0..L
    batch_sizes = [128, 256, 512]
    trials = 32
    base_seed = 0
    families = ["SOPE", "WSOPE"]
    bootstrap_resamples = 1000

    [ratio]
    method = "model-based"  # oracle | model-based | minmax-tabular
    mode = "average"        # average | truncated
    model_alpha = 0.01
    minmax_ridge = 0.001

    [dr]
    q_source = "exact"      # exact | perturbed | estimated
    epsilon = 0.1
    q_horizon = "infinite"  # infinite | finite
    next_action = "expectation"

Unknown tables or keys are errors. Overrides are ``key=value`` strings where
``key`` is either ``table.key`` or the flat field name (``pi_b_p``,
``ratio_method``) and ``value`` is a TOML value; bare words are read as
strings.
"""
from __future__ import annotations

import sys
from dataclasses import fields, replace
from pathlib import Path
from typing import Iterable, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .harness import ConfigError, ExperimentConfig

PRESET_DIR = Path(__file__).parent / "presets"

# (table, key) -> ExperimentConfig field
SCHEMA = {
    ("environment", "name"): "environment",
    ("environment", "chain_len"): "chain_len",
    ("environment", "gamma"): "gamma",
    ("environment", "horizon"): "horizon",
    ("policies", "pi_e_p"): "pi_e_p",
    ("policies", "pi_b_p"): "pi_b_p",
    ("sweep", "n_values"): "n_values",
    ("sweep", "batch_sizes"): "batch_sizes",
    ("sweep", "trials"): "trials",
    ("sweep", "base_seed"): "base_seed",
    ("sweep", "families"): "families",
    ("sweep", "bootstrap_resamples"): "bootstrap_resamples",
    ("ratio", "method"): "ratio_method",
    ("ratio", "mode"): "ratio_mode",
    ("ratio", "model_alpha"): "model_alpha",
    ("ratio", "minmax_ridge"): "minmax_ridge",
    ("dr", "q_source"): "dr_q_source",
    ("dr", "epsilon"): "dr_epsilon",
    ("dr", "q_horizon"): "dr_q_horizon",
    ("dr", "next_action"): "dr_next_action",
}
TABLES = sorted({t for t, _ in SCHEMA})
FIELD_TYPES = {
    "environment": str,
    "chain_len": int,
    "gamma": float,
    "horizon": int,
    "pi_e_p": float,
    "pi_b_p": float,
    "n_values": "ints",
    "batch_sizes": "ints",
    "trials": int,
    "base_seed": int,
    "families": "strs",
    "bootstrap_resamples": int,
    "ratio_method": str,
    "ratio_mode": str,
    "model_alpha": float,
    "minmax_ridge": float,
    "dr_q_source": str,
    "dr_epsilon": float,
    "dr_q_horizon": str,
    "dr_next_action": str,
}


def _coerce(name: str, value, where: str):
    kind = FIELD_TYPES[name]
    bad = ConfigError(f"{where}: {name} expects {_describe(kind)}, got {value!r}")
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise bad
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise bad
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            raise bad
        return value
    if not isinstance(value, list):
        raise bad
    item = int if kind == "ints" else str
    for v in value:
        if isinstance(v, bool) or not isinstance(v, item):
            raise bad
    return tuple(value)


def _describe(kind) -> str:
    return {int: "an integer", float: "a number", str: "a string", "ints": "a list of integers", "strs": "a list of strings"}[kind]


def _from_document(doc: dict, where: str) -> dict:
    values = {}
    for table, body in doc.items():
        if table not in TABLES:
            raise ConfigError(f"{where}: unknown table or key {table!r}; expected one of {TABLES}")
        if not isinstance(body, dict):
            raise ConfigError(f"{where}: {table!r} must be a table")
        for key, value in body.items():
            name = SCHEMA.get((table, key))
            if name is None:
                known = sorted(k for t, k in SCHEMA if t == table)
                raise ConfigError(f"{where}: unknown key {table}.{key!r}; expected one of {known}")
            values[name] = _coerce(name, value, where)
    return values


def _resolve_key(key: str) -> str:
    if "." in key:
        table, _, sub = key.partition(".")
        name = SCHEMA.get((table, sub))
    else:
        name = key if key in FIELD_TYPES else None
    if name is None:
        raise ConfigError(f"override {key!r}: unknown key")
    return name


def _parse_value(raw: str):
    try:
        return tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        return raw.strip()


def parse_override(text: str) -> tuple:
    """``"table.key=value"`` or ``"field=value"`` -> ``(field, value)``."""
    key, sep, raw = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override {text!r}: expected key=value")
    name = _resolve_key(key.strip())
    return name, _coerce(name, _parse_value(raw.strip()), f"override {text!r}")


def resolve_path(path) -> Path:
    """A file path, or the name of a shipped preset (with or without ``.cfg``)."""
    p = Path(path)
    if p.exists():
        return p
    for candidate in (PRESET_DIR / p.name, PRESET_DIR / f"{p.name}.cfg"):
        if candidate.exists():
            return candidate
    raise ConfigError(f"config {str(path)!r} not found (also looked for a preset in {PRESET_DIR})")


def load_document(path) -> dict:
    p = resolve_path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"could not read config {p}: {exc}") from exc
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{p}: parse error: {exc}") from exc


def parse_config(path=None, overrides: Optional[Iterable[str]] = None) -> ExperimentConfig:
    """Read ``path`` (or start from defaults when ``None``), then apply overrides in order."""
    values = {}
    if path is not None:
        values = _from_document(load_document(path), str(path))
    for text in overrides or ():
        name, value = parse_override(text)
        values[name] = value
    return ExperimentConfig(**values)


def with_overrides(config: ExperimentConfig, overrides: Iterable[str]) -> ExperimentConfig:
    changes = dict(parse_override(t) for t in overrides)
    return replace(config, **changes)


def dump_config(config: ExperimentConfig) -> str:
    """TOML text that parses back to ``config``."""
    by_table = {}
    for (table, key), name in SCHEMA.items():
        value = getattr(config, name)
        if value is None:
            continue
        by_table.setdefault(table, []).append(f"{key} = {_toml_value(value)}")
    blocks = [f"[{t}]\n" + "\n".join(lines) for t, lines in by_table.items()]
    return "\n\n".join(blocks) + "\n"


def _toml_value(value) -> str:
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    return str(value)


assert set(FIELD_TYPES) == {f.name for f in fields(ExperimentConfig)}
