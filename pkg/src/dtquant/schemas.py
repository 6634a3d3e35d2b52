"""Published JSON schemas for the CLI config files.

Every config file carries a `schema_version` header and is validated against
the matching schema here before any data is touched. Validation errors
surface as ConfigError with the offending JSON path.
"""

from __future__ import annotations

import json
from pathlib import Path

import jsonschema

from .errors import ConfigError

SCHEMA_VERSION = 1

_POSITIVE_INT = {"type": "integer", "minimum": 1}
_POSITIVE_NUM = {"type": "number", "exclusiveMinimum": 0}
_NONNEG_NUM = {"type": "number", "minimum": 0}

_GPT_SECTION = {
    "type": "object",
    "properties": {
        "n_layer": _POSITIVE_INT,
        "n_head": _POSITIVE_INT,
        "d_model": _POSITIVE_INT,
        "max_seq_len": _POSITIVE_INT,
    },
    "additionalProperties": False,
}

_DT_SECTION = {
    "type": "object",
    "properties": {
        "context_len": _POSITIVE_INT,
        "max_ep_len": _POSITIVE_INT,
    },
    "additionalProperties": False,
}

_LORA_SECTION = {
    "type": ["object", "null"],
    "properties": {
        "rank": _POSITIVE_INT,
        "alpha": {"type": ["number", "null"]},
        "target_roles": {"type": "array", "items": {"type": "string"}},
    },
    "additionalProperties": False,
}

_TRAIN_SECTION = {
    "type": "object",
    "properties": {
        "learning_rate": _POSITIVE_NUM,
        "weight_decay": _NONNEG_NUM,
        "batch_size": _POSITIVE_INT,
        "iterations": _POSITIVE_INT,
        "seed": {"type": "integer"},
        "grad_clip": {"type": ["number", "null"]},
    },
    "additionalProperties": False,
}

_ENV_SECTION = {
    "type": "object",
    "properties": {
        "initial_balance": _POSITIVE_NUM,
        "hmax": _POSITIVE_INT,
        "transaction_cost_rate": _NONNEG_NUM,
        "reward_scale": _POSITIVE_NUM,
        "gamma": _POSITIVE_NUM,
    },
    "additionalProperties": False,
}

_HEADER = {"schema_version": {"const": SCHEMA_VERSION}}

ENV_CONFIG_SCHEMA = {
    "type": "object",
    "properties": {**_HEADER, "env": _ENV_SECTION},
    "required": ["schema_version"],
    "additionalProperties": False,
}

DT_CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        **_HEADER,
        "gpt": _GPT_SECTION,
        "dt": _DT_SECTION,
        "lora": _LORA_SECTION,
        "train": _TRAIN_SECTION,
        "weights": {"type": ["string", "null"]},
    },
    "required": ["schema_version"],
    "additionalProperties": False,
}

BC_CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        **_HEADER,
        "train": _TRAIN_SECTION,
        "target_param_count": _POSITIVE_INT,
    },
    "required": ["schema_version", "target_param_count"],
    "additionalProperties": False,
}

COMPARE_CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        **_HEADER,
        "gpt": _GPT_SECTION,
        "dt": _DT_SECTION,
        "lora": _LORA_SECTION,
        "train": _TRAIN_SECTION,
        "env": _ENV_SECTION,
    },
    "required": ["schema_version"],
    "additionalProperties": False,
}

SCHEMAS = {
    "env": ENV_CONFIG_SCHEMA,
    "dt": DT_CONFIG_SCHEMA,
    "bc": BC_CONFIG_SCHEMA,
    "compare": COMPARE_CONFIG_SCHEMA,
}


def load_config(path: str | Path, schema_name: str) -> dict:
    """Read a JSON config file and validate it against a published schema."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path) as fh:
            config = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    validate_config(config, schema_name, source=str(path))
    return config


def validate_config(config: dict, schema_name: str, source: str = "<config>") -> None:
    try:
        jsonschema.validate(config, SCHEMAS[schema_name])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "(root)"
        raise ConfigError(f"{source}: schema violation at {where}: {exc.message}") from exc
