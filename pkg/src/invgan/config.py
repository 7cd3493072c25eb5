"""TOML run configuration: strict parsing and a round-trip serializer.

The file is flat apart from three tables: [backbone], [weights], [kernel].
Only `variant` is required; everything else falls back to package defaults.
Unknown keys are rejected rather than ignored so typos cannot silently
change an experiment, and serialize_config echoes every resolved value so
a run's manifest records the full effective configuration.
"""

from __future__ import annotations

import json
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError
from .losses import KernelSpec, LossWeights
from .models import BackboneSpec
from .training import TrainConfig

_TOP = {
    "variant": str,
    "batch_size": int,
    "lr_d": float,
    "lr_g": float,
    "beta1": float,
    "beta2": float,
    "epochs": int,
    "seed": int,
    "eval_every": int,
}
_BACKBONE = {
    "kind": str,
    "resolution": int,
    "channels": int,
    "d_z": int,
    "d_w": int,
    "d_f": int,
    "widths": list,
    "mapping_depth": int,
}
_WEIGHTS = {
    "lambda_gan": float,
    "lambda_lat": float,
    "lambda_fm": float,
    "lambda_cyc": float,
    "lambda_mmd": float,
    "lambda_pix": float,
}
_KERNEL = {"bandwidths": list, "estimator": str, "bandwidth_scales": list}


def _check_keys(section: str, got: dict, allowed: dict) -> None:
    for key in got:
        if key not in allowed:
            where = f"{section}.{key}" if section else key
            raise ConfigError(f"unknown config key {where!r}")


def _coerce(section: str, key: str, value, want: type):
    where = f"{section}.{key}" if section else key
    if want is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key {where!r} must be a number")
        return float(value)
    if want is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"config key {where!r} must be an integer")
        return value
    if not isinstance(value, want):
        raise ConfigError(f"config key {where!r} must be {want.__name__}")
    return value


def _section(raw: dict, name: str, schema: dict) -> dict:
    table = raw.get(name, {})
    if not isinstance(table, dict):
        raise ConfigError(f"config key {name!r} must be a table")
    _check_keys(name, table, schema)
    return {k: _coerce(name, k, v, schema[k]) for k, v in table.items()}


def parse_config_text(text: str) -> TrainConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from exc

    tables = {"backbone", "weights", "kernel"}
    top = {k: v for k, v in raw.items() if k not in tables}
    _check_keys("", top, _TOP)
    if "variant" not in top:
        raise ConfigError("config is missing required key 'variant'")
    kwargs = {k: _coerce("", k, v, _TOP[k]) for k, v in top.items()}

    backbone = _section(raw, "backbone", _BACKBONE)
    if "widths" in backbone:
        backbone["widths"] = tuple(
            _coerce("backbone.widths", str(i), v, int) for i, v in enumerate(backbone["widths"])
        )
    if backbone:
        kwargs["backbone"] = BackboneSpec(**backbone)

    weights = _section(raw, "weights", _WEIGHTS)
    if weights:
        kwargs["weights"] = LossWeights(**weights)

    kernel = _section(raw, "kernel", _KERNEL)
    if kernel:
        for key in ("bandwidths", "bandwidth_scales"):
            if key in kernel:
                kernel[key] = tuple(
                    _coerce(f"kernel.{key}", str(i), v, float) for i, v in enumerate(kernel[key])
                )
        kwargs["kernel"] = KernelSpec(**kernel)

    return TrainConfig(**kwargs)


def parse_config(path) -> TrainConfig:
    """Parse a TOML config file into a fully resolved TrainConfig."""
    return parse_config_text(Path(path).read_text())


def _fmt(value) -> str:
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_fmt(v) for v in value) + "]"
    raise ConfigError(f"cannot serialize config value {value!r}")


def serialize_config(config: TrainConfig) -> str:
    """Render config as TOML; parse_config_text inverts this exactly."""
    d = config.to_dict()
    lines = []
    for key in _TOP:
        lines.append(f"{key} = {_fmt(d[key])}")
    for name, schema in (("backbone", _BACKBONE), ("weights", _WEIGHTS), ("kernel", _KERNEL)):
        lines.append("")
        lines.append(f"[{name}]")
        for key in schema:
            value = d[name].get(key)
            if value is None:
                continue  # TOML has no null; absent means "use the default"
            lines.append(f"{key} = {_fmt(value)}")
    return "\n".join(lines) + "\n"
