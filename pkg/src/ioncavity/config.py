"""TOML run configuration.

The top-level table mirrors :class:`SchemeConfig`, with ``[params]``,
``[params.cavity]``, ``[params.drive]`` and
``[params.drive.polarization_amplitudes]`` mirroring the nested types.
Frequencies are given in rad/us or as ``{mhz = f}`` meaning 2*pi*f rad/us.
Complex amplitudes may be written as ``[re, im]``.
"""
from __future__ import annotations

import sys
from dataclasses import fields
from importlib import resources
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .atom import Level, Pol, mhz
from .params import CavityModeConfig, ConfigError, DrivePulse, SchemeConfig, SystemParams

FREQUENCY_FIELDS = {
    "params.g0", "params.gamma_SP", "params.gamma_DP", "params.cavity.kappa",
    "params.cavity.detuning", "params.drive.peak_rabi", "params.drive.detuning",
}
REQUIRED = {
    "": ("params", "initial_state", "target_state"),
    "params": ("scheme", "drive"),
    "params.drive": ("peak_rabi", "detuning", "polarization_amplitudes"),
}
PRESET_FILES = {"sd_paper": "sd_paper.toml", "dd_paper": "dd_paper.toml"}


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _number(value: Any, path: str, frequency: bool = False) -> float:
    if frequency and isinstance(value, dict):
        if set(value) != {"mhz"}:
            raise ConfigError(path, "frequency table must be {mhz = value}")
        value = mhz(_number(value["mhz"], f"{path}.mhz"))
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    return float(value)


def _check_keys(table: dict, cls, path: str) -> None:
    if not isinstance(table, dict):
        raise ConfigError(path or "<root>", "expected a table")
    allowed = {f.name for f in fields(cls)}
    for key in table:
        if key not in allowed:
            raise ConfigError(_join(path, key), "unknown field")
    for key in REQUIRED.get(path, ()):
        if key not in table:
            raise ConfigError(_join(path, key), "required field missing")


def _scalars(table: dict, cls, path: str, skip=()) -> dict[str, Any]:
    out = {}
    for f in fields(cls):
        if f.name not in table or f.name in skip:
            continue
        p, v = _join(path, f.name), table[f.name]
        if p in FREQUENCY_FIELDS:
            out[f.name] = _number(v, p, frequency=True)
        elif f.type in ("float", float):
            out[f.name] = _number(v, p)
        elif f.type in ("int", int):
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError(p, f"expected an integer, got {v!r}")
            out[f.name] = v
        elif f.type in ("str", str):
            if not isinstance(v, str):
                raise ConfigError(p, f"expected a string, got {v!r}")
            out[f.name] = v
        else:
            out[f.name] = v
    return out


def _pol(value: Any, path: str) -> Pol:
    try:
        return Pol.parse(value)
    except (KeyError, ValueError, AttributeError):
        raise ConfigError(path, f"unknown polarization {value!r}") from None


def _amplitudes(table: Any, path: str) -> dict[Pol, complex]:
    if not isinstance(table, dict) or not table:
        raise ConfigError(path, "expected a table of polarization amplitudes")
    out = {}
    for key, v in table.items():
        p = _join(path, key)
        q = _pol(key, p)
        if isinstance(v, list):
            if len(v) != 2:
                raise ConfigError(p, "complex amplitude must be [re, im]")
            out[q] = complex(_number(v[0], p), _number(v[1], p))
        else:
            out[q] = complex(_number(v, p))
    return out


def _level(value: Any, path: str) -> Level:
    try:
        return Level.parse(value)
    except (TypeError, ValueError, AttributeError):
        raise ConfigError(path, f"cannot parse level {value!r}") from None


def config_from_dict(data: dict) -> SchemeConfig:
    _check_keys(data, SchemeConfig, "")
    params = data["params"]
    _check_keys(params, SystemParams, "params")
    drive_t = params["drive"]
    _check_keys(drive_t, DrivePulse, "params.drive")
    drive = DrivePulse(
        polarization_amplitudes=_amplitudes(drive_t["polarization_amplitudes"],
                                            "params.drive.polarization_amplitudes"),
        **_scalars(drive_t, DrivePulse, "params.drive", skip=("polarization_amplitudes",)),
    )
    cav_kw = {}
    if "cavity" in params:
        cav_t = params["cavity"]
        _check_keys(cav_t, CavityModeConfig, "params.cavity")
        cav_kw = _scalars(cav_t, CavityModeConfig, "params.cavity", skip=("polarizations",))
        if "polarizations" in cav_t:
            pols = cav_t["polarizations"]
            if not isinstance(pols, list):
                raise ConfigError("params.cavity.polarizations", "expected a list")
            cav_kw["polarizations"] = tuple(
                _pol(v, f"params.cavity.polarizations[{k}]") for k, v in enumerate(pols))
    sys_kw = _scalars(params, SystemParams, "params", skip=("drive", "cavity"))
    sp = SystemParams(drive=drive, cavity=CavityModeConfig(**cav_kw), **sys_kw)
    top = _scalars(data, SchemeConfig, "", skip=("params", "initial_state", "target_state", "window"))
    if "window" in data:
        w = data["window"]
        if not isinstance(w, list) or len(w) != 2:
            raise ConfigError("window", "expected [start, end]")
        top["window"] = (_number(w[0], "window"), _number(w[1], "window"))
    cfg = SchemeConfig(
        params=sp,
        initial_state=_level(data["initial_state"], "initial_state"),
        target_state=_level(data["target_state"], "target_state"),
        **top,
    )
    cfg.validate()
    return cfg


def _parse_toml(text: str, origin: str) -> dict:
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(origin, f"TOML syntax error: {exc}") from None


def load_config(path: str | Path) -> SchemeConfig:
    """Load a run configuration from a TOML file or a preset name."""
    text, origin = read_source(path)
    data = _parse_toml(text, origin)
    return config_from_dict(data)


def read_source(path: str | Path) -> tuple[str, str]:
    name = str(path)
    if name in PRESET_FILES and not Path(name).exists():
        return preset_text(name), f"preset:{name}"
    try:
        return Path(path).read_text(), name
    except OSError as exc:
        raise ConfigError(name, f"cannot read config: {exc.strerror}") from None


def preset_text(name: str) -> str:
    return resources.files("ioncavity.presets").joinpath(PRESET_FILES[name]).read_text()


def load_toml(path: str | Path) -> dict:
    text, origin = read_source(path)
    return _parse_toml(text, origin)
