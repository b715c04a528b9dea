"""JSON run configuration with sections ``params``, ``decay``, ``sim`` and ``tomo``.

Every key is optional; missing keys take the experimental defaults. Unknown
keys and wrongly typed values raise :class:`ConfigError` naming the field.
"""
from __future__ import annotations

import dataclasses
import json
import math
import types
import typing
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .analytic import ProtocolParams, ScalingMode
from .sim import MemoryDecayModel, SimConfig

SEED_ENV = "QRCONNECT_SEED"
TABLE_GRID = [0.001, 0.002, 0.003, 0.004, 0.005, 0.006, 0.007, 0.008]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimSection:
    mode: str = "memory"
    rounds: int = 10_000
    max_time: float | None = None
    master_seed: int = 0
    p_values: list[float] = field(default_factory=lambda: list(TABLE_GRID))
    phase_drift: float = 0.0
    record_states: bool = False
    phase_I: float = 0.0
    phase_II: float = 0.0
    double_excitation_coeff: float = 1.0
    bsm_noise: float = 0.0
    loading_time: float = 0.45
    active_window: float | None = None
    restart_new_window: bool = False
    pump_in_no_memory: bool = False
    workers: int = 1


@dataclass(frozen=True)
class TomoSection:
    synthesize: str = "dephased:0.8:337.5"
    total_counts: float = 656.0
    n_expected: float | None = None
    bases: list[str] = field(default_factory=lambda: [a + b for a in "HVDR" for b in "HVDR"])
    bootstrap: int = 100
    dilution: float = 0.1
    tol: float = 1e-10
    max_iter: int = 100_000


@dataclass(frozen=True)
class RunConfig:
    params: ProtocolParams = field(default_factory=ProtocolParams)
    decay: MemoryDecayModel = field(default_factory=MemoryDecayModel)
    sim: SimSection = field(default_factory=SimSection)
    tomo: TomoSection = field(default_factory=TomoSection)

    def sim_config(self, mode: str | ScalingMode | None = None, p: float | None = None) -> SimConfig:
        s = self.sim
        params = self.params if p is None else self.params.with_p(p)
        kwargs = {f.name: getattr(s, f.name) for f in fields(SimSection)
                  if f.name not in ("mode", "p_values")}
        return SimConfig(params=params, decay=self.decay, mode=ScalingMode(mode or s.mode), **kwargs)


_SECTIONS = {"params": ProtocolParams, "decay": MemoryDecayModel, "sim": SimSection, "tomo": TomoSection}
# decay time constants may be null (= never decays)
_INFINITE_OK = {"tau_short", "tau_long_2", "tau_long_3", "coherence_tau"}


def _check_type(path: str, name: str, value: Any, hint) -> Any:
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if value is None:
        if name in _INFINITE_OK:
            return math.inf
        if type(None) in args:
            return None
        raise ConfigError(f"{path}: null is not allowed")
    if origin in (typing.Union, types.UnionType):
        inner = [a for a in args if a is not type(None)]
        return _check_type(path, name, value, inner[0])
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list, got {type(value).__name__}")
        return [_check_type(f"{path}[{i}]", name, v, args[0]) for i, v in enumerate(value)]
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    return value


def _build(section: str, cls, data: Any):
    if not isinstance(data, dict):
        raise ConfigError(f"{section}: expected an object")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"{section}.{key}: unknown field")
        kwargs[key] = _check_type(f"{section}.{key}", key, value, hints[key])
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from None


def from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("top level: expected an object")
    if "config" in data and "outputs" in data:
        # a run manifest embeds the resolved configuration
        data = data["config"]
    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown section")
    parts = {name: _build(name, cls, data.get(name, {})) for name, cls in _SECTIONS.items()}
    cfg = RunConfig(**parts)
    try:
        ScalingMode(cfg.sim.mode)
    except ValueError:
        if cfg.sim.mode != "both":
            raise ConfigError(f"sim.mode: unknown mode {cfg.sim.mode!r}") from None
    return cfg


def load(path: str | Path | None) -> RunConfig:
    """Read a config (or run manifest) file; ``None`` gives the defaults."""
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return from_dict(data)


def _plain(value):
    if isinstance(value, float) and math.isinf(value):
        return None
    if isinstance(value, list):
        return [_plain(v) for v in value]
    return value


def to_dict(cfg: RunConfig) -> dict:
    out = {}
    for name in _SECTIONS:
        section = getattr(cfg, name)
        out[name] = {f.name: _plain(getattr(section, f.name)) for f in fields(section)}
    # p is derived from chi when chi is set; keep only one source
    if out["params"]["chi"] is not None:
        del out["params"]["p"]
    return out


def dumps(cfg: RunConfig) -> str:
    return json.dumps(to_dict(cfg), indent=2, sort_keys=True)


def replace_sim(cfg: RunConfig, **changes) -> RunConfig:
    return dataclasses.replace(cfg, sim=dataclasses.replace(cfg.sim, **changes))
