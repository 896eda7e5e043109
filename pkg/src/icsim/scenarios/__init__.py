"""
Preconfigured plants and the logic registry.

PLC logic has the signature ``logic(regs, params) -> list[controller name]``
where ``regs`` is a name-addressed view of the PLC's own registers. HIL
physics has the signature ``physics(values, state, dt) -> dict`` returning
the physical values to commit.

A ``logic`` identifier in a config is either a registered name or a
``package.module:function`` import path.
"""

from __future__ import annotations

import importlib
from importlib import resources
from typing import Callable, Dict

PLC_LOGIC: Dict[str, Callable] = {}
HIL_LOGIC: Dict[str, Callable] = {}

SCENARIOS = ("solar_grid", "water_bottle", "ied_substation")


def plc_logic(name: str):
    def register(fn):
        PLC_LOGIC[name] = fn
        return fn
    return register


def hil_physics(name: str):
    def register(fn):
        HIL_LOGIC[name] = fn
        return fn
    return register


def resolve_logic(identifier: str, kind: str) -> Callable:
    table = HIL_LOGIC if kind == "hil" else PLC_LOGIC
    if identifier in table:
        return table[identifier]
    if ":" in identifier:
        module, _, attr = identifier.partition(":")
        try:
            return getattr(importlib.import_module(module), attr)
        except (ImportError, AttributeError) as exc:
            raise KeyError(identifier) from exc
    raise KeyError(identifier)


def logic_exists(identifier: str, kind: str) -> bool:
    try:
        resolve_logic(identifier, kind)
    except KeyError:
        return False
    return True


def scenario_text(name: str) -> str:
    if name not in SCENARIOS:
        raise KeyError(name)
    return resources.files(__name__).joinpath("configs", f"{name}.json").read_text(encoding="utf-8")


def load_scenario(name: str):
    from ..config import parse_config

    return parse_config(scenario_text(name))


def scenario_path(name: str):
    return resources.files(__name__).joinpath("configs", f"{name}.json")


def default_plan_path():
    return resources.files(__name__).joinpath("plans", "default.json")


from . import bottle, ied, solar  # noqa: E402,F401  (registers logic)
