"""
Simulation configuration
========================

Typed tree for the JSON document that describes a plant, a strict parser
(unknown keys are errors), a serializer, and a validator that reports every
structural problem at once.

Document layout::

    {
      "name": "...", "tick_ms": 100, "seed": 0,
      "networks": [{"name": "ics_net", "subnet": "192.168.10.0/24"}],
      "serial_buses": [{"name": "rs485_a"}],
      "attackers": [{"name": "mallory", "network": {...}, "serial_buses": [...]}],
      "devices": [{"name": "plc1", "kind": "plc", ...}]
    }

The normative reference is ``icsim/schema/config.schema.json``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

from .modbus import Area, MAX_UNIT_ADDRESS

KINDS = ("hmi", "plc", "sensor", "actuator", "hil")

# which device kinds may carry each optional property
KIND_PROPERTIES: Dict[str, frozenset] = {
    "network": frozenset(KINDS),
    "inbound_connections": frozenset({"plc", "sensor", "actuator"}),
    "outbound_connections": frozenset({"hmi", "plc"}),
    "registers": frozenset({"hmi", "plc", "sensor", "actuator"}),
    "monitors": frozenset({"hmi", "plc"}),
    "controllers": frozenset({"hmi", "plc"}),
    "logic": frozenset({"plc", "hil"}),
    "physical_values": frozenset({"hil"}),
    "params": frozenset({"plc", "hil"}),
    "identity": frozenset({"plc", "sensor", "actuator"}),
    "scan_period_ticks": frozenset(KINDS),
    "restart_delay_ms": frozenset({"plc", "sensor", "actuator"}),
}

DEFAULT_TICK_MS = 100
DEFAULT_SEED = 0
DEFAULT_RESTART_DELAY_MS = 200


#
#   Errors raised while parsing
#

class ConfigError(Exception):
    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class ConfigSyntaxError(ConfigError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class UnknownKey(ConfigError):
    pass


class MissingKey(ConfigError):
    pass


class TypeMismatch(ConfigError):
    pass


class KindPropertyViolation(ConfigError):
    def __init__(self, device: str, key: str, kind: str, path: str):
        super().__init__(f"device '{device}' of kind '{kind}' may not define '{key}'", path)
        self.device = device
        self.key = key


#
#   Typed tree
#

@dataclass(frozen=True)
class NetworkDef:
    name: str
    subnet: str = ""


@dataclass(frozen=True)
class BusDef:
    name: str


@dataclass(frozen=True)
class NetworkAttachment:
    interface: str
    ip: str
    mac: Optional[str] = None


@dataclass(frozen=True)
class InboundConnection:
    type: str  # "tcp" | "serial"
    unit_id: int = 1
    port: Optional[int] = None
    bus: Optional[str] = None


@dataclass(frozen=True)
class OutboundConnection:
    name: str
    type: str
    target: str
    port: Optional[int] = None
    bus: Optional[str] = None


@dataclass(frozen=True)
class RegisterDecl:
    area: Area
    address: int
    count: int = 1
    initial: int = 0
    name: Optional[str] = None
    physical_value: Optional[str] = None
    scale: float = 1.0
    offset: float = 0.0


@dataclass(frozen=True)
class RegisterRef:
    area: Area
    address: int


@dataclass(frozen=True)
class MonitorDecl:
    connection: str
    remote: RegisterRef
    local: RegisterRef
    count: int = 1
    period_ticks: int = 1


@dataclass(frozen=True)
class ControllerDecl:
    name: str
    connection: str
    remote: RegisterRef
    local: RegisterRef
    count: int = 1


@dataclass(frozen=True)
class PhysicalValueDecl:
    name: str
    initial: float = 0.0


@dataclass(frozen=True)
class IdentityDecl:
    vendor: str
    product: str
    version: str


@dataclass(frozen=True)
class DeviceConfig:
    name: str
    kind: str
    network: Optional[NetworkAttachment] = None
    inbound_connections: Tuple[InboundConnection, ...] = ()
    outbound_connections: Tuple[OutboundConnection, ...] = ()
    registers: Tuple[RegisterDecl, ...] = ()
    monitors: Tuple[MonitorDecl, ...] = ()
    controllers: Tuple[ControllerDecl, ...] = ()
    logic: Optional[str] = None
    physical_values: Tuple[PhysicalValueDecl, ...] = ()
    params: Dict[str, Any] = field(default_factory=dict)
    identity: Optional[IdentityDecl] = None
    scan_period_ticks: int = 1
    restart_delay_ms: int = DEFAULT_RESTART_DELAY_MS

    def outbound(self, name: str) -> Optional[OutboundConnection]:
        return next((c for c in self.outbound_connections if c.name == name), None)

    def register_named(self, name: str) -> Optional[RegisterDecl]:
        return next((r for r in self.registers if r.name == name), None)


@dataclass(frozen=True)
class AttackerDecl:
    name: str
    network: Optional[NetworkAttachment] = None
    serial_buses: Tuple[str, ...] = ()


@dataclass(frozen=True)
class SimulationConfig:
    name: str
    networks: Tuple[NetworkDef, ...] = ()
    serial_buses: Tuple[BusDef, ...] = ()
    devices: Tuple[DeviceConfig, ...] = ()
    attackers: Tuple[AttackerDecl, ...] = ()
    tick_ms: int = DEFAULT_TICK_MS
    seed: int = DEFAULT_SEED

    def device(self, name: str) -> DeviceConfig:
        for d in self.devices:
            if d.name == name:
                return d
        raise KeyError(name)

    def devices_of(self, kind: str) -> List[DeviceConfig]:
        return [d for d in self.devices if d.kind == kind]


#
#   Parsing
#

class _Reader:
    """Walks a decoded JSON tree, checking keys and types with a path for errors."""

    def __init__(self, node: Any, path: str):
        self.node = node
        self.path = path

    def obj(self, allowed: Tuple[str, ...], required: Tuple[str, ...] = ()) -> Dict[str, Any]:
        if not isinstance(self.node, dict):
            raise TypeMismatch(f"expected object, got {type(self.node).__name__}", self.path)
        for key in self.node:
            if key not in allowed:
                raise UnknownKey(f"unknown key '{key}'", self.path)
        for key in required:
            if key not in self.node:
                raise MissingKey(f"missing required key '{key}'", self.path)
        return self.node


def _sub(path: str, key) -> str:
    if isinstance(key, int):
        return f"{path}[{key}]"
    return f"{path}.{key}" if path else key


def _str(node, path) -> str:
    if not isinstance(node, str):
        raise TypeMismatch(f"expected string, got {type(node).__name__}", path)
    return node


def _int(node, path, lo=None, hi=None) -> int:
    if isinstance(node, bool) or not isinstance(node, int):
        raise TypeMismatch(f"expected integer, got {type(node).__name__}", path)
    if (lo is not None and node < lo) or (hi is not None and node > hi):
        raise TypeMismatch(f"integer {node} outside [{lo}, {hi}]", path)
    return node


def _num(node, path) -> float:
    if isinstance(node, bool) or not isinstance(node, (int, float)):
        raise TypeMismatch(f"expected number, got {type(node).__name__}", path)
    return float(node)


def _list(node, path) -> list:
    if not isinstance(node, list):
        raise TypeMismatch(f"expected array, got {type(node).__name__}", path)
    return node


def _choice(node, path, options) -> str:
    value = _str(node, path)
    if value not in options:
        raise TypeMismatch(f"'{value}' is not one of {sorted(options)}", path)
    return value


def _area(node, path) -> Area:
    return Area(_choice(node, path, [a.value for a in Area]))


def _network_attachment(node, path) -> NetworkAttachment:
    d = _Reader(node, path).obj(("interface", "ip", "mac"), ("interface", "ip"))
    mac = d.get("mac")
    return NetworkAttachment(
        _str(d["interface"], _sub(path, "interface")),
        _str(d["ip"], _sub(path, "ip")),
        None if mac is None else _str(mac, _sub(path, "mac")),
    )


def _inbound(node, path) -> InboundConnection:
    d = _Reader(node, path).obj(("type", "unit_id", "port", "bus"), ("type",))
    kind = _choice(d["type"], _sub(path, "type"), ("tcp", "serial"))
    unit = _int(d.get("unit_id", 1), _sub(path, "unit_id"), 0, 255)
    if kind == "tcp":
        if "bus" in d:
            raise UnknownKey("'bus' is not valid on a tcp connection", path)
        return InboundConnection("tcp", unit, port=_int(d.get("port", 502), _sub(path, "port"), 1, 65535))
    if "port" in d:
        raise UnknownKey("'port' is not valid on a serial connection", path)
    if "bus" not in d:
        raise MissingKey("missing required key 'bus'", path)
    return InboundConnection("serial", _int(unit, _sub(path, "unit_id"), 1, MAX_UNIT_ADDRESS),
                             bus=_str(d["bus"], _sub(path, "bus")))


def _outbound(node, path) -> OutboundConnection:
    d = _Reader(node, path).obj(("name", "type", "target", "port", "bus"), ("name", "type", "target"))
    kind = _choice(d["type"], _sub(path, "type"), ("tcp", "serial"))
    name = _str(d["name"], _sub(path, "name"))
    target = _str(d["target"], _sub(path, "target"))
    if kind == "tcp":
        if "bus" in d:
            raise UnknownKey("'bus' is not valid on a tcp connection", path)
        return OutboundConnection(name, "tcp", target, port=_int(d.get("port", 502), _sub(path, "port"), 1, 65535))
    if "port" in d:
        raise UnknownKey("'port' is not valid on a serial connection", path)
    if "bus" not in d:
        raise MissingKey("missing required key 'bus'", path)
    return OutboundConnection(name, "serial", target, bus=_str(d["bus"], _sub(path, "bus")))


def _register(node, path) -> RegisterDecl:
    d = _Reader(node, path).obj(
        ("area", "address", "count", "initial", "name", "physical_value", "scale", "offset"),
        ("area", "address"),
    )
    name = d.get("name")
    pv = d.get("physical_value")
    return RegisterDecl(
        area=_area(d["area"], _sub(path, "area")),
        address=_int(d["address"], _sub(path, "address"), 0, 0xFFFF),
        count=_int(d.get("count", 1), _sub(path, "count"), 1, 0x10000),
        initial=_int(d.get("initial", 0), _sub(path, "initial"), 0, 0xFFFF),
        name=None if name is None else _str(name, _sub(path, "name")),
        physical_value=None if pv is None else _str(pv, _sub(path, "physical_value")),
        scale=_num(d.get("scale", 1.0), _sub(path, "scale")),
        offset=_num(d.get("offset", 0.0), _sub(path, "offset")),
    )


def _ref(node, path) -> RegisterRef:
    d = _Reader(node, path).obj(("area", "address"), ("area", "address"))
    return RegisterRef(_area(d["area"], _sub(path, "area")), _int(d["address"], _sub(path, "address"), 0, 0xFFFF))


def _monitor(node, path) -> MonitorDecl:
    d = _Reader(node, path).obj(("connection", "remote", "local", "count", "period_ticks"),
                                ("connection", "remote", "local"))
    return MonitorDecl(
        connection=_str(d["connection"], _sub(path, "connection")),
        remote=_ref(d["remote"], _sub(path, "remote")),
        local=_ref(d["local"], _sub(path, "local")),
        count=_int(d.get("count", 1), _sub(path, "count"), 1, 2000),
        period_ticks=_int(d.get("period_ticks", 1), _sub(path, "period_ticks"), 1),
    )


def _controller(node, path) -> ControllerDecl:
    d = _Reader(node, path).obj(("name", "connection", "remote", "local", "count"),
                                ("name", "connection", "remote", "local"))
    return ControllerDecl(
        name=_str(d["name"], _sub(path, "name")),
        connection=_str(d["connection"], _sub(path, "connection")),
        remote=_ref(d["remote"], _sub(path, "remote")),
        local=_ref(d["local"], _sub(path, "local")),
        count=_int(d.get("count", 1), _sub(path, "count"), 1, 1968),
    )


def _physical_value(node, path) -> PhysicalValueDecl:
    d = _Reader(node, path).obj(("name", "initial"), ("name",))
    return PhysicalValueDecl(_str(d["name"], _sub(path, "name")), _num(d.get("initial", 0.0), _sub(path, "initial")))


def _params(node, path) -> Dict[str, Any]:
    if not isinstance(node, dict):
        raise TypeMismatch(f"expected object, got {type(node).__name__}", path)
    out = {}
    for key, value in node.items():
        if isinstance(value, (bool, int, float)):
            out[key] = value
        else:
            raise TypeMismatch("parameter values must be numbers or booleans", _sub(path, key))
    return out


def _identity(node, path) -> IdentityDecl:
    d = _Reader(node, path).obj(("vendor", "product", "version"), ("vendor", "product", "version"))
    return IdentityDecl(*(_str(d[k], _sub(path, k)) for k in ("vendor", "product", "version")))


_DEVICE_KEYS = ("name", "kind") + tuple(KIND_PROPERTIES)


def _device(node, path) -> DeviceConfig:
    d = _Reader(node, path).obj(_DEVICE_KEYS, ("name", "kind"))
    name = _str(d["name"], _sub(path, "name"))
    kind = _choice(d["kind"], _sub(path, "kind"), KINDS)
    for key in d:
        if key in KIND_PROPERTIES and kind not in KIND_PROPERTIES[key]:
            raise KindPropertyViolation(name, key, kind, _sub(path, key))

    def many(key, fn):
        p = _sub(path, key)
        return tuple(fn(item, _sub(p, i)) for i, item in enumerate(_list(d.get(key, []), p)))

    return DeviceConfig(
        name=name,
        kind=kind,
        network=_network_attachment(d["network"], _sub(path, "network")) if "network" in d else None,
        inbound_connections=many("inbound_connections", _inbound),
        outbound_connections=many("outbound_connections", _outbound),
        registers=many("registers", _register),
        monitors=many("monitors", _monitor),
        controllers=many("controllers", _controller),
        logic=_str(d["logic"], _sub(path, "logic")) if "logic" in d else None,
        physical_values=many("physical_values", _physical_value),
        params=_params(d.get("params", {}), _sub(path, "params")),
        identity=_identity(d["identity"], _sub(path, "identity")) if "identity" in d else None,
        scan_period_ticks=_int(d.get("scan_period_ticks", 1), _sub(path, "scan_period_ticks"), 1),
        restart_delay_ms=_int(d.get("restart_delay_ms", DEFAULT_RESTART_DELAY_MS),
                              _sub(path, "restart_delay_ms"), 0),
    )


def _attacker(node, path) -> AttackerDecl:
    d = _Reader(node, path).obj(("name", "network", "serial_buses"), ("name",))
    buses = _list(d.get("serial_buses", []), _sub(path, "serial_buses"))
    return AttackerDecl(
        name=_str(d["name"], _sub(path, "name")),
        network=_network_attachment(d["network"], _sub(path, "network")) if "network" in d else None,
        serial_buses=tuple(_str(b, _sub(_sub(path, "serial_buses"), i)) for i, b in enumerate(buses)),
    )


def config_from_dict(doc: Any) -> SimulationConfig:
    d = _Reader(doc, "").obj(
        ("name", "networks", "serial_buses", "devices", "attackers", "tick_ms", "seed"), ("name",)
    )

    def many(key, fn):
        return tuple(fn(item, _sub(key, i)) for i, item in enumerate(_list(d.get(key, []), key)))

    def network(node, path):
        n = _Reader(node, path).obj(("name", "subnet"), ("name",))
        return NetworkDef(_str(n["name"], _sub(path, "name")), _str(n.get("subnet", ""), _sub(path, "subnet")))

    def bus(node, path):
        b = _Reader(node, path).obj(("name",), ("name",))
        return BusDef(_str(b["name"], _sub(path, "name")))

    return SimulationConfig(
        name=_str(d["name"], "name"),
        networks=many("networks", network),
        serial_buses=many("serial_buses", bus),
        devices=many("devices", _device),
        attackers=many("attackers", _attacker),
        tick_ms=_int(d.get("tick_ms", DEFAULT_TICK_MS), "tick_ms", 1),
        seed=_int(d.get("seed", DEFAULT_SEED), "seed", -(2 ** 63), 2 ** 64 - 1),
    )


def parse_config(text: str) -> SimulationConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigSyntaxError(exc.msg, exc.lineno, exc.colno) from exc
    return config_from_dict(doc)


def load_config(path) -> SimulationConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


#
#   Serialization
#

def _ref_dict(ref: RegisterRef) -> dict:
    return {"area": ref.area.value, "address": ref.address}


def _drop_none(d: dict) -> dict:
    return {k: v for k, v in d.items() if v is not None}


def device_to_dict(dev: DeviceConfig) -> dict:
    out: Dict[str, Any] = {"name": dev.name, "kind": dev.kind}
    allowed = {k for k, kinds in KIND_PROPERTIES.items() if dev.kind in kinds}
    if dev.network is not None:
        out["network"] = _drop_none(vars(dev.network).copy())
    body = {
        "inbound_connections": [_drop_none(vars(c).copy()) for c in dev.inbound_connections],
        "outbound_connections": [_drop_none(vars(c).copy()) for c in dev.outbound_connections],
        "registers": [
            _drop_none({
                "area": r.area.value, "address": r.address, "count": r.count, "initial": r.initial,
                "name": r.name, "physical_value": r.physical_value, "scale": r.scale, "offset": r.offset,
            })
            for r in dev.registers
        ],
        "monitors": [
            {"connection": m.connection, "remote": _ref_dict(m.remote), "local": _ref_dict(m.local),
             "count": m.count, "period_ticks": m.period_ticks}
            for m in dev.monitors
        ],
        "controllers": [
            {"name": c.name, "connection": c.connection, "remote": _ref_dict(c.remote),
             "local": _ref_dict(c.local), "count": c.count}
            for c in dev.controllers
        ],
        "logic": dev.logic,
        "physical_values": [{"name": p.name, "initial": p.initial} for p in dev.physical_values],
        "params": dict(dev.params),
        "identity": None if dev.identity is None else vars(dev.identity).copy(),
        "scan_period_ticks": dev.scan_period_ticks,
        "restart_delay_ms": dev.restart_delay_ms,
    }
    for key, value in body.items():
        if key in allowed and value is not None:
            out[key] = value
    return out


def config_to_dict(cfg: SimulationConfig) -> dict:
    return {
        "name": cfg.name,
        "tick_ms": cfg.tick_ms,
        "seed": cfg.seed,
        "networks": [{"name": n.name, "subnet": n.subnet} for n in cfg.networks],
        "serial_buses": [{"name": b.name} for b in cfg.serial_buses],
        "attackers": [
            _drop_none({
                "name": a.name,
                "network": None if a.network is None else _drop_none(vars(a.network).copy()),
                "serial_buses": list(a.serial_buses),
            })
            for a in cfg.attackers
        ],
        "devices": [device_to_dict(d) for d in cfg.devices],
    }


def serialize_config(cfg: SimulationConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=2)


#
#   Validation
#

@dataclass(frozen=True)
class Violation:
    kind: str
    device: str
    path: str
    message: str

    def __str__(self):
        return f"{self.kind} [{self.device}] {self.path}: {self.message}"


DANGLING_REFERENCE = "DanglingReference"
DUPLICATE_NAME = "DuplicateName"
DUPLICATE_ENDPOINT = "DuplicateEndpoint"
UNIT_ID_COLLISION = "UnitIdCollision"
WRITABLE_AREA = "WritableAreaViolation"
PURDUE = "PurdueViolation"
KIND_PROPERTY = "KindPropertyViolation"
UNREACHABLE = "Unreachable"
UNKNOWN_PHYSICAL_VALUE = "UnknownPhysicalValue"
DUPLICATE_PHYSICAL_VALUE = "DuplicatePhysicalValue"
UNKNOWN_LOGIC = "UnknownLogic"
MULTIPLE_BUS_MASTERS = "MultipleBusMasters"
REGISTER_OVERLAP = "RegisterOverlap"
RANGE_ERROR = "RangeError"


def _cells(dev: DeviceConfig) -> Dict[Area, set]:
    cells: Dict[Area, set] = {a: set() for a in Area}
    for r in dev.registers:
        cells[r.area].update(range(r.address, r.address + r.count))
    return cells


def validate(cfg: SimulationConfig) -> List[Violation]:
    """Return every structural problem in ``cfg``; an empty list means deployable."""
    from .scenarios import logic_exists

    out: List[Violation] = []

    def add(kind, device, path, message):
        out.append(Violation(kind, device, path, message))

    networks = {n.name for n in cfg.networks}
    buses = {b.name for b in cfg.serial_buses}
    devices: Dict[str, DeviceConfig] = {}
    for i, dev in enumerate(cfg.devices):
        if dev.name in devices:
            add(DUPLICATE_NAME, dev.name, f"devices[{i}].name", f"device name '{dev.name}' used twice")
        devices.setdefault(dev.name, dev)
    for i, att in enumerate(cfg.attackers):
        if att.name in devices:
            add(DUPLICATE_NAME, att.name, f"attackers[{i}].name", "attacker name collides with a device")

    physical: Dict[str, str] = {}
    for dev in cfg.devices:
        for j, pv in enumerate(dev.physical_values):
            if pv.name in physical:
                add(DUPLICATE_PHYSICAL_VALUE, dev.name, f"devices[{dev.name}].physical_values[{j}]",
                    f"'{pv.name}' already declared by '{physical[pv.name]}'")
            else:
                physical[pv.name] = dev.name

    # addressing
    ips: Dict[Tuple[str, str], str] = {}
    for owner, att_path, net in [(d.name, f"devices[{d.name}].network", d.network) for d in cfg.devices] + \
            [(a.name, f"attackers[{a.name}].network", a.network) for a in cfg.attackers]:
        if net is None:
            continue
        if net.interface not in networks:
            add(DANGLING_REFERENCE, owner, f"{att_path}.interface", f"unknown network '{net.interface}'")
        key = (net.interface, net.ip)
        if key in ips:
            add(DUPLICATE_ENDPOINT, owner, f"{att_path}.ip", f"{net.ip} on '{net.interface}' also used by '{ips[key]}'")
        else:
            ips[key] = owner
    for att in cfg.attackers:
        for j, b in enumerate(att.serial_buses):
            if b not in buses:
                add(DANGLING_REFERENCE, att.name, f"attackers[{att.name}].serial_buses[{j}]", f"unknown bus '{b}'")

    bus_units: Dict[Tuple[str, int], str] = {}
    bus_masters: Dict[str, str] = {}
    for dev in cfg.devices:
        base = f"devices[{dev.name}]"
        for key, kinds in KIND_PROPERTIES.items():
            value = getattr(dev, key)
            default = DeviceConfig(dev.name, dev.kind)
            if dev.kind not in kinds and value != getattr(default, key):
                add(KIND_PROPERTY, dev.name, f"{base}.{key}", f"kind '{dev.kind}' may not define '{key}'")
        if dev.kind in ("sensor", "actuator") and dev.outbound_connections:
            add(PURDUE, dev.name, f"{base}.outbound_connections", "field devices may not act as Modbus clients")
        if dev.kind == "hmi" and dev.inbound_connections:
            add(PURDUE, dev.name, f"{base}.inbound_connections", "HMIs may not expose Modbus servers")

        ports = set()
        for j, inb in enumerate(dev.inbound_connections):
            p = f"{base}.inbound_connections[{j}]"
            if inb.type == "tcp":
                if dev.network is None:
                    add(DANGLING_REFERENCE, dev.name, p, "tcp server on a device without a network attachment")
                if inb.port in ports:
                    add(DUPLICATE_ENDPOINT, dev.name, f"{p}.port", f"port {inb.port} bound twice")
                ports.add(inb.port)
            else:
                if inb.bus not in buses:
                    add(DANGLING_REFERENCE, dev.name, f"{p}.bus", f"unknown bus '{inb.bus}'")
                key = (inb.bus, inb.unit_id)
                if key in bus_units:
                    add(UNIT_ID_COLLISION, dev.name, f"{p}.unit_id",
                        f"unit {inb.unit_id} on '{inb.bus}' also used by '{bus_units[key]}'")
                else:
                    bus_units[key] = dev.name
        for j, outb in enumerate(dev.outbound_connections):
            if outb.type == "serial" and outb.bus in bus_masters and bus_masters[outb.bus] != dev.name:
                add(MULTIPLE_BUS_MASTERS, dev.name, f"{base}.outbound_connections[{j}].bus",
                    f"bus '{outb.bus}' already mastered by '{bus_masters[outb.bus]}'")
            elif outb.type == "serial":
                bus_masters[outb.bus] = dev.name

        # registers
        seen = {a: set() for a in Area}
        names = set()
        for j, reg in enumerate(dev.registers):
            p = f"{base}.registers[{j}]"
            if reg.address + reg.count > 0x10000:
                add(RANGE_ERROR, dev.name, p, "register block runs past address 65535")
            span = set(range(reg.address, reg.address + reg.count))
            if span & seen[reg.area]:
                add(REGISTER_OVERLAP, dev.name, p, f"{reg.area.value} block overlaps an earlier declaration")
            seen[reg.area] |= span
            if reg.name is not None:
                if reg.name in names:
                    add(DUPLICATE_NAME, dev.name, f"{p}.name", f"register name '{reg.name}' used twice")
                names.add(reg.name)
            if reg.physical_value is not None:
                if reg.physical_value not in physical:
                    add(UNKNOWN_PHYSICAL_VALUE, dev.name, f"{p}.physical_value",
                        f"'{reg.physical_value}' is not declared by any HIL")
                if reg.count != 1:
                    add(RANGE_ERROR, dev.name, f"{p}.count", "linked registers must have count 1")
                if dev.kind == "sensor" and reg.area.writable:
                    add(WRITABLE_AREA, dev.name, f"{p}.area",
                        f"sensor links must use read-only areas, not {reg.area.value}")
                elif dev.kind == "actuator" and not reg.area.writable:
                    add(WRITABLE_AREA, dev.name, f"{p}.area",
                        f"actuator links must use writable areas, not {reg.area.value}")
                elif dev.kind in ("hmi", "plc"):
                    add(PURDUE, dev.name, f"{p}.physical_value", "only field devices touch physical values")
            if reg.initial and reg.area.is_bit and reg.initial not in (0, 1):
                add(RANGE_ERROR, dev.name, f"{p}.initial", "bit registers take 0 or 1")

        if dev.logic is not None and not logic_exists(dev.logic, dev.kind):
            add(UNKNOWN_LOGIC, dev.name, f"{base}.logic", f"no {dev.kind} logic named '{dev.logic}'")
        if dev.kind == "hil" and dev.logic is None:
            add(UNKNOWN_LOGIC, dev.name, f"{base}.logic", "HIL devices need a logic identifier")

        own = _cells(dev)
        for j, conn in enumerate(dev.outbound_connections):
            _check_outbound(dev, conn, f"{base}.outbound_connections[{j}]", devices, add)
        controller_names = set()
        for key, items in (("monitors", dev.monitors), ("controllers", dev.controllers)):
            for j, item in enumerate(items):
                p = f"{base}.{key}[{j}]"
                conn = dev.outbound(item.connection)
                if conn is None:
                    add(DANGLING_REFERENCE, dev.name, f"{p}.connection", f"no outbound connection '{item.connection}'")
                elif conn.target not in devices:
                    add(DANGLING_REFERENCE, dev.name, f"{p}.connection",
                        f"connection '{conn.name}' targets unknown device '{conn.target}'")
                else:
                    remote = _cells(devices[conn.target])[item.remote.area]
                    if not set(range(item.remote.address, item.remote.address + item.count)) <= remote:
                        add(DANGLING_REFERENCE, dev.name, f"{p}.remote",
                            f"{conn.target} has no {item.remote.area.value} "
                            f"{item.remote.address}..{item.remote.address + item.count - 1}")
                if not set(range(item.local.address, item.local.address + item.count)) <= own[item.local.area]:
                    add(DANGLING_REFERENCE, dev.name, f"{p}.local",
                        f"no local {item.local.area.value} {item.local.address}..{item.local.address + item.count - 1}")
                if key == "controllers":
                    if not item.remote.area.writable:
                        add(WRITABLE_AREA, dev.name, f"{p}.remote.area",
                            f"controllers cannot write {item.remote.area.value}")
                    if item.remote.area.is_bit != item.local.area.is_bit:
                        add(WRITABLE_AREA, dev.name, f"{p}.local.area", "bit/word width mismatch")
                    if item.name in controller_names:
                        add(DUPLICATE_NAME, dev.name, f"{p}.name", f"controller '{item.name}' defined twice")
                    controller_names.add(item.name)
                elif item.remote.area.is_bit != item.local.area.is_bit:
                    add(WRITABLE_AREA, dev.name, f"{p}.local.area", "bit/word width mismatch")
    return out


def _check_outbound(dev, conn, path, devices, add):
    target = devices.get(conn.target)
    if target is None:
        add(DANGLING_REFERENCE, dev.name, f"{path}.target", f"unknown device '{conn.target}'")
        return
    if conn.type == "tcp":
        if not any(i.type == "tcp" and i.port == conn.port for i in target.inbound_connections):
            add(DANGLING_REFERENCE, dev.name, f"{path}.port", f"'{conn.target}' serves nothing on tcp port {conn.port}")
        elif dev.network is None or target.network is None or dev.network.interface != target.network.interface:
            add(UNREACHABLE, dev.name, path, f"'{dev.name}' and '{conn.target}' share no network")
    else:
        if not any(i.type == "serial" and i.bus == conn.bus for i in target.inbound_connections):
            add(UNREACHABLE, dev.name, f"{path}.bus", f"'{conn.target}' is not attached to bus '{conn.bus}'")
