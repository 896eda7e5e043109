"""
Device runtimes
===============

One runtime per configured device. Field devices (sensors, actuators) serve
Modbus and bridge registers to the physical store; PLCs and HMIs are Modbus
clients that run a scan cycle::

    read monitors -> run logic -> write controllers

Inbound requests are served synchronously as they arrive, so they are always
serialized with the scan phases. Devices never share state directly.
"""

from __future__ import annotations

import logging
import math
from collections import Counter, deque
from typing import Deque, Dict, List, Optional, Tuple

from . import modbus as mb
from .config import DeviceConfig, OutboundConnection, RegisterDecl
from .modbus import Area, DeviceEffect, RegisterBank, ServerMode
from .netfabric import ConnectionLost, Fabric, Refused, Session, Unreachable
from .world import HilState, PhysicalStore, UnknownPhysicalValue, hil_step

log = logging.getLogger(__name__)


def to_register(value: float, area: Area, scale: float = 1.0, offset: float = 0.0) -> int:
    if area.is_bit:
        return 1 if value >= 0.5 else 0
    raw = value * scale + offset
    if math.isnan(raw):
        return 0
    return max(0, min(0xFFFF, math.trunc(raw)))


def from_register(raw: int, area: Area, scale: float = 1.0, offset: float = 0.0) -> float:
    if area.is_bit:
        return 1.0 if raw else 0.0
    return (raw - offset) / scale


def build_bank(cfg: DeviceConfig) -> RegisterBank:
    bank = RegisterBank()
    for reg in cfg.registers:
        bank.define(reg.area, reg.address, reg.count, reg.initial)
    if cfg.identity is not None:
        bank.identity = mb.DeviceIdentity(cfg.identity.vendor, cfg.identity.product, cfg.identity.version)
    return bank


class RegisterView:
    """Name-addressed access to a device's own bank, as seen by control logic."""

    def __init__(self, bank: RegisterBank, registers: Tuple[RegisterDecl, ...]):
        self._bank = bank
        self._where = {r.name: (r.area, r.address) for r in registers if r.name}

    def __getitem__(self, name: str) -> int:
        area, address = self._where[name]
        return self._bank.get(area, address)

    def __setitem__(self, name: str, value: int) -> None:
        area, address = self._where[name]
        self._bank.set(area, address, value)

    def __contains__(self, name: str) -> bool:
        return name in self._where

    def names(self) -> List[str]:
        return list(self._where)


#
#   Client links
#

class TcpLink:
    def __init__(self, fabric: Fabric, owner: str, target: str, port: int, unit_id: int):
        self.fabric = fabric
        self.owner = owner
        self.target = target
        self.port = port
        self.unit_id = unit_id
        self.session: Optional[Session] = None

    def request(self, pdu: mb.Pdu) -> Optional[mb.Pdu]:
        if self.session is None or self.session.closed:
            try:
                self.session = self.fabric.connect(self.owner, self.target, self.port)
            except (Refused, Unreachable):
                self.session = None
                return None
        try:
            return self.session.transact(self.unit_id, pdu)
        except ConnectionLost:
            self.session = None
            return None


class SerialLink:
    def __init__(self, fabric: Fabric, owner: str, bus: str, unit_id: int):
        self.bus = fabric.buses[bus]
        self.owner = owner
        self.unit_id = unit_id

    def request(self, pdu: mb.Pdu) -> Optional[mb.Pdu]:
        return self.bus.request(self.owner, self.unit_id, pdu)


#
#   Runtimes
#

class DeviceRuntime:
    kind = "device"

    def __init__(self, cfg: DeviceConfig, sim):
        self.config = cfg
        self.sim = sim
        self.bank = build_bank(cfg)
        self.mode = ServerMode.NORMAL
        self.alive = True
        self.down_until_tick = 0
        self.epoch = 0
        self.degraded = False
        self.diagnostics: Counter = Counter()
        self.restarts = 0
        self.servers: List = []
        self.clients: Dict[str, object] = {}

    @property
    def name(self) -> str:
        return self.config.name

    @property
    def store(self) -> PhysicalStore:
        return self.sim.store

    def __repr__(self):
        return f"<{type(self).__name__} {self.name} mode={self.mode.value}>"

    # server side

    def accepting(self) -> bool:
        return self.alive and self.sim.tick >= self.down_until_tick

    def handle_pdu(self, pdu: mb.Pdu, broadcast: bool = False) -> Optional[mb.Pdu]:
        response, effect = mb.execute_on_bank(pdu, self.bank, self.mode)
        if effect is not None:
            self.apply_device_control(effect)
        return None if broadcast else response

    def handle_tcp(self, raw: bytes, unit_id: int) -> Optional[bytes]:
        try:
            adu = mb.decode_tcp(raw)
        except mb.ModbusError:
            self.diagnostics["bad_frames"] += 1
            return None
        if adu.unit_id not in (unit_id, mb.BROADCAST_ADDRESS):
            return None
        response = self.handle_pdu(adu.pdu, broadcast=adu.unit_id == mb.BROADCAST_ADDRESS)
        if response is None:
            return None
        return mb.encode_tcp(mb.TcpAdu(adu.transaction_id, adu.unit_id, response))

    def handle_rtu(self, address: int, pdu: mb.Pdu) -> Optional[mb.Pdu]:
        return self.handle_pdu(pdu, broadcast=address == mb.BROADCAST_ADDRESS)

    def apply_device_control(self, effect: DeviceEffect) -> None:
        if effect is DeviceEffect.FORCE_LISTEN:
            log.debug("%s entering listen-only mode", self.name)
            self.mode = ServerMode.LISTEN_ONLY
        elif effect is DeviceEffect.RESTART:
            log.debug("%s restarting communications", self.name)
            self.mode = ServerMode.NORMAL
            self.diagnostics.clear()
            self.restarts += 1
            # existing sessions drop; inbound endpoints come back after the delay
            self.epoch += 1
            self.down_until_tick = self.sim.tick + self.sim.ticks_for_ms(self.config.restart_delay_ms)

    def cycle(self) -> None:
        pass


class SensorRuntime(DeviceRuntime):
    kind = "sensor"

    def cycle(self) -> None:
        """Copy linked physical values into the sensor's read-only registers."""
        degraded = False
        for reg in self.config.registers:
            if reg.physical_value is None:
                continue
            try:
                value = self.store.read(reg.physical_value)
            except UnknownPhysicalValue:
                degraded = True
                continue
            self.bank.set(reg.area, reg.address, to_register(value, reg.area, reg.scale, reg.offset))
        self.degraded = degraded


class ActuatorRuntime(DeviceRuntime):
    kind = "actuator"

    def __init__(self, cfg, sim):
        super().__init__(cfg, sim)
        self._links = {(r.area, r.address): r for r in cfg.registers if r.physical_value}
        self.bank.on_write = self._propagate

    def _propagate(self, area: Area, address: int, raw: int) -> None:
        reg = self._links.get((area, address))
        if reg is None:
            return
        try:
            self.store.write(reg.physical_value, from_register(raw, area, reg.scale, reg.offset), self.name)
        except UnknownPhysicalValue:
            self.degraded = True


class HilRuntime(DeviceRuntime):
    kind = "hil"

    def __init__(self, cfg, sim):
        super().__init__(cfg, sim)
        self.state = HilState(
            logic_id=cfg.logic,
            rng=sim.rng_for(cfg.name),
            params=dict(cfg.params),
            owner=cfg.name,
        )

    def cycle(self) -> None:
        hil_step(self.state, self.store, self.sim.tick_s * self.config.scan_period_ticks)


class MasterRuntime(DeviceRuntime):
    """Shared client behaviour of PLCs and HMIs: monitors and controllers."""

    def __init__(self, cfg, sim):
        super().__init__(cfg, sim)
        self.regs = RegisterView(self.bank, cfg.registers)
        self.consecutive_failures: Counter = Counter()
        self._controllers = {c.name: c for c in cfg.controllers}

    def connect_clients(self) -> None:
        for conn in self.config.outbound_connections:
            self.clients[conn.name] = self._make_link(conn)

    def _make_link(self, conn: OutboundConnection):
        target = self.sim.config.device(conn.target)
        if conn.type == "tcp":
            unit = next(i.unit_id for i in target.inbound_connections if i.type == "tcp" and i.port == conn.port)
            return TcpLink(self.sim.fabric, self.name, conn.target, conn.port, unit)
        unit = next(i.unit_id for i in target.inbound_connections if i.type == "serial" and i.bus == conn.bus)
        return SerialLink(self.sim.fabric, self.name, conn.bus, unit)

    def read_monitors(self) -> None:
        for index, mon in enumerate(self.config.monitors):
            if self.sim.tick % mon.period_ticks:
                continue
            request = mb.read_request(mon.remote.area, mon.remote.address, mon.count)
            values = None
            try:
                response = self.clients[mon.connection].request(request)
                if response is not None:
                    values = mb.parse_read_response(request, response)
            except mb.ModbusError:
                values = None
            if values is None:
                # hold last value
                self.diagnostics["monitor_failures"] += 1
                self.consecutive_failures[index] += 1
                continue
            self.consecutive_failures[index] = 0
            for offset, value in enumerate(values):
                self.bank.set(mon.local.area, mon.local.address + offset, value)

    def fire_controller(self, name: str) -> bool:
        ctl = self._controllers[name]
        table = self.bank.area(ctl.local.area)
        values = [table[ctl.local.address + i] for i in range(ctl.count)]
        request = mb.write_request(ctl.remote.area, ctl.remote.address, values)
        try:
            response = self.clients[ctl.connection].request(request)
            if response is not None:
                mb.check_exception(request, response)
                self.diagnostics["controller_writes"] += 1
                return True
        except mb.ModbusError:
            pass
        self.diagnostics["controller_failures"] += 1
        return False


class PlcRuntime(MasterRuntime):
    kind = "plc"

    def __init__(self, cfg, sim):
        super().__init__(cfg, sim)
        self.logic = None
        if cfg.logic is not None:
            from .scenarios import resolve_logic

            self.logic = resolve_logic(cfg.logic, "plc")

    def cycle(self) -> None:
        self.read_monitors()
        actions = self.logic(self.regs, self.config.params) if self.logic else []
        for name in actions:
            self.fire_controller(name)


class HmiRuntime(MasterRuntime):
    kind = "hmi"

    def __init__(self, cfg, sim):
        super().__init__(cfg, sim)
        self.commands: Deque[Tuple[str, int]] = deque()

    def inject(self, controller: str, value: int) -> None:
        """Queue a manual command: set the controller's source register, then write it out."""
        if controller not in self._controllers:
            raise KeyError(f"HMI '{self.name}' has no controller '{controller}'")
        self.commands.append((controller, value))

    def cycle(self) -> None:
        self.read_monitors()
        while self.commands:
            name, value = self.commands.popleft()
            ctl = self._controllers[name]
            for i in range(ctl.count):
                self.bank.set(ctl.local.area, ctl.local.address + i, value & 0xFFFF)
            self.fire_controller(name)


RUNTIMES = {
    "sensor": SensorRuntime,
    "actuator": ActuatorRuntime,
    "plc": PlcRuntime,
    "hmi": HmiRuntime,
    "hil": HilRuntime,
}


def run_sensor(runtime: SensorRuntime, store: PhysicalStore = None) -> None:
    runtime.cycle()


def run_actuator(runtime: ActuatorRuntime, store: PhysicalStore = None) -> None:
    runtime.cycle()


def run_plc(runtime: PlcRuntime, store: PhysicalStore = None, logic=None) -> None:
    if logic is not None:
        runtime.logic = logic
    runtime.cycle()


def run_hmi(runtime: HmiRuntime) -> None:
    runtime.cycle()


def apply_device_control(runtime: DeviceRuntime, effect: DeviceEffect) -> None:
    runtime.apply_device_control(effect)
