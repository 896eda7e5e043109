"""
Virtual network fabric
======================

In-process Modbus-TCP networks and Modbus-RTU serial buses. Hosts get
synthetic IP/MAC labels; every ADU or connection attempt crossing the fabric
is recorded on the capture tap together with the fabric-assigned identity of
the host that originated it (ground truth for labeling, independent of
packet contents).

Delivery is synchronous: a client request is executed by the server and
the response returned within the same call, stamped with the shared clock.
"""

from __future__ import annotations

import csv
import struct
import threading
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Protocol

from . import modbus as mb


class FabricError(Exception):
    pass


class Unreachable(FabricError):
    pass


class Refused(FabricError):
    pass


class ConnectionLost(FabricError):
    pass


class NotBusMaster(FabricError):
    pass


class SimClock:
    """Integer-microsecond clock. Every stamp moves time forward by one quantum so
    captured timestamps are strictly ordered."""

    QUANTUM_US = 1

    def __init__(self, start_us: int = 0):
        self.now_us = start_us
        self._lock = threading.Lock()

    def advance_to(self, t_us: int) -> None:
        with self._lock:
            if t_us > self.now_us:
                self.now_us = t_us

    def stamp(self) -> int:
        with self._lock:
            t = self.now_us
            self.now_us += self.QUANTUM_US
            return t

    @property
    def now_s(self) -> float:
        return self.now_us / 1e6


@dataclass(frozen=True)
class Endpoint:
    device_name: str
    network_name: str
    synthetic_ip: str
    synthetic_mac: str
    port: int = 0

    def with_port(self, port: int) -> "Endpoint":
        return Endpoint(self.device_name, self.network_name, self.synthetic_ip, self.synthetic_mac, port)


@dataclass(frozen=True)
class CapturedPacket:
    time_us: int
    transport: str          # "tcp" | "serial"
    kind: str               # "adu" | "connect"
    direction: str          # "request" | "response"
    src_device: str
    dst_device: str
    link: str               # network or bus name
    session: str
    origin: str
    origin_role: str
    raw_adu: bytes = b""
    src_ip: str = ""
    dst_ip: str = ""
    src_mac: str = ""
    dst_mac: str = ""
    src_port: int = 0
    dst_port: int = 0
    # client or master that started the exchange this packet belongs to
    initiator: str = ""

    @property
    def timestamp_s(self) -> float:
        return self.time_us / 1e6


class ServerHandler(Protocol):
    epoch: int

    def accepting(self) -> bool: ...

    def handle_tcp(self, raw: bytes, unit_id: int) -> Optional[bytes]: ...

    def handle_rtu(self, address: int, pdu: mb.Pdu) -> Optional[mb.Pdu]: ...


@dataclass
class ServerBinding:
    endpoint: Endpoint
    handler: ServerHandler
    unit_id: int


@dataclass
class Host:
    name: str
    role: str
    endpoint: Optional[Endpoint]
    next_port: int = 40000


class Session:
    """A client connection to one TCP server binding."""

    def __init__(self, fabric: "Fabric", client: Host, binding: ServerBinding, session_id: str):
        self.fabric = fabric
        self.client = client
        self.binding = binding
        self.session_id = session_id
        self.local = client.endpoint.with_port(client.next_port)
        client.next_port = 40000 + (client.next_port - 40000 + 1) % 25000
        self.epoch = binding.handler.epoch
        self.closed = False
        self._txid = 0

    def next_transaction_id(self) -> int:
        self._txid = (self._txid + 1) & 0xFFFF
        return self._txid

    def alive(self) -> bool:
        h = self.binding.handler
        return not self.closed and h.accepting() and h.epoch == self.epoch

    def send(self, raw_adu: bytes) -> Optional[bytes]:
        """Deliver one raw TCP ADU; returns the raw response or None on silence."""
        if not self.alive():
            self.closed = True
            raise ConnectionLost(self.session_id)
        f = self.fabric
        server = self.binding.endpoint
        f._record("tcp", "adu", "request", self.local, server, self.session_id,
                  self.client.name, self.client.role, raw_adu, self.client.name)
        response = self.binding.handler.handle_tcp(raw_adu, self.binding.unit_id)
        if response is None:
            return None
        f._record("tcp", "adu", "response", server, self.local, self.session_id,
                  server.device_name, f.hosts[server.device_name].role, response, self.client.name)
        return response

    def transact(self, unit_id: int, pdu: mb.Pdu) -> Optional[mb.Pdu]:
        raw = mb.encode_tcp(mb.TcpAdu(self.next_transaction_id(), unit_id, pdu))
        response = self.send(raw)
        if response is None:
            return None
        try:
            return mb.decode_tcp(response).pdu
        except mb.ModbusError as exc:
            raise mb.MalformedResponse(str(exc)) from exc

    def close(self) -> None:
        self.closed = True


@dataclass
class SerialBus:
    name: str
    fabric: "Fabric"
    attached: Dict[int, str] = field(default_factory=dict)
    master: Optional[str] = None
    rogues: set = field(default_factory=set)

    def attach(self, device_name: str, unit_id: int) -> None:
        if unit_id in self.attached:
            raise FabricError(f"unit {unit_id} already attached to bus '{self.name}'")
        self.attached[unit_id] = device_name

    def set_master(self, device_name: str) -> None:
        if self.master not in (None, device_name):
            raise FabricError(f"bus '{self.name}' already has master '{self.master}'")
        self.master = device_name

    def transact(self, caller: str, frame: bytes) -> Optional[bytes]:
        """Put a request frame on the wire and return the addressed slave's reply.

        None means timeout, or success-without-response for broadcasts.
        """
        if caller != self.master and caller not in self.rogues:
            raise NotBusMaster(f"'{caller}' is not master of bus '{self.name}'")
        f = self.fabric
        address = frame[0] if frame else None
        target = self.attached.get(address) if address else None
        dst = target or ("*" if address == 0 else f"unit{address}")
        caller_role = f.hosts[caller].role
        f._record_serial("request", caller, dst, self.name, caller, caller_role, frame, caller)
        try:
            address, pdu = mb.decode_rtu(frame)
        except mb.ModbusError:
            return None
        if address == mb.BROADCAST_ADDRESS:
            for name in self.attached.values():
                handler = f.handlers[name]
                if handler.accepting():
                    handler.handle_rtu(address, pdu)
            return None
        if target is None:
            return None
        handler = f.handlers[target]
        if not handler.accepting():
            return None
        response = handler.handle_rtu(address, pdu)
        if response is None:
            return None
        reply = mb.encode_rtu(address, response)
        f._record_serial("response", target, caller, self.name, target, f.hosts[target].role, reply, caller)
        return reply

    def request(self, caller: str, unit_id: int, pdu: mb.Pdu) -> Optional[mb.Pdu]:
        reply = self.transact(caller, mb.encode_rtu(unit_id, pdu))
        if reply is None:
            return None
        try:
            address, response = mb.decode_rtu(reply)
        except mb.ModbusError as exc:
            raise mb.MalformedResponse(str(exc)) from exc
        if address != unit_id:
            raise mb.MalformedResponse(f"reply from unit {address}, expected {unit_id}")
        return response


class Fabric:
    def __init__(self, clock: Optional[SimClock] = None):
        self.clock = clock or SimClock()
        self.hosts: Dict[str, Host] = {}
        self.handlers: Dict[str, ServerHandler] = {}
        self.servers: Dict[tuple, ServerBinding] = {}
        self.buses: Dict[str, SerialBus] = {}
        self.networks: Dict[str, List[str]] = {}
        self._tap: List[CapturedPacket] = []
        self._tap_lock = threading.Lock()
        self._sessions = 0
        self._mac_index = 0

    #
    #   topology
    #

    def add_network(self, name: str) -> None:
        self.networks.setdefault(name, [])

    def add_bus(self, name: str) -> SerialBus:
        return self.buses.setdefault(name, SerialBus(name, self))

    def add_host(self, name: str, role: str, network: Optional[str] = None,
                 ip: Optional[str] = None, mac: Optional[str] = None) -> Host:
        if name in self.hosts:
            raise FabricError(f"host '{name}' already registered")
        endpoint = None
        if network is not None:
            if network not in self.networks:
                raise FabricError(f"unknown network '{network}'")
            self._mac_index += 1
            i = self._mac_index
            net_index = list(self.networks).index(network)
            mac = mac or f"02:42:{net_index:02x}:{(i >> 16) & 0xFF:02x}:{(i >> 8) & 0xFF:02x}:{i & 0xFF:02x}"
            endpoint = Endpoint(name, network, ip, mac)
            self.networks[network].append(name)
        host = Host(name, role, endpoint)
        self.hosts[name] = host
        return host

    def bind_server(self, device_name: str, port: int, unit_id: int, handler: ServerHandler) -> ServerBinding:
        host = self.hosts[device_name]
        if host.endpoint is None:
            raise Unreachable(f"'{device_name}' has no network attachment")
        key = (device_name, port)
        if key in self.servers:
            raise FabricError(f"{device_name}:{port} already bound")
        binding = ServerBinding(host.endpoint.with_port(port), handler, unit_id)
        self.servers[key] = binding
        self.handlers[device_name] = handler
        return binding

    def attach_serial(self, bus: str, device_name: str, unit_id: int, handler: ServerHandler) -> None:
        self.buses[bus].attach(device_name, unit_id)
        self.handlers[device_name] = handler

    #
    #   traffic
    #

    def connect(self, client: str, server: str, port: int) -> Session:
        src = self.hosts[client]
        dst = self.hosts.get(server)
        if dst is None or src.endpoint is None or dst.endpoint is None \
                or src.endpoint.network_name != dst.endpoint.network_name:
            raise Unreachable(f"{client} cannot reach {server}")
        self._sessions += 1
        session_id = f"tcp{self._sessions}"
        binding = self.servers.get((server, port))
        local = src.endpoint.with_port(src.next_port)
        self._record("tcp", "connect", "request", local, dst.endpoint.with_port(port), session_id,
                     src.name, src.role, b"", src.name)
        if binding is None or not binding.handler.accepting():
            src.next_port = 40000 + (src.next_port - 40000 + 1) % 25000
            raise Refused(f"{server}:{port} refused connection")
        return Session(self, src, binding, session_id)

    def _record(self, transport, kind, direction, src: Endpoint, dst: Endpoint, session,
                origin, origin_role, raw, initiator) -> None:
        pkt = CapturedPacket(
            self.clock.stamp(), transport, kind, direction, src.device_name, dst.device_name,
            src.network_name, session, origin, origin_role, bytes(raw),
            src.synthetic_ip, dst.synthetic_ip, src.synthetic_mac, dst.synthetic_mac, src.port, dst.port,
            initiator,
        )
        with self._tap_lock:
            self._tap.append(pkt)

    def _record_serial(self, direction, src, dst, bus, origin, origin_role, raw, initiator) -> None:
        pkt = CapturedPacket(self.clock.stamp(), "serial", "adu", direction, src, dst, bus,
                             f"bus:{bus}", origin, origin_role, bytes(raw), initiator=initiator)
        with self._tap_lock:
            self._tap.append(pkt)

    def tap_drain(self) -> List[CapturedPacket]:
        with self._tap_lock:
            out, self._tap = self._tap, []
        return sorted(out, key=lambda p: p.time_us)

    def tap_size(self) -> int:
        return len(self._tap)

    def tap_peek(self) -> List[CapturedPacket]:
        with self._tap_lock:
            return list(self._tap)


def bus_transact(bus: SerialBus, caller: str, request: bytes) -> Optional[bytes]:
    return bus.transact(caller, request)


def tap_drain(fabric: Fabric) -> List[CapturedPacket]:
    return fabric.tap_drain()


#
#   Capture journal (normative record)
#

CAPTURE_COLUMNS = [
    "time_s", "transport", "kind", "direction", "src_device", "dst_device", "link", "session",
    "origin", "origin_role", "initiator", "src_ip", "dst_ip", "src_mac", "dst_mac", "src_port", "dst_port", "raw_hex",
]


def write_capture_csv(packets: Iterable[CapturedPacket], path, append: bool = False) -> int:
    n = 0
    with open(path, "a" if append else "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if not append or fh.tell() == 0:
            w.writerow(CAPTURE_COLUMNS)
        for p in packets:
            w.writerow([
                f"{p.time_us / 1e6:.6f}", p.transport, p.kind, p.direction, p.src_device, p.dst_device,
                p.link, p.session, p.origin, p.origin_role, p.initiator, p.src_ip, p.dst_ip, p.src_mac, p.dst_mac,
                p.src_port, p.dst_port, p.raw_adu.hex(),
            ])
            n += 1
    return n


def read_capture_csv(path) -> List[CapturedPacket]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CAPTURE_COLUMNS:
            raise ValueError(f"{path}: not a capture journal (columns {reader.fieldnames})")
        for row in reader:
            out.append(CapturedPacket(
                time_us=round(float(row["time_s"]) * 1e6),
                transport=row["transport"], kind=row["kind"], direction=row["direction"],
                src_device=row["src_device"], dst_device=row["dst_device"], link=row["link"],
                session=row["session"], origin=row["origin"], origin_role=row["origin_role"],
                initiator=row["initiator"],
                raw_adu=bytes.fromhex(row["raw_hex"]),
                src_ip=row["src_ip"], dst_ip=row["dst_ip"], src_mac=row["src_mac"], dst_mac=row["dst_mac"],
                src_port=int(row["src_port"] or 0), dst_port=int(row["dst_port"] or 0),
            ))
    return out


#
#   pcap export (TCP traffic only; serial frames have no link-layer representation)
#

def _ip_bytes(ip: str) -> bytes:
    return bytes(int(x) for x in ip.split("."))


def _mac_bytes(mac: str) -> bytes:
    return bytes(int(x, 16) for x in mac.split(":"))


def _checksum(data: bytes) -> int:
    if len(data) % 2:
        data += b"\x00"
    total = sum(struct.unpack(f"!{len(data) // 2}H", data))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def write_pcap(packets: Iterable[CapturedPacket], path) -> int:
    """Write TCP packets as Ethernet/IPv4/TCP frames (libpcap, microsecond stamps)."""
    seq: Dict[tuple, int] = {}
    n = 0
    with open(path, "wb") as fh:
        fh.write(struct.pack("<IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, 1))
        for p in packets:
            if p.transport != "tcp" or not p.src_ip or not p.dst_ip:
                continue
            flow = (p.src_ip, p.src_port, p.dst_ip, p.dst_port)
            if p.kind == "connect":
                flags, payload, number = 0x02, b"", seq.setdefault(flow, 1000)
            else:
                flags, payload = 0x18, p.raw_adu
                number = seq.get(flow, 1000)
                seq[flow] = number + len(payload)
            src_ip, dst_ip = _ip_bytes(p.src_ip), _ip_bytes(p.dst_ip)
            tcp = struct.pack("!HHIIBBHHH", p.src_port, p.dst_port, number, 0, 5 << 4, flags, 65535, 0, 0)
            pseudo = src_ip + dst_ip + struct.pack("!BBH", 0, 6, len(tcp) + len(payload))
            csum = _checksum(pseudo + tcp + payload)
            tcp = tcp[:16] + struct.pack("!H", csum) + tcp[18:]
            total = 20 + len(tcp) + len(payload)
            ip = struct.pack("!BBHHHBBH4s4s", 0x45, 0, total, n & 0xFFFF, 0, 64, 6, 0, src_ip, dst_ip)
            ip = ip[:10] + struct.pack("!H", _checksum(ip)) + ip[12:]
            eth = _mac_bytes(p.dst_mac) + _mac_bytes(p.src_mac) + b"\x08\x00"
            frame = eth + ip + tcp + payload
            fh.write(struct.pack("<IIII", p.time_us // 1_000_000, p.time_us % 1_000_000, len(frame), len(frame)))
            fh.write(frame)
            n += 1
    return n
