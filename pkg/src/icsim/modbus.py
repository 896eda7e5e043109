"""
Modbus protocol core
====================

Byte-exact RTU/TCP framing, CRC-16/MODBUS, the sparse register bank a
simulated device exposes, and the server-side execution of request PDUs.

Everything here is pure except :func:`execute_on_bank`, which mutates the
bank it is given.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, Iterable, List, Optional, Tuple

# function codes
READ_COILS = 0x01
READ_DISCRETE_INPUTS = 0x02
READ_HOLDING_REGISTERS = 0x03
READ_INPUT_REGISTERS = 0x04
WRITE_SINGLE_COIL = 0x05
WRITE_SINGLE_REGISTER = 0x06
DIAGNOSTICS = 0x08
WRITE_MULTIPLE_COILS = 0x0F
WRITE_MULTIPLE_REGISTERS = 0x10
ENCAPSULATED_INTERFACE = 0x2B

# exception codes
ILLEGAL_FUNCTION = 0x01
ILLEGAL_DATA_ADDRESS = 0x02
ILLEGAL_DATA_VALUE = 0x03

# diagnostics sub-functions
DIAG_RETURN_QUERY_DATA = 0x0000
DIAG_RESTART_COMMUNICATIONS = 0x0001
DIAG_FORCE_LISTEN_ONLY = 0x0004

MEI_READ_DEVICE_ID = 0x0E

MAX_PDU_DATA = 252
MAX_READ_REGISTERS = 125
MAX_READ_BITS = 2000
MAX_WRITE_REGISTERS = 123
MAX_WRITE_BITS = 1968
BROADCAST_ADDRESS = 0
MAX_UNIT_ADDRESS = 247

COIL_ON = 0xFF00
COIL_OFF = 0x0000


class ModbusError(Exception):
    """Base class for codec errors."""


class AddressOutOfRange(ModbusError):
    pass


class PduTooLong(ModbusError):
    pass


class FrameTooShort(ModbusError):
    pass


class CrcMismatch(ModbusError):
    pass


class ProtocolIdNonZero(ModbusError):
    pass


class LengthMismatch(ModbusError):
    pass


class ExceptionResponse(ModbusError):
    """Raised by response parsers when the server answered with an exception PDU."""

    def __init__(self, function_code: int, exception_code: int):
        super().__init__(f"function 0x{function_code:02X} -> exception 0x{exception_code:02X}")
        self.function_code = function_code
        self.exception_code = exception_code


class MalformedResponse(ModbusError):
    pass


class Area(str, Enum):
    COIL = "coil"
    DISCRETE_INPUT = "discrete_input"
    HOLDING_REGISTER = "holding_register"
    INPUT_REGISTER = "input_register"

    @property
    def is_bit(self) -> bool:
        return self in (Area.COIL, Area.DISCRETE_INPUT)

    @property
    def writable(self) -> bool:
        return self in (Area.COIL, Area.HOLDING_REGISTER)

    @property
    def read_code(self) -> int:
        return _READ_CODES[self]


_READ_CODES = {
    Area.COIL: READ_COILS,
    Area.DISCRETE_INPUT: READ_DISCRETE_INPUTS,
    Area.HOLDING_REGISTER: READ_HOLDING_REGISTERS,
    Area.INPUT_REGISTER: READ_INPUT_REGISTERS,
}
_AREA_BY_READ_CODE = {v: k for k, v in _READ_CODES.items()}


@dataclass(frozen=True)
class Pdu:
    function_code: int
    data: bytes = b""

    def __post_init__(self):
        if not 0 <= self.function_code <= 0xFF:
            raise ValueError(f"function code {self.function_code} out of range")
        if len(self.data) > MAX_PDU_DATA:
            raise PduTooLong(f"PDU data is {len(self.data)} bytes, limit {MAX_PDU_DATA}")

    @property
    def is_exception(self) -> bool:
        return self.function_code >= 0x80

    @property
    def exception_code(self) -> Optional[int]:
        return self.data[0] if self.is_exception and self.data else None

    def to_bytes(self) -> bytes:
        return bytes((self.function_code,)) + self.data

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Pdu":
        if not raw:
            raise FrameTooShort("empty PDU")
        return cls(raw[0], bytes(raw[1:]))


def exception_pdu(function_code: int, code: int) -> Pdu:
    return Pdu((function_code | 0x80) & 0xFF, bytes((code,)))


@dataclass(frozen=True)
class RtuAdu:
    address: int
    pdu: Pdu

    @property
    def crc(self) -> int:
        return crc16(bytes((self.address,)) + self.pdu.to_bytes())


@dataclass(frozen=True)
class TcpAdu:
    transaction_id: int
    unit_id: int
    pdu: Pdu
    protocol_id: int = 0

    @property
    def length(self) -> int:
        return 2 + len(self.pdu.data)


#
#   CRC-16/MODBUS
#

def _make_crc_table() -> Tuple[int, ...]:
    table = []
    for byte in range(256):
        crc = byte
        for _ in range(8):
            crc = (crc >> 1) ^ 0xA001 if crc & 1 else crc >> 1
        table.append(crc)
    return tuple(table)


_CRC_TABLE = _make_crc_table()


def crc16(data: bytes) -> int:
    """CRC-16/MODBUS (reflected poly 0xA001, init 0xFFFF), table driven."""
    crc = 0xFFFF
    table = _CRC_TABLE
    for b in data:
        crc = (crc >> 8) ^ table[(crc ^ b) & 0xFF]
    return crc


#
#   Framing
#

def encode_rtu(address: int, pdu: Pdu) -> bytes:
    if not 0 <= address <= MAX_UNIT_ADDRESS:
        raise AddressOutOfRange(f"RTU address {address} not in 0..{MAX_UNIT_ADDRESS}")
    if len(pdu.data) > MAX_PDU_DATA:
        raise PduTooLong(f"PDU data is {len(pdu.data)} bytes")
    body = bytes((address, pdu.function_code)) + pdu.data
    crc = crc16(body)
    # low byte first on the wire
    return body + bytes((crc & 0xFF, crc >> 8))


def decode_rtu(frame: bytes) -> Tuple[int, Pdu]:
    if len(frame) < 4:
        raise FrameTooShort(f"RTU frame of {len(frame)} bytes")
    body, trailer = frame[:-2], frame[-2:]
    received = trailer[0] | (trailer[1] << 8)
    if crc16(body) != received:
        raise CrcMismatch(f"crc 0x{received:04X} != computed 0x{crc16(body):04X}")
    return body[0], Pdu(body[1], bytes(body[2:]))


_MBAP = struct.Struct(">HHHB")


def encode_tcp(adu: TcpAdu) -> bytes:
    if adu.protocol_id != 0:
        raise ProtocolIdNonZero(f"protocol id {adu.protocol_id}")
    if not 0 <= adu.unit_id <= 0xFF:
        raise AddressOutOfRange(f"unit id {adu.unit_id}")
    return _MBAP.pack(adu.transaction_id & 0xFFFF, 0, adu.length, adu.unit_id) + adu.pdu.to_bytes()


def decode_tcp(raw: bytes) -> TcpAdu:
    if len(raw) < 8:
        raise FrameTooShort(f"TCP ADU of {len(raw)} bytes")
    txid, proto, length, unit = _MBAP.unpack_from(raw)
    if proto != 0:
        raise ProtocolIdNonZero(f"protocol id {proto}")
    if length != len(raw) - 6:
        raise LengthMismatch(f"length field {length}, actual {len(raw) - 6}")
    return TcpAdu(txid, unit, Pdu(raw[7], bytes(raw[8:])))


#
#   Bit packing
#

def pack_bits(bits: Iterable[int]) -> bytes:
    out = bytearray()
    for i, bit in enumerate(bits):
        if i % 8 == 0:
            out.append(0)
        if bit:
            out[-1] |= 1 << (i % 8)
    return bytes(out)


def unpack_bits(data: bytes, count: int) -> List[int]:
    return [(data[i // 8] >> (i % 8)) & 1 for i in range(count)]


#
#   Register bank
#

@dataclass
class DeviceIdentity:
    vendor: str
    product: str
    version: str


WriteHook = Callable[[Area, int, int], None]


@dataclass
class RegisterBank:
    """Sparse per-device data model. Only configured addresses exist."""

    coils: Dict[int, int] = field(default_factory=dict)
    discrete_inputs: Dict[int, int] = field(default_factory=dict)
    holding_registers: Dict[int, int] = field(default_factory=dict)
    input_registers: Dict[int, int] = field(default_factory=dict)
    identity: Optional[DeviceIdentity] = None
    # called after every Modbus-originated write, (area, address, value)
    on_write: Optional[WriteHook] = field(default=None, repr=False, compare=False)

    def area(self, area: Area) -> Dict[int, int]:
        return {
            Area.COIL: self.coils,
            Area.DISCRETE_INPUT: self.discrete_inputs,
            Area.HOLDING_REGISTER: self.holding_registers,
            Area.INPUT_REGISTER: self.input_registers,
        }[area]

    def define(self, area: Area, address: int, count: int = 1, initial: int = 0) -> None:
        table = self.area(area)
        for a in range(address, address + count):
            if not 0 <= a <= 0xFFFF:
                raise ValueError(f"address {a} outside 0..65535")
            table[a] = _coerce(area, initial)

    def get(self, area: Area, address: int) -> int:
        return self.area(area)[address]

    def set(self, area: Area, address: int, value: int) -> None:
        """Local (non-Modbus) write; any area, no hook."""
        table = self.area(area)
        if address not in table:
            raise KeyError(f"{area.value} {address} not configured")
        table[address] = _coerce(area, value)

    def has_range(self, area: Area, address: int, count: int) -> bool:
        table = self.area(area)
        return all(a in table for a in range(address, address + count))

    def supported_function_codes(self) -> frozenset:
        codes = {DIAGNOSTICS}
        if self.coils:
            codes |= {READ_COILS, WRITE_SINGLE_COIL, WRITE_MULTIPLE_COILS}
        if self.discrete_inputs:
            codes.add(READ_DISCRETE_INPUTS)
        if self.holding_registers:
            codes |= {READ_HOLDING_REGISTERS, WRITE_SINGLE_REGISTER, WRITE_MULTIPLE_REGISTERS}
        if self.input_registers:
            codes.add(READ_INPUT_REGISTERS)
        if self.identity is not None:
            codes.add(ENCAPSULATED_INTERFACE)
        return frozenset(codes)

    def addresses(self) -> Dict[Area, List[int]]:
        return {a: sorted(self.area(a)) for a in Area}


def _coerce(area: Area, value: int) -> int:
    if area.is_bit:
        return 1 if value else 0
    return int(value) & 0xFFFF


#
#   Server-side execution
#

class ServerMode(str, Enum):
    NORMAL = "normal"
    LISTEN_ONLY = "listen_only"


class DeviceEffect(str, Enum):
    RESTART = "restart"
    FORCE_LISTEN = "force_listen"


def execute_on_bank(
    pdu: Pdu, bank: RegisterBank, server_mode: ServerMode = ServerMode.NORMAL
) -> Tuple[Optional[Pdu], Optional[DeviceEffect]]:
    """Run one request against ``bank``.

    Returns ``(response, effect)``. ``response`` is None when the server stays
    silent (listen-only mode, force-listen request). ``effect`` tells the
    owning device to restart or enter listen-only mode.
    """
    fc = pdu.function_code
    if server_mode == ServerMode.LISTEN_ONLY:
        if fc == DIAGNOSTICS and len(pdu.data) == 4 and _u16(pdu.data, 0) == DIAG_RESTART_COMMUNICATIONS:
            return _diagnostics(pdu, bank)
        return None, None

    if fc not in bank.supported_function_codes():
        return exception_pdu(fc, ILLEGAL_FUNCTION), None
    handler = _HANDLERS[fc]
    return handler(pdu, bank)


def _u16(data: bytes, offset: int) -> int:
    return (data[offset] << 8) | data[offset + 1]


def _read(pdu: Pdu, bank: RegisterBank):
    fc = pdu.function_code
    if len(pdu.data) != 4:
        return exception_pdu(fc, ILLEGAL_DATA_VALUE), None
    address, count = struct.unpack(">HH", pdu.data)
    area = _AREA_BY_READ_CODE[fc]
    limit = MAX_READ_BITS if area.is_bit else MAX_READ_REGISTERS
    if not 1 <= count <= limit:
        return exception_pdu(fc, ILLEGAL_DATA_VALUE), None
    if address + count > 0x10000 or not bank.has_range(area, address, count):
        return exception_pdu(fc, ILLEGAL_DATA_ADDRESS), None
    table = bank.area(area)
    values = [table[a] for a in range(address, address + count)]
    if area.is_bit:
        payload = pack_bits(values)
    else:
        payload = struct.pack(f">{count}H", *values)
    return Pdu(fc, bytes((len(payload),)) + payload), None


def _apply_writes(bank: RegisterBank, area: Area, address: int, values: List[int]) -> None:
    table = bank.area(area)
    for offset, value in enumerate(values):
        table[address + offset] = value
    if bank.on_write is not None:
        for offset, value in enumerate(values):
            bank.on_write(area, address + offset, value)


def _write_single_coil(pdu: Pdu, bank: RegisterBank):
    fc = pdu.function_code
    if len(pdu.data) != 4:
        return exception_pdu(fc, ILLEGAL_DATA_VALUE), None
    address, value = struct.unpack(">HH", pdu.data)
    if value not in (COIL_ON, COIL_OFF):
        return exception_pdu(fc, ILLEGAL_DATA_VALUE), None
    if address not in bank.coils:
        return exception_pdu(fc, ILLEGAL_DATA_ADDRESS), None
    _apply_writes(bank, Area.COIL, address, [1 if value == COIL_ON else 0])
    return Pdu(fc, pdu.data), None


def _write_single_register(pdu: Pdu, bank: RegisterBank):
    fc = pdu.function_code
    if len(pdu.data) != 4:
        return exception_pdu(fc, ILLEGAL_DATA_VALUE), None
    address, value = struct.unpack(">HH", pdu.data)
    if address not in bank.holding_registers:
        return exception_pdu(fc, ILLEGAL_DATA_ADDRESS), None
    _apply_writes(bank, Area.HOLDING_REGISTER, address, [value])
    return Pdu(fc, pdu.data), None


def _write_multiple_coils(pdu: Pdu, bank: RegisterBank):
    fc = pdu.function_code
    data = pdu.data
    if len(data) < 6:
        return exception_pdu(fc, ILLEGAL_DATA_VALUE), None
    address, count, nbytes = struct.unpack_from(">HHB", data)
    if not 1 <= count <= MAX_WRITE_BITS or nbytes != (count + 7) // 8 or len(data) != 5 + nbytes:
        return exception_pdu(fc, ILLEGAL_DATA_VALUE), None
    if address + count > 0x10000 or not bank.has_range(Area.COIL, address, count):
        return exception_pdu(fc, ILLEGAL_DATA_ADDRESS), None
    _apply_writes(bank, Area.COIL, address, unpack_bits(data[5:], count))
    return Pdu(fc, data[:4]), None


def _write_multiple_registers(pdu: Pdu, bank: RegisterBank):
    fc = pdu.function_code
    data = pdu.data
    if len(data) < 7:
        return exception_pdu(fc, ILLEGAL_DATA_VALUE), None
    address, count, nbytes = struct.unpack_from(">HHB", data)
    if not 1 <= count <= MAX_WRITE_REGISTERS or nbytes != 2 * count or len(data) != 5 + nbytes:
        return exception_pdu(fc, ILLEGAL_DATA_VALUE), None
    if address + count > 0x10000 or not bank.has_range(Area.HOLDING_REGISTER, address, count):
        return exception_pdu(fc, ILLEGAL_DATA_ADDRESS), None
    values = list(struct.unpack_from(f">{count}H", data, 5))
    _apply_writes(bank, Area.HOLDING_REGISTER, address, values)
    return Pdu(fc, data[:4]), None


def _diagnostics(pdu: Pdu, bank: RegisterBank):
    fc = pdu.function_code
    if len(pdu.data) != 4:
        return exception_pdu(fc, ILLEGAL_DATA_VALUE), None
    sub = _u16(pdu.data, 0)
    if sub == DIAG_RETURN_QUERY_DATA:
        return Pdu(fc, pdu.data), None
    if sub == DIAG_RESTART_COMMUNICATIONS:
        if _u16(pdu.data, 2) not in (0x0000, 0xFF00):
            return exception_pdu(fc, ILLEGAL_DATA_VALUE), None
        return Pdu(fc, pdu.data), DeviceEffect.RESTART
    if sub == DIAG_FORCE_LISTEN_ONLY:
        # no response is ever returned for force listen
        return None, DeviceEffect.FORCE_LISTEN
    return exception_pdu(fc, ILLEGAL_FUNCTION), None


def _device_identification(pdu: Pdu, bank: RegisterBank):
    fc = pdu.function_code
    if len(pdu.data) != 3 or pdu.data[0] != MEI_READ_DEVICE_ID or pdu.data[1] != 0x01:
        return exception_pdu(fc, ILLEGAL_DATA_VALUE), None
    ident = bank.identity
    objects = [ident.vendor, ident.product, ident.version]
    body = bytearray((MEI_READ_DEVICE_ID, 0x01, 0x01, 0x00, 0x00, len(objects)))
    for obj_id, text in enumerate(objects):
        raw = text.encode("utf-8")[:64]
        body += bytes((obj_id, len(raw))) + raw
    return Pdu(fc, bytes(body)), None


_HANDLERS = {
    READ_COILS: _read,
    READ_DISCRETE_INPUTS: _read,
    READ_HOLDING_REGISTERS: _read,
    READ_INPUT_REGISTERS: _read,
    WRITE_SINGLE_COIL: _write_single_coil,
    WRITE_SINGLE_REGISTER: _write_single_register,
    WRITE_MULTIPLE_COILS: _write_multiple_coils,
    WRITE_MULTIPLE_REGISTERS: _write_multiple_registers,
    DIAGNOSTICS: _diagnostics,
    ENCAPSULATED_INTERFACE: _device_identification,
}


#
#   Client-side request builders and response parsers
#

def read_request(area: Area, address: int, count: int) -> Pdu:
    return Pdu(area.read_code, struct.pack(">HH", address, count))


def write_request(area: Area, address: int, values: List[int]) -> Pdu:
    if not area.writable:
        raise ValueError(f"{area.value} is read-only over Modbus")
    if area is Area.COIL:
        if len(values) == 1:
            return Pdu(WRITE_SINGLE_COIL, struct.pack(">HH", address, COIL_ON if values[0] else COIL_OFF))
        packed = pack_bits(values)
        return Pdu(WRITE_MULTIPLE_COILS, struct.pack(">HHB", address, len(values), len(packed)) + packed)
    if len(values) == 1:
        return Pdu(WRITE_SINGLE_REGISTER, struct.pack(">HH", address, values[0] & 0xFFFF))
    words = struct.pack(f">{len(values)}H", *(v & 0xFFFF for v in values))
    return Pdu(WRITE_MULTIPLE_REGISTERS, struct.pack(">HHB", address, len(values), len(words)) + words)


def diagnostics_request(sub_function: int, data: int = 0) -> Pdu:
    return Pdu(DIAGNOSTICS, struct.pack(">HH", sub_function, data))


def device_id_request() -> Pdu:
    return Pdu(ENCAPSULATED_INTERFACE, bytes((MEI_READ_DEVICE_ID, 0x01, 0x00)))


def check_exception(request: Pdu, response: Pdu) -> None:
    if response.function_code == (request.function_code | 0x80):
        if len(response.data) != 1:
            raise MalformedResponse("exception PDU without a single code byte")
        raise ExceptionResponse(request.function_code, response.data[0])
    if response.function_code != request.function_code:
        raise MalformedResponse(
            f"response function 0x{response.function_code:02X} for request 0x{request.function_code:02X}"
        )


def parse_read_response(request: Pdu, response: Pdu) -> List[int]:
    check_exception(request, response)
    count = _u16(request.data, 2)
    data = response.data
    if not data or data[0] != len(data) - 1:
        raise MalformedResponse("byte count does not match payload")
    area = _AREA_BY_READ_CODE[request.function_code]
    if area.is_bit:
        if data[0] != (count + 7) // 8:
            raise MalformedResponse("bit payload size")
        return unpack_bits(data[1:], count)
    if data[0] != 2 * count:
        raise MalformedResponse("register payload size")
    return list(struct.unpack(f">{count}H", data[1:]))


def parse_device_id_response(request: Pdu, response: Pdu) -> Dict[int, str]:
    check_exception(request, response)
    data = response.data
    try:
        if data[0] != MEI_READ_DEVICE_ID:
            raise MalformedResponse("unexpected MEI type")
        n = data[5]
        pos = 6
        objects = {}
        for _ in range(n):
            obj_id, size = data[pos], data[pos + 1]
            raw = data[pos + 2:pos + 2 + size]
            if len(raw) != size:
                raise MalformedResponse("truncated device id object")
            objects[obj_id] = raw.decode("utf-8", errors="replace")
            pos += 2 + size
    except IndexError as exc:
        raise MalformedResponse("truncated device id response") from exc
    return objects
