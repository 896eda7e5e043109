import random
import struct

import pytest
from hypothesis import given, settings, strategies as st

from icsim import modbus as mb
from icsim.modbus import Area, Pdu, RegisterBank, ServerMode, DeviceEffect

from oracles import crc16_bitwise

# frozen from the bitwise oracle (tests/oracles.py)
CRC_CHECK_123456789 = 0x4B37
CRC_READ_10_HOLDING = 0xCDC5


def test_crc_empty_is_initial_value():
    assert mb.crc16(b"") == 0xFFFF


def test_crc_check_string():
    assert crc16_bitwise(b"123456789") == CRC_CHECK_123456789
    assert mb.crc16(b"123456789") == CRC_CHECK_123456789


def test_crc_read_request_and_roundtrip():
    body = bytes.fromhex("01030000000A")
    assert mb.crc16(body) == CRC_READ_10_HOLDING
    frame = mb.encode_rtu(1, Pdu(0x03, bytes.fromhex("0000000A")))
    assert frame == body + bytes((0xC5, 0xCD))
    assert mb.decode_rtu(frame) == (1, Pdu(0x03, bytes.fromhex("0000000A")))


@settings(max_examples=300)
@given(st.binary(max_size=300))
def test_crc_matches_bitwise_oracle(data):
    assert mb.crc16(data) == crc16_bitwise(data)


def test_encode_rtu_layout():
    frame = mb.encode_rtu(1, Pdu(0x03, bytes.fromhex("0000000A")))
    assert len(frame) == 8
    crc = mb.crc16(frame[:6])
    assert frame[6] == crc & 0xFF and frame[7] == crc >> 8


def test_encode_rtu_broadcast_and_range():
    assert mb.encode_rtu(0, Pdu(0x06, b"\x00\x01\x00\x02"))[0] == 0x00
    with pytest.raises(mb.AddressOutOfRange):
        mb.encode_rtu(248, Pdu(0x03, b"\x00\x00\x00\x01"))


def test_pdu_too_long():
    with pytest.raises(mb.PduTooLong):
        Pdu(0x10, bytes(253))


def test_decode_rtu_errors():
    frame = mb.encode_rtu(7, Pdu(0x04, b"\x00\x00\x00\x02"))
    corrupted = frame[:-1] + bytes((frame[-1] ^ 0xFF,))
    with pytest.raises(mb.CrcMismatch):
        mb.decode_rtu(corrupted)
    with pytest.raises(mb.FrameTooShort):
        mb.decode_rtu(frame[:3])


pdus = st.builds(Pdu, st.integers(0, 255), st.binary(max_size=252))


@given(st.integers(0, 247), pdus)
def test_rtu_roundtrip(address, pdu):
    frame = mb.encode_rtu(address, pdu)
    assert len(frame) == 1 + 1 + len(pdu.data) + 2
    assert mb.decode_rtu(frame) == (address, pdu)


@given(st.integers(0, 0xFFFF), st.integers(0, 255), pdus)
def test_tcp_roundtrip(txid, unit, pdu):
    adu = mb.TcpAdu(txid, unit, pdu)
    raw = mb.encode_tcp(adu)
    assert struct.unpack(">H", raw[4:6])[0] == 1 + 1 + len(pdu.data)
    assert mb.decode_tcp(raw) == adu


def test_tcp_decode_errors():
    raw = bytearray(mb.encode_tcp(mb.TcpAdu(1, 1, Pdu(3, b"\x00\x00\x00\x01"))))
    bad_proto = bytes(raw[:2]) + b"\x00\x05" + bytes(raw[4:])
    with pytest.raises(mb.ProtocolIdNonZero):
        mb.decode_tcp(bad_proto)
    bad_len = bytes(raw[:4]) + b"\x00\x09" + bytes(raw[6:])
    with pytest.raises(mb.LengthMismatch):
        mb.decode_tcp(bad_len)
    with pytest.raises(mb.FrameTooShort):
        mb.decode_tcp(bytes(raw[:7]))


def test_single_bit_corruption_detected():
    rng = random.Random(11)
    for _ in range(200):
        pdu = Pdu(rng.randrange(256), bytes(rng.randrange(256) for _ in range(rng.randrange(0, 40))))
        addr = rng.randrange(248)
        frame = bytearray(mb.encode_rtu(addr, pdu))
        bit = rng.randrange(len(frame) * 8)
        frame[bit // 8] ^= 1 << (bit % 8)
        with pytest.raises(mb.CrcMismatch):
            mb.decode_rtu(bytes(frame))


@pytest.fixture
def bank():
    b = RegisterBank()
    b.define(Area.COIL, 0, 4)
    b.define(Area.DISCRETE_INPUT, 10, 2, initial=1)
    b.define(Area.HOLDING_REGISTER, 0, 3)
    b.holding_registers[1] = 1234
    b.define(Area.INPUT_REGISTER, 100, 2, initial=42)
    b.identity = mb.DeviceIdentity("Acme", "PLC-9", "1.2")
    return b


def test_read_holding_registers_direct_lookup(bank):
    req = mb.read_request(Area.HOLDING_REGISTER, 0, 3)
    resp, effect = mb.execute_on_bank(req, bank)
    assert effect is None
    assert mb.parse_read_response(req, resp) == [0, 1234, 0]
    assert resp.data == bytes((6,)) + struct.pack(">3H", 0, 1234, 0)


def test_read_unconfigured_address_is_exception_02(bank):
    resp, _ = mb.execute_on_bank(mb.read_request(Area.HOLDING_REGISTER, 50, 1), bank)
    assert resp.is_exception and resp.function_code == 0x83
    assert resp.data == b"\x02"


def test_read_partial_range_is_exception_02(bank):
    resp, _ = mb.execute_on_bank(mb.read_request(Area.HOLDING_REGISTER, 2, 2), bank)
    assert resp == mb.exception_pdu(0x03, 0x02)


def test_unsupported_function_is_exception_01(bank):
    resp, _ = mb.execute_on_bank(Pdu(0x14, b""), bank)
    assert resp == mb.exception_pdu(0x14, 0x01)
    sensor = RegisterBank()
    sensor.define(Area.INPUT_REGISTER, 0)
    resp, _ = mb.execute_on_bank(mb.write_request(Area.COIL, 0, [1]), sensor)
    assert resp == mb.exception_pdu(0x05, 0x01)


def test_quantity_limits(bank):
    resp, _ = mb.execute_on_bank(mb.read_request(Area.HOLDING_REGISTER, 0, 126), bank)
    assert resp == mb.exception_pdu(0x03, 0x03)
    resp, _ = mb.execute_on_bank(mb.read_request(Area.COIL, 0, 2001), bank)
    assert resp == mb.exception_pdu(0x01, 0x03)
    resp, _ = mb.execute_on_bank(mb.read_request(Area.COIL, 0, 0), bank)
    assert resp == mb.exception_pdu(0x01, 0x03)


def test_read_bits(bank):
    bank.coils[2] = 1
    req = mb.read_request(Area.COIL, 0, 4)
    resp, _ = mb.execute_on_bank(req, bank)
    assert resp.data == b"\x01\x04"
    assert mb.parse_read_response(req, resp) == [0, 0, 1, 0]
    req = mb.read_request(Area.DISCRETE_INPUT, 10, 2)
    assert mb.parse_read_response(req, mb.execute_on_bank(req, bank)[0]) == [1, 1]


def test_device_identification(bank):
    req = mb.device_id_request()
    resp, _ = mb.execute_on_bank(req, bank)
    assert mb.parse_device_id_response(req, resp) == {0: "Acme", 1: "PLC-9", 2: "1.2"}
    bank.identity = None
    resp, _ = mb.execute_on_bank(req, bank)
    assert resp == mb.exception_pdu(0x2B, 0x01)


@pytest.mark.parametrize(
    "area,address,values",
    [
        (Area.COIL, 1, [1]),
        (Area.COIL, 0, [1, 0, 1]),
        (Area.HOLDING_REGISTER, 2, [65535]),
        (Area.HOLDING_REGISTER, 0, [7, 8, 9]),
    ],
)
def test_write_then_read(bank, area, address, values):
    seen = []
    bank.on_write = lambda a, addr, v: seen.append((a, addr, v))
    wreq = mb.write_request(area, address, values)
    resp, _ = mb.execute_on_bank(wreq, bank)
    assert not resp.is_exception
    rreq = mb.read_request(area, address, len(values))
    assert mb.parse_read_response(rreq, mb.execute_on_bank(rreq, bank)[0]) == values
    assert seen == [(area, address + i, v) for i, v in enumerate(values)]


def test_write_multiple_rejects_partial_range(bank):
    resp, _ = mb.execute_on_bank(mb.write_request(Area.HOLDING_REGISTER, 1, [1, 2, 3]), bank)
    assert resp == mb.exception_pdu(0x10, 0x02)
    assert bank.holding_registers[1] == 1234


def test_write_single_coil_bad_value(bank):
    resp, _ = mb.execute_on_bank(Pdu(0x05, b"\x00\x00\x12\x34"), bank)
    assert resp == mb.exception_pdu(0x05, 0x03)


def test_diagnostics_effects(bank):
    resp, effect = mb.execute_on_bank(mb.diagnostics_request(0x0004), bank)
    assert resp is None and effect is DeviceEffect.FORCE_LISTEN
    req = mb.diagnostics_request(0x0001)
    resp, effect = mb.execute_on_bank(req, bank)
    assert resp == req and effect is DeviceEffect.RESTART
    req = mb.diagnostics_request(0x0000, 0xBEEF)
    assert mb.execute_on_bank(req, bank) == (req, None)


def test_listen_only_answers_only_restart(bank):
    before = bank.addresses(), dict(bank.holding_registers), dict(bank.coils)
    requests = [
        mb.read_request(Area.HOLDING_REGISTER, 0, 1),
        mb.write_request(Area.HOLDING_REGISTER, 0, [5]),
        mb.write_request(Area.COIL, 0, [1, 1]),
        mb.diagnostics_request(0x0004),
        mb.diagnostics_request(0x0000),
        mb.device_id_request(),
        Pdu(0x41, b""),
    ]
    for req in requests:
        assert mb.execute_on_bank(req, bank, ServerMode.LISTEN_ONLY) == (None, None)
    assert (bank.addresses(), dict(bank.holding_registers), dict(bank.coils)) == before
    req = mb.diagnostics_request(0x0001)
    assert mb.execute_on_bank(req, bank, ServerMode.LISTEN_ONLY) == (req, DeviceEffect.RESTART)


def test_exception_pdu_shape():
    p = mb.exception_pdu(0x03, 0x02)
    assert p.function_code == 0x83 and p.data == b"\x02" and p.exception_code == 2


def test_check_exception_raises():
    req = mb.read_request(Area.COIL, 0, 1)
    with pytest.raises(mb.ExceptionResponse) as info:
        mb.parse_read_response(req, mb.exception_pdu(0x01, 0x02))
    assert info.value.exception_code == 2
    with pytest.raises(mb.MalformedResponse):
        mb.parse_read_response(req, Pdu(0x01, b"\x05\x00"))
