"""
Labeled dataset export
======================

Turns a capture (one :class:`CapturedPacket` per ADU or connection attempt)
and a campaign log into the 13-column CSV dataset. A row is malicious when
the fabric says an attacker originated it; responses to attacker requests
inherit the request's labels unless that rule is switched off.
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from . import modbus as mb
from .attacks import CampaignLog
from .netfabric import CapturedPacket

COLUMNS = (
    "time", "src_mac", "dest_mac", "src_ip", "dest_ip", "protocol", "length", "unit_id",
    "func_code", "data", "attack_specific", "attack_category", "attack_binary",
)
HEADER = ",".join(COLUMNS)

PARSE_FAILURE = "PARSE_ERROR"
UNATTRIBUTED = "unattributed"

PROTOCOL_TCP = "Modbus/TCP"
PROTOCOL_RTU = "Modbus RTU"
PROTOCOL_CONNECT = "TCP"


@dataclass(frozen=True)
class DatasetRow:
    time: float
    src_mac: str
    dest_mac: str
    src_ip: str
    dest_ip: str
    protocol: str
    length: int
    unit_id: Optional[int]
    func_code: Optional[int]
    data: str
    attack_specific: str = ""
    attack_category: str = ""
    attack_binary: int = 0
    # provenance carried for labeling; not exported
    time_us: int = 0
    origin: str = ""
    origin_role: str = ""
    direction: str = ""
    session: str = ""
    transaction_id: Optional[int] = None

    def values(self) -> List[str]:
        return [
            f"{self.time:.6f}", self.src_mac, self.dest_mac, self.src_ip, self.dest_ip, self.protocol,
            str(self.length), "" if self.unit_id is None else str(self.unit_id),
            "" if self.func_code is None else str(self.func_code), self.data,
            self.attack_specific, self.attack_category, str(self.attack_binary),
        ]


def _decode(packet: CapturedPacket) -> Tuple[Optional[int], Optional[int], str, Optional[int]]:
    """(unit_id, func_code, data_hex, transaction_id); data is the sentinel on failure."""
    raw = packet.raw_adu
    if packet.transport == "tcp":
        try:
            adu = mb.decode_tcp(raw)
        except mb.ModbusError:
            unit = raw[6] if len(raw) > 6 else None
            fc = raw[7] if len(raw) > 7 else None
            txid = int.from_bytes(raw[:2], "big") if len(raw) >= 2 else None
            return unit, fc, PARSE_FAILURE, txid
        return adu.unit_id, adu.pdu.function_code, adu.pdu.data.hex(), adu.transaction_id
    try:
        address, pdu = mb.decode_rtu(raw)
    except mb.ModbusError:
        return (raw[0] if raw else None), (raw[1] if len(raw) > 1 else None), PARSE_FAILURE, None
    return address, pdu.function_code, pdu.data.hex(), None


def extract_rows(capture: Iterable[CapturedPacket]) -> List[DatasetRow]:
    rows = []
    for p in capture:
        if p.kind == "connect":
            protocol, unit, fc, data, txid = PROTOCOL_CONNECT, None, None, "", None
        else:
            protocol = PROTOCOL_TCP if p.transport == "tcp" else PROTOCOL_RTU
            unit, fc, data, txid = _decode(p)
        rows.append(DatasetRow(
            time=p.time_us / 1e6, src_mac=p.src_mac, dest_mac=p.dst_mac, src_ip=p.src_ip,
            dest_ip=p.dst_ip, protocol=protocol, length=len(p.raw_adu), unit_id=unit, func_code=fc,
            data=data, time_us=p.time_us, origin=p.origin, origin_role=p.origin_role, direction=p.direction,
            session=p.session, transaction_id=txid,
        ))
    return rows


@dataclass
class QaReport:
    rows: int = 0
    malicious: int = 0
    parse_failures: int = 0
    unattributed: int = 0
    per_attack: Counter = None

    def text(self) -> str:
        lines = [
            f"rows: {self.rows}",
            f"malicious: {self.malicious}",
            f"benign: {self.rows - self.malicious}",
            f"parse_failures: {self.parse_failures}",
            f"unattributed: {self.unattributed}",
        ]
        for name, n in sorted((self.per_attack or {}).items()):
            lines.append(f"attack[{name}]: {n}")
        return "\n".join(lines) + "\n"


def label_rows(rows: Sequence[DatasetRow], campaign_log: Optional[CampaignLog],
               attackers: Optional[Iterable[str]] = None, label_responses: bool = True) -> List[DatasetRow]:
    """Fill the three label columns.

    ``attackers`` names the attacker hosts; by default any packet the fabric
    recorded with origin role "attacker" counts.
    """
    names = None if attackers is None else frozenset(attackers)

    def hostile(row):
        return row.origin in names if names is not None else row.origin_role == "attacker"

    entries = sorted(campaign_log.entries if campaign_log else [], key=lambda e: e.start_us)
    # labels of open attacker requests: tcp by (session, txid), serial by bus
    pending: Dict[tuple, Tuple[str, str]] = {}
    out = []
    cursor = 0
    for row in rows:
        labels = None
        if hostile(row):
            while cursor < len(entries) and entries[cursor].end_us < row.time_us:
                cursor += 1
            entry = entries[cursor] if cursor < len(entries) and entries[cursor].covers(row.time_us) else None
            labels = (entry.spec.display_name, entry.spec.category) if entry else (UNATTRIBUTED, UNATTRIBUTED)
            if row.direction == "request":
                pending[_pair_key(row)] = labels
        elif row.direction == "response":
            key = _pair_key(row)
            inherited = pending.pop(key, None)
            if inherited is not None and label_responses:
                labels = inherited
        elif row.direction == "request" and row.session.startswith("bus:"):
            pending.pop(_pair_key(row), None)
        if labels is None:
            out.append(replace(row, attack_specific="", attack_category="", attack_binary=0))
        else:
            out.append(replace(row, attack_specific=labels[0], attack_category=labels[1], attack_binary=1))
    return out


def _pair_key(row: DatasetRow) -> tuple:
    if row.session.startswith("bus:"):
        # a serial reply always follows its request on the same bus
        return (row.session,)
    return (row.session, row.transaction_id)


def qa_report(rows: Sequence[DatasetRow]) -> QaReport:
    per_attack = Counter(r.attack_specific for r in rows if r.attack_binary)
    return QaReport(
        rows=len(rows),
        malicious=sum(r.attack_binary for r in rows),
        parse_failures=sum(r.data == PARSE_FAILURE for r in rows),
        unattributed=per_attack.get(UNATTRIBUTED, 0),
        per_attack=per_attack,
    )


def write_csv(rows: Iterable[DatasetRow], path) -> int:
    n = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for row in rows:
            w.writerow(row.values())
            n += 1
    return n


def read_csv(path) -> List[Dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def build_dataset(capture: Sequence[CapturedPacket], campaign_log: Optional[CampaignLog],
                  label_responses: bool = True) -> Tuple[List[DatasetRow], QaReport]:
    rows = label_rows(extract_rows(capture), campaign_log, label_responses=label_responses)
    return rows, qa_report(rows)
