"""
Attacks and campaigns
=====================

The nine Modbus attacks, run from an attacker host declared in the config,
plus a seeded campaign runner that alternates random gaps and attacks and
keeps a log of attack windows (the labeling ground truth).

Every attack is a generator over an :class:`Attacker`. Each ``yield`` hands
control back to the scheduler for one tick, so attacks interleave with plant
traffic. The generator's return value is the attack result.
"""

from __future__ import annotations

import csv
import json
import random
from dataclasses import dataclass, field
from typing import Dict, Generator, List, Optional, Sequence, Set, Tuple

from . import modbus as mb
from .modbus import Area
from .netfabric import ConnectionLost, Refused, Session, Unreachable

RECONNAISSANCE = "Reconnaissance"
MEASUREMENT_INJECTION = "Response and Measurement Injection"
COMMAND_INJECTION = "Command Injection"
DENIAL_OF_SERVICE = "Denial of Service"
CATEGORIES = (RECONNAISSANCE, MEASUREMENT_INJECTION, COMMAND_INJECTION, DENIAL_OF_SERVICE)


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class AttackSpec:
    name: str
    display_name: str
    category: str
    # what the attack is aimed at: "unit" (one slave), "link" (bus or endpoint), "tcp" (tcp unit only)
    scope: str = "unit"


@dataclass(frozen=True)
class Target:
    transport: str          # "tcp" | "serial"
    device: str = ""        # tcp server host
    port: int = 502
    bus: str = ""
    unit_id: int = 1

    @property
    def label(self) -> str:
        if self.transport == "tcp":
            return f"{self.device}:{self.port}/{self.unit_id}"
        return f"{self.bus}/{self.unit_id}"

    def with_unit(self, unit_id: int) -> "Target":
        return Target(self.transport, self.device, self.port, self.bus, unit_id)

    @classmethod
    def parse(cls, text: str) -> "Target":
        """``host:port/unit`` for TCP, ``bus/unit`` for serial."""
        head, _, unit = text.partition("/")
        unit_id = int(unit) if unit else 1
        if ":" in head:
            device, _, port = head.partition(":")
            return cls("tcp", device=device, port=int(port), unit_id=unit_id)
        return cls("serial", bus=head, unit_id=unit_id)


class Attacker:
    """Client identity of one declared attacker host."""

    def __init__(self, sim, name: Optional[str] = None):
        attackers = [a.name for a in sim.config.attackers]
        if not attackers:
            raise PlanError("config declares no attacker endpoints")
        name = name or attackers[0]
        if name not in attackers:
            raise PlanError(f"unknown attacker '{name}'")
        self.sim = sim
        self.name = name
        self.fabric = sim.fabric
        self.host = sim.fabric.hosts[name]
        self._sessions: Dict[Tuple[str, int], Session] = {}

    def targets(self) -> List[Target]:
        """Every slave this attacker can address: TCP servers on its network, units on its buses."""
        out = []
        if self.host.endpoint is not None:
            for (device, port), binding in sorted(self.fabric.servers.items()):
                if binding.endpoint.network_name == self.host.endpoint.network_name:
                    out.append(Target("tcp", device=device, port=port, unit_id=binding.unit_id))
        for bus in sorted(self.fabric.buses.values(), key=lambda b: b.name):
            if self.name in bus.rogues:
                out.extend(Target("serial", bus=bus.name, unit_id=u) for u in sorted(bus.attached))
        return out

    def request(self, target: Target, pdu: mb.Pdu) -> Optional[mb.Pdu]:
        """One request; None on timeout or refused connection. Bad replies raise MalformedResponse."""
        if target.transport == "serial":
            return self.fabric.buses[target.bus].request(self.name, target.unit_id, pdu)
        key = (target.device, target.port)
        session = self._sessions.get(key)
        if session is None or session.closed:
            try:
                session = self.fabric.connect(self.name, target.device, target.port)
            except (Refused, Unreachable):
                return None
            self._sessions[key] = session
        try:
            return session.transact(target.unit_id, pdu)
        except ConnectionLost:
            self._sessions.pop(key, None)
            return None

    def connect_and_abandon(self, target: Target) -> bool:
        try:
            session = self.fabric.connect(self.name, target.device, target.port)
        except (Refused, Unreachable):
            return False
        session.close()
        return True


def _try(attacker: Attacker, target: Target, pdu: mb.Pdu) -> Tuple[Optional[mb.Pdu], bool]:
    """Request that never raises: (response, malformed)."""
    try:
        return attacker.request(target, pdu), False
    except mb.MalformedResponse:
        return None, True


#
#   Reconnaissance
#

def address_scan(attacker: Attacker, target: Target, first: int = 1, last: int = mb.MAX_UNIT_ADDRESS,
                 probes_per_tick: int = 50) -> Generator:
    """Probe every unit id with a one-register read; any answer, exception included, proves presence."""
    found: Set[int] = set()
    probe = mb.read_request(Area.HOLDING_REGISTER, 0, 1)
    for n, unit in enumerate(range(first, last + 1), 1):
        response, malformed = _try(attacker, target.with_unit(unit), probe)
        if response is not None or malformed:
            found.add(unit)
        if n % probes_per_tick == 0:
            yield
    return found


def function_code_scan(attacker: Attacker, target: Target, first: int = 1, last: int = 127,
                       probes_per_tick: int = 50) -> Generator:
    """Send each function code with a one-byte body.

    The body is too short for every defined request, so a supported code is
    answered with exception 0x03 (or data) and nothing is modified.
    """
    supported: Set[int] = set()
    timeouts = 0
    for n, code in enumerate(range(first, last + 1), 1):
        response, malformed = _try(attacker, target, mb.Pdu(code, b"\x00"))
        if response is None and not malformed:
            timeouts += 1
        elif malformed or response.exception_code != mb.ILLEGAL_FUNCTION:
            supported.add(code)
        if n % probes_per_tick == 0:
            yield
    return ScanResult(supported, timeouts)


@dataclass
class ScanResult:
    supported: Set[int]
    timeouts: int = 0


@dataclass
class IdentityResult:
    objects: Dict[int, str] = field(default_factory=dict)
    exception: Optional[int] = None
    parse_error: bool = False
    timeout: bool = False

    @property
    def strings(self) -> Tuple[str, ...]:
        return tuple(self.objects[k] for k in sorted(self.objects))


def device_identification(attacker: Attacker, target: Target) -> Generator:
    request = mb.device_id_request()
    response, malformed = _try(attacker, target, request)
    result = IdentityResult(parse_error=malformed, timeout=response is None and not malformed)
    if response is not None:
        try:
            result.objects = mb.parse_device_id_response(request, response)
        except mb.ExceptionResponse as exc:
            result.exception = exc.exception_code
        except mb.MalformedResponse:
            result.parse_error = True
    yield
    return result


#
#   Response and measurement injection
#

def naive_sensor_read(attacker: Attacker, target: Target, first: int = 0, last: int = 0xFFFF,
                      areas: Sequence[str] = tuple(a.value for a in Area),
                      probes_per_tick: int = 200) -> Generator:
    """Chunked reads over every area; chunks that fail with 0x02 fall back to single-address probes.

    An area answering 0x01 is not implemented by the device and is skipped.
    Returns ``{(area, address): value}``.
    """
    found: Dict[Tuple[Area, int], int] = {}
    sent = 0

    def read(area, address, count):
        nonlocal sent
        sent += 1
        request = mb.read_request(area, address, count)
        response, _ = _try(attacker, target, request)
        if response is None:
            return None
        try:
            return mb.parse_read_response(request, response)
        except mb.ExceptionResponse as exc:
            return exc.exception_code
        except mb.MalformedResponse:
            return None

    for area in (Area(a) for a in areas):
        chunk = mb.MAX_READ_BITS if area.is_bit else mb.MAX_READ_REGISTERS
        for start in range(first, last + 1, chunk):
            count = min(chunk, last + 1 - start)
            result = read(area, start, count)
            if sent % probes_per_tick == 0:
                yield
            if isinstance(result, list):
                found.update(((area, start + i), v) for i, v in enumerate(result))
                continue
            if result == mb.ILLEGAL_FUNCTION:
                break
            if result != mb.ILLEGAL_DATA_ADDRESS:
                continue
            for address in range(start, start + count):
                single = read(area, address, 1)
                if isinstance(single, list):
                    found[(area, address)] = single[0]
                if sent % probes_per_tick == 0:
                    yield
    return found


@dataclass(frozen=True)
class Injection:
    time_us: int
    area: Area
    address: int
    value: int
    accepted: bool


def sporadic_injection(attacker: Attacker, target: Target, rng: random.Random, writes: int = 10,
                       address_min: int = 0, address_max: int = 15,
                       areas: Sequence[str] = (Area.COIL.value, Area.HOLDING_REGISTER.value),
                       gap_ticks_min: int = 1, gap_ticks_max: int = 5) -> Generator:
    """Random single writes to coils/holding registers at random moments."""
    log: List[Injection] = []
    for _ in range(writes):
        area = Area(rng.choice(list(areas)))
        address = rng.randint(address_min, address_max)
        value = rng.randint(0, 1) if area.is_bit else rng.randint(0, 0xFFFF)
        now = attacker.sim.clock.now_us
        response, _ = _try(attacker, target, mb.write_request(area, address, [value]))
        log.append(Injection(now, area, address, value, response is not None and not response.is_exception))
        for _ in range(rng.randint(gap_ticks_min, gap_ticks_max)):
            yield
    return log


#
#   Command injection
#

def force_listen(attacker: Attacker, target: Target) -> Generator:
    """Diagnostics 0x0004. A compliant device never answers this, so the result is whether it replied."""
    response, _ = _try(attacker, target, mb.diagnostics_request(mb.DIAG_FORCE_LISTEN_ONLY))
    yield
    return response is not None


def restart_comm(attacker: Attacker, target: Target) -> Generator:
    """Diagnostics 0x0001; returns True when the restart was acknowledged."""
    response, _ = _try(attacker, target, mb.diagnostics_request(mb.DIAG_RESTART_COMMUNICATIONS))
    yield
    return response is not None and not response.is_exception


#
#   Denial of service
#

@dataclass
class FloodReport:
    attempted: int
    duration_s: float

    @property
    def achieved_rate(self) -> float:
        return self.attempted / self.duration_s if self.duration_s > 0 else 0.0


def _paced(sim, rate: float, duration_s: float):
    """Yields how many events to emit in each tick of the window."""
    owed = 0.0
    for _ in range(sim.ticks_for_s(duration_s)):
        owed += rate * sim.tick_s
        n = int(owed)
        owed -= n
        yield n


def data_flood(attacker: Attacker, target: Target, rate: float = 500.0, duration_s: float = 5.0,
               area: str = Area.HOLDING_REGISTER.value, address: int = 0, count: int = 125) -> Generator:
    request = mb.read_request(Area(area), address, count)
    sent = 0
    for n in _paced(attacker.sim, rate, duration_s):
        for _ in range(n):
            _try(attacker, target, request)
            sent += 1
        yield
    return FloodReport(sent, duration_s)


def connection_flood(attacker: Attacker, target: Target, rate: float = 200.0,
                     duration_s: float = 5.0) -> Generator:
    attempted = 0
    for n in _paced(attacker.sim, rate, duration_s):
        for _ in range(n):
            attacker.connect_and_abandon(target)
            attempted += 1
        yield
    return FloodReport(attempted, duration_s)


ATTACKS: Dict[str, AttackSpec] = {
    spec.name: spec for spec in (
        AttackSpec("address_scan", "Address Scan", RECONNAISSANCE, "link"),
        AttackSpec("function_code_scan", "Function Code Scan", RECONNAISSANCE),
        AttackSpec("device_identification", "Device Identification", RECONNAISSANCE),
        AttackSpec("naive_sensor_read", "Naive Sensor Read", MEASUREMENT_INJECTION),
        AttackSpec("sporadic_injection", "Sporadic Sensor Measurement Injection", MEASUREMENT_INJECTION),
        AttackSpec("force_listen", "Force Listen Mode", COMMAND_INJECTION),
        AttackSpec("restart_comm", "Restart Communications", COMMAND_INJECTION),
        AttackSpec("data_flood", "Data Flood Attack", DENIAL_OF_SERVICE, "tcp"),
        AttackSpec("connection_flood", "Connection Flood Attack", DENIAL_OF_SERVICE, "tcp"),
    )
}

ATTACK_FUNCTIONS = {
    "address_scan": address_scan,
    "function_code_scan": function_code_scan,
    "device_identification": device_identification,
    "naive_sensor_read": naive_sensor_read,
    "sporadic_injection": sporadic_injection,
    "force_listen": force_listen,
    "restart_comm": restart_comm,
    "data_flood": data_flood,
    "connection_flood": connection_flood,
}


def attack_body(name: str, attacker: Attacker, target: Target, rng: Optional[random.Random] = None,
                **params) -> Generator:
    if name not in ATTACK_FUNCTIONS:
        raise PlanError(f"unknown attack '{name}'")
    if name == "sporadic_injection":
        params["rng"] = rng or attacker.sim.rng_for(f"attack:{name}")
    return ATTACK_FUNCTIONS[name](attacker, target, **params)


def run_attack(sim, name: str, target: Target, attacker: Optional[str] = None,
               rng: Optional[random.Random] = None, **params):
    """Run one attack to completion on a live simulation; returns its result."""
    body = attack_body(name, Attacker(sim, attacker), target, rng, **params)
    return sim.run_task(body, name)


#
#   Campaigns
#

DEFAULT_CAMPAIGN_PARAMS: Dict[str, Dict] = {
    "address_scan": {},
    "function_code_scan": {},
    "device_identification": {},
    # full 0..65535 sweeps cost ~65k probes per area; campaigns sweep the low block
    "naive_sensor_read": {"first": 0, "last": 511},
    "sporadic_injection": {"writes": 10},
    "force_listen": {},
    "restart_comm": {},
    "data_flood": {"rate": 500.0},
    "connection_flood": {"rate": 200.0},
}


@dataclass(frozen=True)
class CampaignPlan:
    seed: int = 0
    duration_s: float = 120.0
    min_gap_s: float = 1.0
    max_gap_s: float = 5.0
    attacks: Tuple[str, ...] = tuple(ATTACKS)
    attacker: Optional[str] = None
    flood_min_s: float = 3.0
    flood_max_s: float = 8.0
    params: Dict[str, Dict] = field(default_factory=dict)

    def __post_init__(self):
        unknown = [a for a in self.attacks if a not in ATTACKS]
        unknown += [a for a in self.params if a not in ATTACKS]
        if unknown:
            raise PlanError(f"unknown attack name(s): {', '.join(sorted(set(unknown)))}")
        if self.duration_s < 0 or self.min_gap_s < 0 or self.max_gap_s < self.min_gap_s:
            raise PlanError("durations must be non-negative and min_gap_s <= max_gap_s")
        if self.flood_max_s < self.flood_min_s or self.flood_min_s < 0:
            raise PlanError("flood_min_s must be non-negative and <= flood_max_s")

    @classmethod
    def from_dict(cls, doc: Dict) -> "CampaignPlan":
        if not isinstance(doc, dict):
            raise PlanError("campaign plan must be a JSON object")
        allowed = set(cls.__dataclass_fields__)
        extra = set(doc) - allowed
        if extra:
            raise PlanError(f"unknown plan key(s): {', '.join(sorted(extra))}")
        doc = dict(doc)
        if "attacks" in doc:
            doc["attacks"] = tuple(doc["attacks"])
        try:
            return cls(**doc)
        except TypeError as exc:
            raise PlanError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "CampaignPlan":
        with open(path, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise PlanError(f"{path}: {exc}") from None
        return cls.from_dict(doc)


@dataclass(frozen=True)
class LogEntry:
    start_us: int
    end_us: int
    name: str
    target: str
    params: Dict

    @property
    def spec(self) -> AttackSpec:
        return ATTACKS[self.name]

    def covers(self, time_us: int) -> bool:
        return self.start_us <= time_us <= self.end_us


@dataclass
class CampaignLog:
    entries: List[LogEntry] = field(default_factory=list)
    results: List[object] = field(default_factory=list)

    COLUMNS = ("start_s", "end_s", "attack_specific", "attack_category", "target", "params_json")

    def __len__(self):
        return len(self.entries)

    def entry_at(self, time_us: int) -> Optional[LogEntry]:
        for entry in self.entries:
            if entry.covers(time_us):
                return entry
        return None

    def categories(self) -> Set[str]:
        return {e.spec.category for e in self.entries}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.COLUMNS)
            for e in self.entries:
                w.writerow([f"{e.start_us / 1e6:.6f}", f"{e.end_us / 1e6:.6f}", e.spec.display_name,
                            e.spec.category, e.target, json.dumps(e.params, sort_keys=True)])

    @classmethod
    def read_csv(cls, path) -> "CampaignLog":
        by_display = {s.display_name: s.name for s in ATTACKS.values()}
        log = cls()
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != cls.COLUMNS:
                raise ValueError(f"{path}: not a campaign log (columns {reader.fieldnames})")
            for row in reader:
                log.entries.append(LogEntry(
                    round(float(row["start_s"]) * 1e6), round(float(row["end_s"]) * 1e6),
                    by_display[row["attack_specific"]], row["target"], json.loads(row["params_json"]),
                ))
        return log


def _choose_target(rng: random.Random, spec: AttackSpec, targets: List[Target]) -> Optional[Target]:
    if spec.scope == "tcp":
        targets = [t for t in targets if t.transport == "tcp"]
    elif spec.scope == "link":
        # one entry per bus, one per tcp endpoint
        seen, links = set(), []
        for t in targets:
            key = t.bus if t.transport == "serial" else (t.device, t.port)
            if key not in seen:
                seen.add(key)
                links.append(t)
        targets = links
    return rng.choice(targets) if targets else None


def campaign_body(sim, plan: CampaignPlan, log: CampaignLog) -> Generator:
    rng = random.Random(f"{plan.seed}:campaign")
    attacker = Attacker(sim, plan.attacker)
    targets = attacker.targets()
    end_tick = sim.tick + sim.ticks_for_s(plan.duration_s)
    bag: List[str] = []
    while True:
        for _ in range(sim.ticks_for_s(rng.uniform(plan.min_gap_s, plan.max_gap_s))):
            yield
        if sim.tick >= end_tick or not plan.attacks:
            break
        if not bag:
            # every enabled attack runs once before any repeats
            bag = list(plan.attacks)
            rng.shuffle(bag)
        name = bag.pop()
        spec = ATTACKS[name]
        target = _choose_target(rng, spec, targets)
        if target is None:
            continue
        params = dict(DEFAULT_CAMPAIGN_PARAMS[name])
        params.update(plan.params.get(name, {}))
        remaining_s = (end_tick - sim.tick) * sim.tick_s
        if name in ("data_flood", "connection_flood") and "duration_s" not in plan.params.get(name, {}):
            params["duration_s"] = round(min(rng.uniform(plan.flood_min_s, plan.flood_max_s), remaining_s), 1)
        if name == "address_scan":
            target = target.with_unit(0)
        attack_rng = random.Random(f"{plan.seed}:campaign:{len(log)}")
        start = sim.clock.now_us
        result = yield from attack_body(name, attacker, target, attack_rng, **params)
        log.entries.append(LogEntry(start, sim.clock.now_us, name, target.label, params))
        log.results.append(result)
    return log


def run_campaign(plan: CampaignPlan, sim, max_extra_ticks: int = 100_000) -> CampaignLog:
    """Run ``plan`` on a live simulation until the campaign finishes."""
    log = CampaignLog()
    task = sim.spawn(campaign_body(sim, plan, log), "campaign")
    sim.run_until(task, sim.ticks_for_s(plan.duration_s) + max_extra_ticks)
    return log
