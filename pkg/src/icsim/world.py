"""
Physical world
==============

The shared store of named physical values (tank levels, voltages, switch
positions) that sensors read and actuators/HIL modules write, and the HIL
stepping engine that advances plant physics each tick.
"""

from __future__ import annotations

import csv
import random
import threading
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Mapping, Optional

WRITER_KINDS = frozenset({"actuator", "hil"})


class UnknownPhysicalValue(KeyError):
    pass


class WriterNotPermitted(PermissionError):
    pass


@dataclass(frozen=True)
class JournalEntry:
    time_us: int
    revision: int
    name: str
    value: float
    writer: str

    def csv_row(self) -> List[str]:
        return [f"{self.time_us / 1e6:.6f}", str(self.revision), self.name, repr(self.value)]


class PhysicalStore:
    """Named real values plus a monotonically increasing revision counter.

    ``owners`` maps each value to the HIL that declared it. ``roles`` maps
    device names to their kind; only actuators and HILs may write.
    """

    def __init__(
        self,
        initial: Mapping[str, float],
        owners: Optional[Mapping[str, str]] = None,
        roles: Optional[Mapping[str, str]] = None,
        clock: Optional[Callable[[], int]] = None,
    ):
        self._values: Dict[str, float] = {k: float(v) for k, v in initial.items()}
        self.owners = dict(owners or {})
        self.roles = dict(roles or {})
        self.revision = 0
        self.journal: List[JournalEntry] = []
        self._clock = clock or (lambda: 0)
        self._lock = threading.RLock()

    @property
    def names(self) -> List[str]:
        return list(self._values)

    def read(self, name: str) -> float:
        with self._lock:
            try:
                return self._values[name]
            except KeyError:
                raise UnknownPhysicalValue(name) from None

    def snapshot(self) -> Dict[str, float]:
        with self._lock:
            return dict(self._values)

    def _check_writer(self, writer: Optional[str]) -> None:
        if writer is None:
            return
        role = self.roles.get(writer)
        if role not in WRITER_KINDS:
            raise WriterNotPermitted(f"'{writer}' ({role}) may not write physical values")

    def write(self, name: str, value: float, writer: Optional[str] = None) -> int:
        return self.commit({name: value}, writer)

    def commit(self, updates: Mapping[str, float], writer: Optional[str] = None) -> int:
        """Apply all ``updates`` atomically; one revision per value written."""
        self._check_writer(writer)
        with self._lock:
            for name in updates:
                if name not in self._values:
                    raise UnknownPhysicalValue(name)
            now = self._clock()
            for name, value in updates.items():
                value = float(value)
                self._values[name] = value
                self.revision += 1
                self.journal.append(JournalEntry(now, self.revision, name, value, writer or ""))
            return self.revision

    def write_journal(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sim_time_s", "revision", "name", "value"])
            for entry in self.journal:
                w.writerow(entry.csv_row())


def read_value(store: PhysicalStore, name: str) -> float:
    return store.read(name)


def write_value(store: PhysicalStore, name: str, value: float, writer: Optional[str] = None) -> int:
    return store.write(name, value, writer)


@dataclass
class HilState:
    logic_id: str
    rng: random.Random
    params: Dict[str, float] = field(default_factory=dict)
    owner: Optional[str] = None
    time_us: int = 0
    # scratch space the physics model keeps between steps
    memory: Dict[str, float] = field(default_factory=dict)

    @property
    def sim_time_s(self) -> float:
        return self.time_us / 1e6


def hil_step(state: HilState, store: PhysicalStore, dt: float) -> None:
    """Advance ``state`` by ``dt`` seconds and commit the physics update."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    from .scenarios import resolve_logic

    physics = resolve_logic(state.logic_id, "hil")
    state.time_us += round(dt * 1e6)
    updates = physics(store.snapshot(), state, dt)
    if updates:
        store.commit(updates, state.owner)


def build_store(devices: Iterable, clock: Optional[Callable[[], int]] = None) -> PhysicalStore:
    """Create the store from HIL ``physical_values`` declarations of ``devices``."""
    initial, owners, roles = {}, {}, {}
    for dev in devices:
        roles[dev.name] = dev.kind
        for pv in dev.physical_values:
            initial[pv.name] = pv.initial
            owners[pv.name] = dev.name
    return PhysicalStore(initial, owners, roles, clock)
