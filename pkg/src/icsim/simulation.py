"""
Scheduler
=========

Boots a configured plant onto a fabric and advances it tick by tick.

Each tick, in order: HIL steps, device scans in configured order (each when
its scan period divides the tick), then attacker tasks. Attacker tasks are
generators; every ``yield`` waits for the next tick. Realtime mode runs the
same schedule paced against the wall clock.
"""

from __future__ import annotations

import logging
import math
import random
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, Generator, List, Optional, Tuple

from .config import SimulationConfig
from .devices import RUNTIMES, DeviceRuntime, HilRuntime, HmiRuntime, MasterRuntime
from .netfabric import Fabric, SimClock
from .world import build_store

log = logging.getLogger(__name__)

MODES = ("lockstep", "realtime")


@dataclass
class Task:
    name: str
    body: Generator
    done: bool = False
    result: object = None
    error: Optional[BaseException] = None


@dataclass(frozen=True, order=True)
class HmiCommand:
    at_s: float
    hmi: str
    controller: str
    value: int


def parse_hmi_script(text: str) -> List[HmiCommand]:
    """Lines of ``<time_s> <hmi> <controller> <value>``; '#' starts a comment."""
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ValueError(f"line {lineno}: expected '<time_s> <hmi> <controller> <value>'")
        try:
            out.append(HmiCommand(float(parts[0]), parts[1], parts[2], int(parts[3], 0)))
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    return sorted(out)


class Simulation:
    def __init__(self, config: SimulationConfig, mode: str = "lockstep", seed: Optional[int] = None,
                 hmi_script: Optional[List[HmiCommand]] = None, speed: float = 1.0):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        self.config = config
        self.mode = mode
        self.seed = config.seed if seed is None else seed
        self.speed = speed
        self.tick = 0
        self.tick_ms = config.tick_ms
        self.clock = SimClock()
        self.fabric = Fabric(self.clock)
        self.store = build_store(config.devices, clock=lambda: self.clock.now_us)
        self.devices: Dict[str, DeviceRuntime] = {}
        self.tasks: List[Task] = []
        self.hmi_script = list(hmi_script or [])
        self._wall_start: Optional[float] = None
        self._boot()

    #
    #   boot
    #

    def _boot(self) -> None:
        cfg = self.config
        for net in cfg.networks:
            self.fabric.add_network(net.name)
        for bus in cfg.serial_buses:
            self.fabric.add_bus(bus.name)
        for dev in cfg.devices:
            att = dev.network
            self.fabric.add_host(dev.name, dev.kind, att.interface if att else None,
                                 att.ip if att else None, att.mac if att else None)
        for att in cfg.attackers:
            net = att.network
            self.fabric.add_host(att.name, "attacker", net.interface if net else None,
                                 net.ip if net else None, net.mac if net else None)
            for bus in att.serial_buses:
                self.fabric.buses[bus].rogues.add(att.name)

        for dev in cfg.devices:
            self.devices[dev.name] = RUNTIMES[dev.kind](dev, self)
        for name, runtime in self.devices.items():
            for inbound in runtime.config.inbound_connections:
                if inbound.type == "tcp":
                    runtime.servers.append(self.fabric.bind_server(name, inbound.port, inbound.unit_id, runtime))
                else:
                    self.fabric.attach_serial(inbound.bus, name, inbound.unit_id, runtime)
                    runtime.servers.append((inbound.bus, inbound.unit_id))
            for outbound in runtime.config.outbound_connections:
                if outbound.type == "serial":
                    self.fabric.buses[outbound.bus].set_master(name)
        for runtime in self.devices.values():
            if isinstance(runtime, MasterRuntime):
                runtime.connect_clients()
        self.hils = [r for r in self.devices.values() if isinstance(r, HilRuntime)]
        self.scanned = [r for r in self.devices.values() if not isinstance(r, HilRuntime)]

    #
    #   helpers used by runtimes
    #

    @property
    def tick_s(self) -> float:
        return self.tick_ms / 1000.0

    @property
    def now_s(self) -> float:
        return self.clock.now_s

    def ticks_for_ms(self, ms: float) -> int:
        return math.ceil(ms / self.tick_ms)

    def ticks_for_s(self, seconds: float) -> int:
        return max(0, round(seconds * 1000 / self.tick_ms))

    def rng_for(self, name: str) -> random.Random:
        return random.Random(f"{self.seed}:{name}")

    def hmi(self, name: str) -> HmiRuntime:
        runtime = self.devices[name]
        if not isinstance(runtime, HmiRuntime):
            raise KeyError(f"'{name}' is not an HMI")
        return runtime

    #
    #   tasks
    #

    def spawn(self, body: Generator, name: str = "task") -> Task:
        task = Task(name, body)
        self.tasks.append(task)
        return task

    def _run_tasks(self) -> None:
        for task in self.tasks:
            if task.done:
                continue
            try:
                next(task.body)
            except StopIteration as stop:
                task.done, task.result = True, stop.value
            except Exception as exc:  # a broken attack must not take the plant down
                log.exception("task %s failed", task.name)
                task.done, task.error = True, exc
        self.tasks = [t for t in self.tasks if not t.done]

    #
    #   stepping
    #

    def _inject_hmi_commands(self) -> None:
        now = self.tick * self.tick_ms / 1000.0
        while self.hmi_script and self.hmi_script[0].at_s <= now + 1e-9:
            cmd = self.hmi_script.pop(0)
            self.hmi(cmd.hmi).inject(cmd.controller, cmd.value)

    def step(self) -> None:
        t = self.tick
        self.clock.advance_to(t * self.tick_ms * 1000)
        for hil in self.hils:
            if t % hil.config.scan_period_ticks == 0:
                hil.cycle()
        self._inject_hmi_commands()
        for runtime in self.scanned:
            if t % runtime.config.scan_period_ticks == 0:
                runtime.cycle()
        self._run_tasks()
        self.tick += 1
        if self.mode == "realtime":
            self._pace()

    def _pace(self) -> None:
        if self._wall_start is None:
            self._wall_start = time.monotonic()
        target = self._wall_start + self.tick * self.tick_s / self.speed
        delay = target - time.monotonic()
        if delay > 0:
            time.sleep(delay)

    def run_ticks(self, n: int, on_tick: Optional[Callable[["Simulation"], None]] = None) -> None:
        for _ in range(n):
            self.step()
            if on_tick is not None:
                on_tick(self)

    def run(self, duration_s: float, on_tick: Optional[Callable[["Simulation"], None]] = None) -> None:
        self.run_ticks(self.ticks_for_s(duration_s), on_tick)

    def run_until(self, task: Task, max_ticks: int = 1_000_000) -> object:
        """Step until ``task`` finishes; returns its result."""
        for _ in range(max_ticks):
            if task.done:
                break
            self.step()
        if task.error is not None:
            raise task.error
        if not task.done:
            raise TimeoutError(f"task {task.name} still running after {max_ticks} ticks")
        return task.result

    def run_task(self, body: Generator, name: str = "task", max_ticks: int = 1_000_000) -> object:
        return self.run_until(self.spawn(body, name), max_ticks)

    #
    #   observation
    #

    def snapshot_text(self) -> str:
        """Plain-text register dump of every device plus the physical store."""
        lines = [f"# t={self.now_s:.3f}s tick={self.tick}"]
        for name, runtime in self.devices.items():
            state = runtime.mode.value + (" degraded" if runtime.degraded else "")
            if not runtime.accepting():
                state += " restarting"
            lines.append(f"[{name}] kind={runtime.kind} {state}")
            for reg in runtime.config.registers:
                table = runtime.bank.area(reg.area)
                values = [table[reg.address + i] for i in range(reg.count)]
                label = reg.name or ""
                shown = " ".join(str(v) for v in values[:16]) + (" ..." if len(values) > 16 else "")
                lines.append(f"  {reg.area.value}[{reg.address}] {label} = {shown}".replace("  =", " ="))
        lines.append("[store]")
        for name, value in self.store.snapshot().items():
            lines.append(f"  {name} = {value:.6g}")
        return "\n".join(lines) + "\n"


def build_simulation(config: SimulationConfig, **kwargs) -> Tuple[Simulation, Fabric]:
    sim = Simulation(config, **kwargs)
    return sim, sim.fabric
