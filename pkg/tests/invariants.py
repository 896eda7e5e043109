"""Per-tick invariant checks over running scenarios, shared by scenario and acceptance tests."""

from icsim import modbus as mb
from icsim.scenarios.ied import voltage_in_range


def solar_violations(sim, ticks):
    """Ticks where the switch disagrees with the threshold predicate on the PLC's scanned power."""
    plc = sim.devices["plc1"]
    threshold = plc.config.params["threshold_w"]
    bad = []
    for _ in range(ticks):
        sim.step()
        want = 1.0 if plc.regs["solar_power"] >= threshold else 0.0
        if sim.store.read("switch_position") != want:
            bad.append(sim.tick)
    return bad


def bottle_violations(sim, ticks):
    capacity = sim.devices["bottle_hil"].config.params["tank_capacity_l"]
    bad = []
    for _ in range(ticks):
        sim.step()
        values = sim.store.snapshot()
        if not 0.0 <= values["tank_level_l"] <= capacity:
            bad.append((sim.tick, "level", values["tank_level_l"]))
        if values["output_valve"] >= 0.5 and values["bottle_position"] < 1.0:
            bad.append((sim.tick, "interlock", values["bottle_position"]))
    return bad


def ied_violations(sim, ticks):
    plc = sim.devices["ied_plc"]
    bad = []
    for _ in range(ticks):
        sim.step()
        want = 1.0 if voltage_in_range(plc.regs["voltage"], plc.config.params) else 0.0
        if sim.store.read("breaker_closed") != want:
            bad.append((sim.tick, "breaker"))
        if not -8 <= sim.store.read("tap_position") <= 8:
            bad.append((sim.tick, "tap"))
    return bad


def exception_responses(packets):
    out = []
    for p in packets:
        if p.kind != "adu" or p.direction != "response":
            continue
        pdu = mb.decode_tcp(p.raw_adu).pdu if p.transport == "tcp" else mb.decode_rtu(p.raw_adu)[1]
        if pdu.is_exception:
            out.append(p)
    return out
