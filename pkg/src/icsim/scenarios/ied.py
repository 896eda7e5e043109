"""Substation IED: on-load tap changer feeding a breaker guarded by a voltage window."""

from . import hil_physics, plc_logic


def tap_voltage(v_source_pu: float, tap: int, step_pu: float = 0.0125) -> float:
    return v_source_pu * (1.0 + step_pu * tap)


def _schedule_next(state, now):
    p = state.params
    state.memory["next_tap_s"] = now + state.rng.uniform(p.get("tap_interval_min_s", 5.0),
                                                         p.get("tap_interval_max_s", 30.0))


@hil_physics("ied_substation")
def ied_step(values, state, dt):
    p = state.params
    t = state.sim_time_s
    tap_min, tap_max = int(p.get("tap_min", -8)), int(p.get("tap_max", 8))
    if "next_tap_s" not in state.memory:
        _schedule_next(state, t - dt)

    tap = int(round(values["tap_position"]))
    if t >= state.memory["next_tap_s"]:
        tap += state.rng.choice((-1, 1))
        _schedule_next(state, t)
    tap = max(tap_min, min(tap_max, tap))

    band = p.get("v_source_band", 0.02)
    walk = p.get("v_walk_step", 0.001)
    v_source = values["v_source_pu"] + state.rng.uniform(-walk, walk)
    v_source = max(1.0 - band, min(1.0 + band, v_source))

    voltage = tap_voltage(v_source, tap, p.get("tap_step_pu", 0.0125))
    closed = values["breaker_closed"] >= 0.5
    return {
        "tap_position": float(tap),
        "v_source_pu": v_source,
        "voltage_pu": voltage,
        "load_voltage_pu": voltage if closed else 0.0,
    }


def voltage_in_range(raw: int, params) -> bool:
    v = raw / params.get("voltage_scale", 1000)
    return params.get("v_min", 0.95) <= v <= params.get("v_max", 1.05)


def _signed(raw: int) -> int:
    return raw - 0x10000 if raw & 0x8000 else raw


@plc_logic("ied_plc")
def ied_plc_logic(regs, params):
    actions = []
    in_range = voltage_in_range(regs["voltage"], params)
    closed = regs["breaker_state"]
    if params.get("latched_trip", False):
        if not in_range:
            want = 0
        elif not closed and regs["trip_reset"]:
            want = 1
            regs["trip_reset"] = 0
        else:
            want = closed
    else:
        want = 1 if in_range else 0
    if want != closed:
        regs["breaker_cmd"] = want
        regs["breaker_state"] = want
        actions.append("breaker")

    request = _signed(regs["tap_request"])
    if request:
        offset = params.get("tap_offset", 8)
        tap_min, tap_max = params.get("tap_min", -8), params.get("tap_max", 8)
        target = regs["tap_raw"] - offset + request
        regs["tap_fault"] = 0 if tap_min <= target <= tap_max else 1
        target = max(tap_min, min(tap_max, target))
        regs["tap_cmd"] = target + offset
        regs["tap_raw"] = target + offset
        regs["tap_request"] = 0
        actions.append("tap_changer")
    return actions
