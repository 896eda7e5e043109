"""
Water-bottle filling line.

A tank (input valve, output valve, level sensor) run by one PLC feeds
bottles carried under the output valve by a conveyor run by a second PLC.
The second PLC tells the first when a bottle sits under the valve; the
first reports the output valve state back so the conveyor never moves
while water is flowing.
"""

from . import hil_physics, plc_logic

AT_STATION = 1.0


@hil_physics("water_bottle")
def bottle_step(values, state, dt):
    p = state.params
    capacity = p.get("tank_capacity_l", 100.0)
    r_in = p.get("inflow_lps", 5.0)
    r_out = p.get("outflow_lps", 5.0)
    speed = p.get("conveyor_speed", 0.5)
    bottle_capacity = p.get("bottle_capacity_l", 2.0)

    level = values["tank_level_l"]
    position = values["bottle_position"]
    fill = values["bottle_fill_l"]
    spilled = values["spilled_l"]
    filled = values["bottles_filled"]

    inflow = r_in * dt if values["input_valve"] >= 0.5 else 0.0
    outflow = min(r_out * dt, level + inflow) if values["output_valve"] >= 0.5 else 0.0
    level = min(capacity, max(0.0, level + inflow - outflow))
    if outflow:
        if position >= AT_STATION:
            fill += outflow
        else:
            spilled += outflow

    if values["conveyor"] >= 0.5:
        if position >= AT_STATION and fill >= bottle_capacity:
            position, fill = 0.0, 0.0
            filled += 1
        else:
            position += speed * dt
            if position >= AT_STATION - 1e-9:
                position = AT_STATION

    return {
        "tank_level_l": level,
        "bottle_position": position,
        "bottle_fill_l": fill,
        "spilled_l": spilled,
        "bottles_filled": filled,
    }


@plc_logic("bottle_plc1")
def bottle_plc1_logic(regs, params):
    """Tank section: keep the level between setpoints, fill bottles on request."""
    scale = params.get("level_scale", 10)
    level = regs["tank_level"] / scale
    actions = []

    want_in = regs["input_valve_cmd"]
    if level < params.get("low_l", 30.0):
        want_in = 1
    elif level > params.get("high_l", 80.0):
        want_in = 0
    if want_in != regs["input_valve_cmd"]:
        regs["input_valve_cmd"] = want_in
        actions.append("input_valve")

    want_out = 1 if regs["bottle_in_position"] else 0
    if want_out != regs["output_valve_cmd"]:
        regs["output_valve_cmd"] = want_out
        actions += ["output_valve", "report_output_valve"]
    return actions


@plc_logic("bottle_plc2")
def bottle_plc2_logic(regs, params):
    """Conveyor section: stop bottles under the valve and hand over to the tank PLC."""
    at_station = regs["bottle_position"] >= params.get("position_scale", 1000)
    full = regs["bottle_fill"] >= params.get("bottle_capacity_l", 2.0) * params.get("fill_scale", 100)
    filler_open = bool(regs["filler_open"])

    if at_station and not full:
        want_in_position, want_conveyor = 1, 0
    else:
        want_in_position = 0
        # never move while the tank PLC still reports water flowing
        want_conveyor = 0 if filler_open or regs["in_position_cmd"] else 1

    actions = []
    if want_in_position != regs["in_position_cmd"]:
        regs["in_position_cmd"] = want_in_position
        actions.append("in_position")
    if want_conveyor != regs["conveyor_cmd"]:
        regs["conveyor_cmd"] = want_conveyor
        actions.append("conveyor")
    return actions
