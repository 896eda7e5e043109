"""Solar array with an automatic transfer switch between mains and solar supply."""

import math

from . import hil_physics, plc_logic


def solar_power(t: float, p_max: float, day_period: float) -> float:
    return p_max * max(0.0, math.sin(2.0 * math.pi * t / day_period))


@hil_physics("solar_grid")
def solar_step(values, state, dt):
    p = state.params
    noise_frac = p.get("noise_frac", 0.05)
    noise = state.rng.uniform(-noise_frac, noise_frac)
    solar = solar_power(state.sim_time_s, p.get("p_max_w", 2000.0), p.get("day_period_s", 120.0))
    solar *= 1.0 + noise
    on_solar = values["switch_position"] >= 0.5
    return {
        "solar_power_w": solar,
        "total_input_w": solar if on_solar else p.get("mains_power_w", 1500.0),
    }


def desired_switch(power_w: float, current: int, threshold_w: float, hysteresis_w: float = 0.0) -> int:
    if hysteresis_w <= 0:
        return 1 if power_w >= threshold_w else 0
    if power_w >= threshold_w + hysteresis_w:
        return 1
    if power_w < threshold_w - hysteresis_w:
        return 0
    return current


@plc_logic("solar_plc")
def solar_plc_logic(regs, params):
    # regs: solar_power (W), switch_state (last known position), switch_cmd
    want = desired_switch(regs["solar_power"], regs["switch_state"],
                          params.get("threshold_w", 800), params.get("hysteresis_w", 0))
    if want == regs["switch_state"]:
        return []
    regs["switch_cmd"] = want
    regs["switch_state"] = want
    return ["transfer_switch"]
