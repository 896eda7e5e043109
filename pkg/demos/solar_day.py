"""
A compressed day on the solar grid.

The array ramps up at dawn, the PLC moves the transfer switch to solar once
output passes the threshold, and back to mains at dusk. Prints every switch
change and a coarse power trace.

    python3 demos/solar_day.py
"""

from icsim.scenarios import load_scenario
from icsim.simulation import Simulation


def main():
    sim = Simulation(load_scenario("solar_grid"))
    threshold = sim.config.device("plc1").params["threshold_w"]
    day = sim.config.device("solar_hil").params["day_period_s"]
    print(f"threshold {threshold:.0f} W, day length {day:.0f} s simulated\n")

    last = sim.store.read("switch_position")
    for _ in range(sim.ticks_for_s(day)):
        sim.step()
        power = sim.store.read("solar_power_w")
        switch = sim.store.read("switch_position")
        if switch != last:
            source = "solar" if switch else "mains"
            print(f"t={sim.now_s:6.1f}s  switch -> {source:5s} (solar output {power:7.1f} W)")
            last = switch
        if sim.tick % 100 == 0:
            bar = "#" * int(power / 50)
            print(f"t={sim.now_s:6.1f}s  {power:7.1f} W  {bar}")

    print("\nfinal HMI view:")
    lines = sim.snapshot_text().splitlines()
    start = lines.index(next(l for l in lines if l.startswith("[hmi1]")))
    for line in lines[start:]:
        if line.startswith("[") and line != lines[start]:
            break
        print(line)


if __name__ == "__main__":
    main()
