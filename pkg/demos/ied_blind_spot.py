"""
Blinding the substation PLC.

The attacker puts the transformer meter into listen-only mode. The PLC's
voltage monitor starts timing out and holds its last reading, so a tap
change made meanwhile goes unseen. A restart brings the meter back and the
PLC catches up within a couple of polls.

    python3 demos/ied_blind_spot.py
"""

from icsim.attacks import Target, run_attack
from icsim.scenarios import load_scenario
from icsim.simulation import Simulation


def show(sim, note):
    plc = sim.devices["ied_plc"]
    print(f"t={sim.now_s:5.1f}s  store {sim.store.read('voltage_pu'):.3f} pu  "
          f"plc sees {plc.regs['voltage'] / 1000:.3f} pu  "
          f"failed polls {plc.consecutive_failures[0]:2d}  breaker {sim.store.read('breaker_closed'):.0f}  {note}")


def main():
    sim = Simulation(load_scenario("ied_substation"))
    meter = Target("tcp", device="transformer_meter")
    sim.run(3)
    show(sim, "normal operation")

    run_attack(sim, "force_listen", meter)
    for _ in range(4):
        sim.run(1)
        show(sim, "meter in listen-only mode")

    sim.store.commit({"tap_position": 8.0}, "ied_hil")
    sim.run(1)
    show(sim, "tap driven to +8, PLC still blind")

    run_attack(sim, "restart_comm", meter)
    for _ in range(3):
        sim.run(0.5)
        show(sim, "after restart")


if __name__ == "__main__":
    main()
