"""
From campaign to labeled dataset.

Runs the shipped two-minute attack plan against each plant, exports the
13-column dataset and prints per-attack row counts.

    python3 demos/labeled_dataset.py [out_dir]
"""

import sys
from pathlib import Path

from icsim import dataset
from icsim.attacks import CampaignPlan, run_campaign
from icsim.scenarios import SCENARIOS, default_plan_path, load_scenario
from icsim.simulation import Simulation


def main(out_dir="demo_datasets"):
    out = Path(out_dir)
    out.mkdir(exist_ok=True)
    plan = CampaignPlan.load(default_plan_path())
    for name in SCENARIOS:
        sim = Simulation(load_scenario(name))
        log = run_campaign(plan, sim)
        rows, qa = dataset.build_dataset(sim.fabric.tap_drain(), log)
        path = out / f"{name}.csv"
        dataset.write_csv(rows, path)
        print(f"{name}: {qa.rows} rows, {qa.malicious} malicious, {len(log)} attacks -> {path}")
        for attack, n in sorted(qa.per_attack.items(), key=lambda kv: -kv[1]):
            print(f"    {n:7d}  {attack}")


if __name__ == "__main__":
    main(*sys.argv[1:])
