"""
Command line
============

::

    icsim validate <config>
    icsim run <config> [--mode lockstep|realtime] [--seed N] [--duration S] [--out DIR]
    icsim attack <config> --plan <plan.json|default> [--seed N] [--duration S] [--out DIR]
    icsim export --capture <capture.csv> [--log <campaign_log.csv>] --out <dataset.csv>

``<config>`` is a path or the name of a shipped scenario. Exit codes: 0 on
success, 1 on a domain failure (violations, boot failure, interrupted run),
2 on usage or unreadable input. ``ICS_SIMLAB_OUT`` sets the default output
directory.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

from . import config as cfgmod
from . import dataset
from .attacks import CampaignLog, CampaignPlan, PlanError, campaign_body
from .netfabric import read_capture_csv, write_capture_csv, write_pcap
from .scenarios import SCENARIOS, default_plan_path, scenario_path
from .simulation import Simulation, parse_hmi_script

log = logging.getLogger("icsim")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2

CAPTURE_FILE = "capture.csv"
STORE_JOURNAL_FILE = "store_journal.csv"
CAMPAIGN_LOG_FILE = "campaign_log.csv"
SNAPSHOT_FILE = "snapshots.txt"
PCAP_FILE = "capture.pcap"
DRAIN_EVERY_TICKS = 100


class UsageError(Exception):
    pass


def default_out_dir() -> Path:
    return Path(os.environ.get("ICS_SIMLAB_OUT", "icsim_out"))


def resolve_config_path(text: str) -> Path:
    path = Path(text)
    if not path.exists() and text in SCENARIOS:
        return Path(str(scenario_path(text)))
    return path


def load(text: str) -> cfgmod.SimulationConfig:
    path = resolve_config_path(text)
    try:
        return cfgmod.load_config(path)
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from None
    except cfgmod.ConfigError as exc:
        raise UsageError(f"{path}: {exc}") from None


def cmd_validate(args) -> int:
    cfg = load(args.config)
    violations = cfgmod.validate(cfg)
    for v in violations:
        print(v)
    if violations:
        print(f"{len(violations)} violation(s)")
        return EXIT_FAILURE
    print(f"ok: {cfg.name} ({len(cfg.devices)} devices)")
    return EXIT_OK


def _load_script(path: Optional[str]):
    if not path:
        return None
    try:
        return parse_hmi_script(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise UsageError(f"cannot read HMI script: {exc}") from None
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None


class _Recorder:
    """Streams capture and snapshots to the output directory while a run progresses."""

    def __init__(self, sim: Simulation, out: Path, snapshot_every_s: float, pcap: bool):
        self.sim = sim
        self.out = out
        self.pcap = pcap
        self.snapshot_every = max(1, sim.ticks_for_s(snapshot_every_s)) if snapshot_every_s > 0 else 0
        out.mkdir(parents=True, exist_ok=True)
        write_capture_csv([], out / CAPTURE_FILE)
        (out / SNAPSHOT_FILE).write_text("", encoding="utf-8")
        self.snapshot()

    def snapshot(self) -> None:
        with open(self.out / SNAPSHOT_FILE, "a", encoding="utf-8") as fh:
            fh.write(self.sim.snapshot_text())

    def drain(self) -> None:
        write_capture_csv(self.sim.fabric.tap_drain(), self.out / CAPTURE_FILE, append=True)

    def on_tick(self, sim: Simulation) -> None:
        if sim.tick % DRAIN_EVERY_TICKS == 0:
            self.drain()
        if self.snapshot_every and sim.tick % self.snapshot_every == 0:
            self.snapshot()

    def finish(self) -> None:
        self.drain()
        self.sim.store.write_journal(self.out / STORE_JOURNAL_FILE)
        if self.pcap:
            write_pcap(read_capture_csv(self.out / CAPTURE_FILE), self.out / PCAP_FILE)


def _boot(args, cfg, seed, script) -> Simulation:
    violations = cfgmod.validate(cfg)
    if violations:
        for v in violations:
            print(v, file=sys.stderr)
        raise RuntimeError("config has violations")
    if args.mode == "realtime" and args.seed is not None:
        log.warning("realtime mode: wall-clock pacing makes runs comparable only approximately")
    return Simulation(cfg, mode=args.mode, seed=seed, hmi_script=script, speed=args.speed)


def cmd_run(args) -> int:
    cfg = load(args.config)
    script = _load_script(args.hmi_script)
    try:
        sim = _boot(args, cfg, args.seed, script)
    except Exception as exc:
        print(f"boot failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    out = Path(args.out) if args.out else default_out_dir()
    rec = _Recorder(sim, out, args.snapshot_every, args.pcap)
    status = EXIT_OK
    try:
        sim.run(args.duration, rec.on_tick)
    except KeyboardInterrupt:
        print("interrupted; flushing journals", file=sys.stderr)
        status = EXIT_FAILURE
    finally:
        rec.finish()
    print(f"ran {cfg.name} for {sim.now_s:.1f}s simulated; outputs in {out}")
    return status


def cmd_attack(args) -> int:
    try:
        plan_path = args.plan
        if plan_path == "default" and not Path(plan_path).exists():
            plan_path = str(default_plan_path())
        plan = CampaignPlan.load(plan_path)
    except OSError as exc:
        raise UsageError(f"cannot read plan: {exc}") from None
    except PlanError as exc:
        raise UsageError(str(exc)) from None
    cfg = load(args.config)
    if not cfg.attackers:
        print("config declares no attacker endpoints", file=sys.stderr)
        return EXIT_FAILURE
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.duration is not None:
        overrides["duration_s"] = args.duration
    if overrides:
        plan = CampaignPlan(**{**plan.__dict__, **overrides})
    script = _load_script(args.hmi_script)
    try:
        sim = _boot(args, cfg, args.seed, script)
    except Exception as exc:
        print(f"boot failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    out = Path(args.out) if args.out else default_out_dir()
    rec = _Recorder(sim, out, args.snapshot_every, args.pcap)
    campaign = CampaignLog()
    task = sim.spawn(campaign_body(sim, plan, campaign), "campaign")
    status = EXIT_OK
    try:
        # the plant keeps running until the last attack has finished
        while not task.done:
            sim.step()
            rec.on_tick(sim)
        if task.error is not None:
            print(f"campaign failed: {task.error}", file=sys.stderr)
            status = EXIT_FAILURE
    except KeyboardInterrupt:
        print("interrupted; flushing journals", file=sys.stderr)
        status = EXIT_FAILURE
    finally:
        rec.finish()
        campaign.write_csv(out / CAMPAIGN_LOG_FILE)
    print(f"campaign on {cfg.name}: {len(campaign)} attacks over {sim.now_s:.1f}s; outputs in {out}")
    return status


def cmd_export(args) -> int:
    try:
        capture = read_capture_csv(args.capture)
        campaign = CampaignLog.read_csv(args.log) if args.log else None
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot read inputs: {exc}") from None
    rows, qa = dataset.build_dataset(capture, campaign, label_responses=args.label_responses)
    out = Path(args.out)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True)
    dataset.write_csv(rows, out)
    qa_path = Path(args.qa) if args.qa else out.with_suffix(".qa.txt")
    qa_path.write_text(qa.text(), encoding="utf-8")
    print(f"wrote {len(rows)} rows to {out} ({qa.malicious} malicious); QA report {qa_path}")
    return EXIT_OK


def _add_run_options(p: argparse.ArgumentParser, duration_default: Optional[float]) -> None:
    p.add_argument("config", help="config path or shipped scenario name")
    p.add_argument("--mode", choices=("lockstep", "realtime"), default="lockstep")
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--duration", type=float, default=duration_default, help="simulated seconds")
    p.add_argument("--out", default=None, help="output directory (default $ICS_SIMLAB_OUT or ./icsim_out)")
    p.add_argument("--snapshot-every", type=float, default=10.0, help="seconds between status snapshots")
    p.add_argument("--hmi-script", default=None, help="file of '<time_s> <hmi> <controller> <value>' lines")
    p.add_argument("--speed", type=float, default=1.0, help="realtime speed-up factor")
    p.add_argument("--pcap", action="store_true", help="also write capture.pcap")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="icsim", description="Modbus ICS plant simulator and dataset generator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a config for structural problems")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="run the plant with benign traffic only")
    _add_run_options(p, 60.0)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("attack", help="run the plant together with an attack campaign")
    _add_run_options(p, None)
    p.add_argument("--plan", required=True, help="campaign plan JSON, or 'default' for the shipped plan")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("export", help="build the labeled CSV dataset from a capture")
    p.add_argument("--capture", required=True)
    p.add_argument("--log", default=None, help="campaign log CSV (omit for benign runs)")
    p.add_argument("--out", required=True)
    p.add_argument("--qa", default=None, help="QA report path (default <out>.qa.txt)")
    p.add_argument("--label-responses", action=argparse.BooleanOptionalAction, default=True,
                   help="label responses to attacker requests as malicious")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "duration", None) is not None and args.duration < 0:
        print("duration must be non-negative", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
