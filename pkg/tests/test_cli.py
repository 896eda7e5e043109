import json

import pytest

from icsim import cli
from icsim.config import serialize_config
from icsim.scenarios import load_scenario
from icsim.simulation import Simulation

from conftest import TINY, device_doc


def write_json(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


def test_validate_shipped(capsys):
    assert cli.main(["validate", "solar_grid"]) == 0
    assert "ok: solar_grid" in capsys.readouterr().out


def test_validate_dangling_monitor(tmp_path, capsys):
    doc = json.loads(json.dumps(TINY))
    device_doc(doc, "plc")["monitors"][0]["connection"] = "nope"
    assert cli.main(["validate", write_json(tmp_path / "c.json", doc)]) == 1
    assert "DanglingReference" in capsys.readouterr().out


def test_validate_missing_path(tmp_path):
    assert cli.main(["validate", str(tmp_path / "missing.json")]) == 2


def test_validate_parse_error(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{")
    assert cli.main(["validate", str(path)]) == 2


def test_usage_error():
    assert cli.main(["frobnicate"]) == 2
    assert cli.main(["run", "solar_grid", "--duration", "-1"]) == 2


def test_run_duration_zero(tmp_path):
    out = tmp_path / "out"
    assert cli.main(["run", "solar_grid", "--duration", "0", "--out", str(out)]) == 0
    assert (out / "snapshots.txt").read_text().count("# t=") == 1
    assert (out / "capture.csv").read_text().count("\n") == 1
    assert (out / "store_journal.csv").exists()


def test_run_writes_outputs(tmp_path):
    out = tmp_path / "out"
    assert cli.main(["run", "ied_substation", "--duration", "25", "--out", str(out), "--pcap"]) == 0
    assert (out / "snapshots.txt").read_text().count("# t=") == 3
    assert (out / "capture.csv").read_text().count("\n") > 100
    assert (out / "capture.pcap").stat().st_size > 24


def test_run_determinism(tmp_path):
    for name in ("a", "b"):
        assert cli.main(["run", "solar_grid", "--duration", "20", "--seed", "7", "--out", str(tmp_path / name)]) == 0
    for f in ("capture.csv", "store_journal.csv", "snapshots.txt"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_env_out_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("ICS_SIMLAB_OUT", str(tmp_path / "env_out"))
    assert cli.main(["run", "solar_grid", "--duration", "1"]) == 0
    assert (tmp_path / "env_out" / "capture.csv").exists()


def test_run_interrupt_flushes(tmp_path, monkeypatch):
    def interrupted(self, n, on_tick=None):
        for _ in range(30):
            self.step()
            on_tick(self)
        raise KeyboardInterrupt

    monkeypatch.setattr(Simulation, "run_ticks", interrupted)
    out = tmp_path / "out"
    assert cli.main(["run", "solar_grid", "--duration", "60", "--out", str(out)]) == 1
    assert (out / "capture.csv").read_text().count("\n") > 10
    assert (out / "store_journal.csv").read_text().count("\n") > 10


def test_run_with_violations(tmp_path):
    doc = json.loads(json.dumps(TINY))
    device_doc(doc, "plc")["monitors"][0]["connection"] = "nope"
    assert cli.main(["run", write_json(tmp_path / "c.json", doc), "--duration", "1",
                     "--out", str(tmp_path / "o")]) == 1


def test_hmi_script(tmp_path):
    script = tmp_path / "ops.txt"
    script.write_text("# lower the tap\n2.0 hmi1 tap_request -1\n")
    out = tmp_path / "out"
    assert cli.main(["run", "ied_substation", "--duration", "4", "--out", str(out),
                     "--hmi-script", str(script)]) == 0
    from icsim.netfabric import read_capture_csv

    writes = [p for p in read_capture_csv(out / "capture.csv")
              if p.origin == "hmi1" and p.raw_adu[7:8] == b"\x06"]
    assert len(writes) == 1 and writes[0].raw_adu[-2:] == b"\xff\xff"


def test_bad_hmi_script(tmp_path):
    script = tmp_path / "ops.txt"
    script.write_text("soon hmi1 tap_request\n")
    assert cli.main(["run", "ied_substation", "--duration", "1", "--out", str(tmp_path),
                     "--hmi-script", str(script)]) == 2


def test_attack_unknown_attack_before_boot(tmp_path, monkeypatch):
    booted = []
    monkeypatch.setattr(cli, "_boot", lambda *a: booted.append(a))
    plan = write_json(tmp_path / "plan.json", {"attacks": ["teleport"]})
    assert cli.main(["attack", "solar_grid", "--plan", plan, "--out", str(tmp_path)]) == 2
    assert booted == []


def test_attack_without_attackers(tmp_path):
    doc = json.loads(serialize_config(load_scenario("solar_grid")))
    doc["attackers"] = []
    assert cli.main(["attack", write_json(tmp_path / "c.json", doc), "--plan", "default",
                     "--out", str(tmp_path / "o")]) == 1


def test_attack_then_export(tmp_path, capsys):
    out = tmp_path / "out"
    assert cli.main(["attack", "water_bottle", "--plan", "default", "--duration", "30",
                     "--out", str(out)]) == 0
    log_lines = (out / "campaign_log.csv").read_text().splitlines()
    assert len(log_lines) >= 2
    dataset = tmp_path / "ds.csv"
    args = ["export", "--capture", str(out / "capture.csv"), "--log", str(out / "campaign_log.csv"),
            "--out", str(dataset)]
    assert cli.main(args) == 0
    first = dataset.read_bytes()
    assert first.startswith(b"time,src_mac,dest_mac,")
    assert cli.main(args) == 0
    assert dataset.read_bytes() == first
    assert "unattributed: 0" in (tmp_path / "ds.qa.txt").read_text()


def test_attack_same_seed_same_log(tmp_path):
    for name in ("a", "b"):
        assert cli.main(["attack", "ied_substation", "--plan", "default", "--seed", "3", "--duration", "20",
                         "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "campaign_log.csv").read_bytes() == (tmp_path / "b" / "campaign_log.csv").read_bytes()


def test_export_benign_run(tmp_path):
    out = tmp_path / "out"
    assert cli.main(["run", "solar_grid", "--duration", "5", "--out", str(out)]) == 0
    dataset = tmp_path / "ds.csv"
    assert cli.main(["export", "--capture", str(out / "capture.csv"), "--out", str(dataset)]) == 0
    lines = dataset.read_text().splitlines()
    assert len(lines) > 1 and all(line.endswith(",,,0") for line in lines[1:])


def test_export_missing_input(tmp_path):
    assert cli.main(["export", "--capture", str(tmp_path / "none.csv"), "--out", str(tmp_path / "d.csv")]) == 2


def test_module_entry_point():
    import subprocess
    import sys

    proc = subprocess.run([sys.executable, "-m", "icsim", "validate", "ied_substation"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "ok" in proc.stdout
