import random

import pytest
from hypothesis import given, settings, strategies as st

from icsim import dataset as ds
from icsim import modbus as mb
from icsim.attacks import CATEGORIES, CampaignLog, CampaignPlan, LogEntry, Target, run_attack, run_campaign
from icsim.modbus import Area
from icsim.netfabric import CapturedPacket
from icsim.scenarios import load_scenario
from icsim.simulation import Simulation

# the 13 feature names of the published dataset, in order
HEADER = ("time,src_mac,dest_mac,src_ip,dest_ip,protocol,length,unit_id,func_code,data,"
          "attack_specific,attack_category,attack_binary")


def test_header_byte_exact(tmp_path):
    path = tmp_path / "d.csv"
    assert ds.write_csv([], path) == 0
    assert path.read_bytes() == (HEADER + "\n").encode()
    assert ds.HEADER == HEADER


def test_request_response_pair_swaps_endpoints(tiny_sim):
    session = tiny_sim.fabric.connect("hmi", "plc", 502)
    session.transact(1, mb.read_request(Area.HOLDING_REGISTER, 0, 1))
    rows = ds.extract_rows(p for p in tiny_sim.fabric.tap_drain() if p.kind == "adu")
    req, resp = rows
    assert (req.src_ip, req.dest_ip, req.src_mac, req.dest_mac) == \
        (resp.dest_ip, resp.src_ip, resp.dest_mac, resp.src_mac)
    assert req.protocol == resp.protocol == "Modbus/TCP"
    assert (req.unit_id, req.func_code, req.data, req.length) == (1, 3, "00000001", 12)
    assert resp.data == "020000" and resp.length == 11


def test_rtu_row_fields(tiny_sim):
    tiny_sim.fabric.buses["bus"].request("plc", 5, mb.write_request(Area.COIL, 0, [1]))
    req, resp = ds.extract_rows(tiny_sim.fabric.tap_drain())
    assert req.protocol == "Modbus RTU"
    assert req.unit_id == 5 and req.func_code == 5
    assert req.data == "0000ff00"
    assert req.length == 8
    assert req.src_ip == req.src_mac == ""


def test_connect_rows(tiny_sim):
    tiny_sim.fabric.connect("eve", "plc", 502)
    (row,) = ds.extract_rows(tiny_sim.fabric.tap_drain())
    assert (row.protocol, row.length, row.unit_id, row.func_code, row.data) == ("TCP", 0, None, None, "")
    assert row.values()[7:10] == ["", "", ""]


def _packet(raw, transport="tcp", **kw):
    base = dict(time_us=1, transport=transport, kind="adu", direction="request", src_device="eve",
                dst_device="plc", link="net", session="tcp1", origin="eve", origin_role="attacker")
    base.update(kw)
    return CapturedPacket(raw_adu=raw, **base)


def test_parse_failure_sentinel():
    good = mb.encode_tcp(mb.TcpAdu(1, 1, mb.read_request(Area.HOLDING_REGISTER, 0, 1)))
    rows = ds.extract_rows([_packet(good[:9]), _packet(b"\x05\x03\x00", "serial", session="bus:b")])
    assert [r.data for r in rows] == [ds.PARSE_FAILURE, ds.PARSE_FAILURE]
    assert rows[0].unit_id == 1 and rows[0].func_code == 3
    assert rows[1].unit_id == 5
    labeled, qa = ds.build_dataset([_packet(good[:9])], None)
    assert qa.parse_failures == 1 and len(labeled) == 1


def _attack_rows(label_responses=True):
    sim = Simulation(load_scenario("solar_grid"))
    sim.run_ticks(5)
    start = sim.clock.now_us
    run_attack(sim, "address_scan", Target("tcp", device="plc1", unit_id=0), last=5)
    log = CampaignLog([LogEntry(start, sim.clock.now_us, "address_scan", "plc1:502/0", {})])
    sim.run_ticks(5)
    capture = sim.fabric.tap_drain()
    rows, _ = ds.build_dataset(capture, log, label_responses=label_responses)
    return capture, rows


def test_labels_benign_and_malicious():
    capture, rows = _attack_rows()
    assert len(rows) == len(capture)
    for packet, row in zip(capture, rows):
        if packet.origin_role == "attacker":
            assert (row.attack_specific, row.attack_category, row.attack_binary) == \
                ("Address Scan", "Reconnaissance", 1)
        elif packet.initiator != "attacker":
            assert (row.attack_specific, row.attack_category, row.attack_binary) == ("", "", 0)


def test_responses_inherit_labels():
    capture, rows = _attack_rows()
    elicited = [r for p, r in zip(capture, rows) if p.direction == "response" and p.initiator == "attacker"]
    assert elicited and all(r.attack_binary == 1 for r in elicited)
    assert all(r.attack_specific == "Address Scan" for r in elicited)


def test_response_labeling_toggle():
    capture, rows = _attack_rows(label_responses=False)
    for p, r in zip(capture, rows):
        assert r.attack_binary == (1 if p.origin_role == "attacker" else 0)


def test_serial_response_pairing(tiny_sim):
    bus = tiny_sim.fabric.buses["bus"]
    bus.request("eve", 5, mb.read_request(Area.COIL, 0, 1))
    bus.request("plc", 5, mb.read_request(Area.COIL, 0, 1))
    log = CampaignLog([LogEntry(0, tiny_sim.clock.now_us, "naive_sensor_read", "bus/5", {})])
    rows = ds.label_rows(ds.extract_rows(tiny_sim.fabric.tap_drain()), log)
    assert [r.attack_binary for r in rows] == [1, 1, 0, 0]


def test_benign_row_inside_attack_window(tiny_sim):
    tiny_sim.fabric.connect("hmi", "plc", 502).transact(1, mb.read_request(Area.HOLDING_REGISTER, 0, 1))
    log = CampaignLog([LogEntry(0, 10 ** 9, "data_flood", "plc:502/1", {})])
    rows = ds.label_rows(ds.extract_rows(tiny_sim.fabric.tap_drain()), log)
    assert all(r.attack_binary == 0 for r in rows)


def test_unattributed_attacker_rows(tiny_sim):
    tiny_sim.fabric.connect("eve", "plc", 502).transact(1, mb.read_request(Area.HOLDING_REGISTER, 0, 1))
    rows, qa = ds.build_dataset(tiny_sim.fabric.tap_drain(), CampaignLog())
    assert all(r.attack_binary == 1 and r.attack_specific == ds.UNATTRIBUTED for r in rows)
    assert qa.unattributed == 3
    assert "unattributed: 3" in qa.text()


def test_explicit_attacker_registry(tiny_sim):
    tiny_sim.fabric.connect("hmi", "plc", 502).transact(1, mb.read_request(Area.HOLDING_REGISTER, 0, 1))
    rows = ds.label_rows(ds.extract_rows(tiny_sim.fabric.tap_drain()), None, attackers={"hmi"})
    assert [r.attack_binary for r in rows] == [1, 1, 1]


def _campaign_dataset(seed=7, duration=60):
    sim = Simulation(load_scenario("water_bottle"))
    log = run_campaign(CampaignPlan(seed=seed, duration_s=duration), sim)
    capture = sim.fabric.tap_drain()
    rows, qa = ds.build_dataset(capture, log)
    return capture, rows, qa


def test_campaign_dataset_invariants():
    capture, rows, qa = _campaign_dataset()
    assert len(rows) == len(capture)
    assert qa.unattributed == 0 and qa.parse_failures == 0
    for p, r in zip(capture, rows):
        assert (r.attack_binary == 1) == bool(r.attack_specific) == bool(r.attack_category)
        if r.attack_binary:
            assert r.attack_category in CATEGORIES
            assert p.initiator == "attacker"
        else:
            assert p.initiator != "attacker"


def test_export_idempotent(tmp_path):
    capture, rows, _ = _campaign_dataset(duration=20)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    ds.write_csv(rows, a)
    ds.write_csv(ds.build_dataset(capture, None)[0], b)
    ds.write_csv(ds.label_rows(ds.extract_rows(capture), None), tmp_path / "c.csv")
    assert b.read_bytes() == (tmp_path / "c.csv").read_bytes()
    with open(a, newline="") as fh:
        assert sum(1 for _ in fh) == len(rows) + 1
    assert ds.read_csv(a)[0].keys() == set(HEADER.split(","))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10 ** 6), n=st.integers(0, 40))
def test_labels_follow_origin_on_random_traffic(seed, n):
    from conftest import TINY
    from icsim.config import config_from_dict

    sim = Simulation(config_from_dict(TINY))
    rng = random.Random(seed)
    for _ in range(n):
        who = rng.choice(["hmi", "eve"])
        if rng.random() < 0.5:
            sim.fabric.connect(who, "plc", 502).transact(1, mb.read_request(Area.HOLDING_REGISTER, 0, 1))
        else:
            bus_caller = "plc" if who == "hmi" else "eve"
            sim.fabric.buses["bus"].request(bus_caller, rng.choice([5, 9]), mb.read_request(Area.COIL, 0, 1))
    capture = sim.fabric.tap_drain()
    log = CampaignLog([LogEntry(0, sim.clock.now_us, "naive_sensor_read", "x", {})])
    rows = ds.label_rows(ds.extract_rows(capture), log)
    for p, r in zip(capture, rows):
        assert r.attack_binary == (1 if p.initiator == "eve" else 0)
