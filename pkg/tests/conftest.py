import copy

import pytest

from icsim.config import config_from_dict
from icsim.scenarios import load_scenario
from icsim.simulation import Simulation

# A small plant touching every feature: a TCP sensor, a serial actuator, a PLC
# mastering the bus, an HMI and an attacker on both transports.
TINY = {
    "name": "tiny",
    "tick_ms": 100,
    "seed": 1,
    "networks": [{"name": "net", "subnet": "10.0.0.0/24"}],
    "serial_buses": [{"name": "bus"}],
    "attackers": [{"name": "eve", "network": {"interface": "net", "ip": "10.0.0.66"}, "serial_buses": ["bus"]}],
    "devices": [
        {
            "name": "hil",
            "kind": "hil",
            "logic": "tests_tiny",
            "physical_values": [{"name": "temp", "initial": 21.5}, {"name": "heater", "initial": 0.0}],
        },
        {
            "name": "thermo",
            "kind": "sensor",
            "network": {"interface": "net", "ip": "10.0.0.21"},
            "inbound_connections": [{"type": "tcp", "port": 502, "unit_id": 1}],
            "registers": [
                {"area": "input_register", "address": 0, "name": "temp", "physical_value": "temp", "scale": 10},
                {"area": "input_register", "address": 1},
            ],
            "identity": {"vendor": "Acme", "product": "T-1", "version": "0.9"},
        },
        {
            "name": "heater",
            "kind": "actuator",
            "inbound_connections": [{"type": "serial", "bus": "bus", "unit_id": 5}],
            "registers": [
                {"area": "coil", "address": 0, "physical_value": "heater"},
                {"area": "coil", "address": 1},
                {"area": "holding_register", "address": 3},
            ],
        },
        {
            "name": "plc",
            "kind": "plc",
            "network": {"interface": "net", "ip": "10.0.0.11"},
            "inbound_connections": [{"type": "tcp", "port": 502, "unit_id": 1}],
            "outbound_connections": [
                {"name": "thermo", "type": "tcp", "target": "thermo", "port": 502},
                {"name": "heater", "type": "serial", "target": "heater", "bus": "bus"},
            ],
            "registers": [
                {"area": "holding_register", "address": 0, "name": "temp"},
                {"area": "coil", "address": 0, "name": "heater_cmd"},
            ],
            "monitors": [
                {"connection": "thermo", "remote": {"area": "input_register", "address": 0},
                 "local": {"area": "holding_register", "address": 0}},
            ],
            "controllers": [
                {"name": "heater", "connection": "heater", "remote": {"area": "coil", "address": 0},
                 "local": {"area": "coil", "address": 0}},
            ],
        },
        {
            "name": "hmi",
            "kind": "hmi",
            "network": {"interface": "net", "ip": "10.0.0.5"},
            "outbound_connections": [{"name": "plc", "type": "tcp", "target": "plc", "port": 502}],
            "registers": [
                {"area": "holding_register", "address": 0},
                {"area": "coil", "address": 0},
            ],
            "monitors": [
                {"connection": "plc", "remote": {"area": "holding_register", "address": 0},
                 "local": {"area": "holding_register", "address": 0}, "period_ticks": 2},
            ],
            "controllers": [
                {"name": "heater", "connection": "plc", "remote": {"area": "coil", "address": 0},
                 "local": {"area": "coil", "address": 0}},
            ],
        },
    ],
}


def _tiny_physics(values, state, dt):
    drift = 0.5 if values["heater"] >= 0.5 else -0.1
    return {"temp": values["temp"] + drift * dt}


def _register_tiny():
    from icsim.scenarios import HIL_LOGIC

    HIL_LOGIC.setdefault("tests_tiny", _tiny_physics)


_register_tiny()


def device_doc(doc, name):
    return next(d for d in doc["devices"] if d["name"] == name)


@pytest.fixture
def tiny_doc():
    return copy.deepcopy(TINY)


@pytest.fixture
def tiny_config(tiny_doc):
    return config_from_dict(tiny_doc)


@pytest.fixture
def tiny_sim(tiny_config):
    return Simulation(tiny_config)


@pytest.fixture(params=["solar_grid", "water_bottle", "ied_substation"])
def scenario_name(request):
    return request.param


@pytest.fixture
def scenario_sim(scenario_name):
    return Simulation(load_scenario(scenario_name))


#
#   Acceptance reporting: one pass/fail line per criterion in the terminal summary
#

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    number, title = marker
    entry = _criteria.setdefault(number, {"title": title, "passed": True, "tests": 0})
    if report.when == "call" or report.failed:
        entry["tests"] += report.when == "call"
        entry["passed"] &= not report.failed


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        outcome.get_result().criterion = tuple(marker.args)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        status = "PASS" if entry["passed"] else "FAIL"
        terminalreporter.write_line(f"criterion {number} [{status}] {entry['title']} ({entry['tests']} checks)")
