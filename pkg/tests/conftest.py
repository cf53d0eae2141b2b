from __future__ import annotations

import json
from pathlib import Path

import pytest

from netfence.fence import NetworkFence
from netfence.radio import ApNode, DevicePath, PathLossModel, record_reference, run_scenario

SALT_HEX = "00112233445566778899aabbccddeeff"
SALT = bytes.fromhex(SALT_HEX)

COUPON_RULES = """\
# coupon for first-time visitors standing near the cafe
RULE coupon: IF IS_VISIBLE('*Cafe*') AND RSSI_IN('*Cafe*', -60, 0) AND FIRST_VISIT() THEN PRESENT coupon1
"""

MAC_A = "02:1a:2b:3c:4d:0a"
MAC_B = "02:1a:2b:3c:4d:0b"
DAY_S = 25 * 3600  # second pass starts after the 24 h dedup window


class CouponWorld:
    """A cafe with one tracker, one fence recorded at the door, two passers-by."""

    seed = 42
    model = PathLossModel(exponent=2.5, noise_sigma=4.0, detection_floor=-95.0)
    tracker_ap = ApNode("cafe-t1", "Old Cafe 12", 0.0, 0.0, rssi0=-40.0)

    def __init__(self, root: Path):
        self.root = root
        self.reference = record_reference([self.tracker_ap], (0.0, 2.0), self.model, 1000, self.seed)
        self.fence = NetworkFence("cafe-door", self.reference, "euclidean")

    def devices(self, second_pass: bool = True) -> list[DevicePath]:
        devs = [
            DevicePath(MAC_A, ((-60.0, 2.0, 0.0), (60.0, 2.0, 120.0)), 3.0),
            DevicePath(MAC_B, ((-60.0, 2.0, 10.0), (60.0, 2.0, 130.0)), 3.0),
        ]
        if second_pass:
            devs.append(DevicePath(MAC_A, ((-60.0, 2.0, DAY_S), (60.0, 2.0, DAY_S + 120.0)), 3.0))
        return devs

    def events(self, second_pass: bool = True):
        duration = DAY_S + 300.0 if second_pass else 300.0
        return run_scenario([self.tracker_ap], self.devices(second_pass), self.model, duration, self.seed)

    def scenario_json(self) -> dict:
        ap = self.tracker_ap
        return {
            "aps": [{"id": ap.id, "ssid": ap.ssid, "x": ap.x, "y": ap.y, "rssi0": ap.rssi0, "tracker": True}],
            "devices": [
                {"mac": d.mac, "waypoints": [list(w) for w in d.waypoints], "probe_period_s": d.probe_period_s}
                for d in self.devices()
            ],
            "model": {"n": 2.5, "sigma_db": 4.0, "floor_dbm": -95.0},
            "duration_s": DAY_S + 300.0,
            "seed": self.seed,
        }

    def write_config(self, data_dir: Path | None = None, **overrides) -> Path:
        r = self.root
        r.mkdir(parents=True, exist_ok=True)
        (r / "fences.json").write_text(json.dumps([self.fence.to_json()]))
        (r / "rules.txt").write_text(COUPON_RULES)
        (r / "topics.json").write_text(json.dumps([
            {"id": "old-cafe", "business_name": "Old Cafe", "fence_ids": ["cafe-door"], "rule_ids": ["coupon"]},
            {"id": "bakery", "business_name": "Bakery", "fence_ids": [], "rule_ids": []},
        ]))
        (r / "messages.json").write_text(json.dumps({"coupon1": "Welcome! 10% off your first coffee."}))
        (r / "trackers.json").write_text(json.dumps({"cafe-t1": "Old Cafe 12"}))
        cfg = {
            "fences": "fences.json", "rules": "rules.txt", "topics": "topics.json",
            "messages": "messages.json", "trackers": "trackers.json",
            "data_dir": str(data_dir or r / "data"), "window_span_s": 10, "listen": "127.0.0.1:0",
            **overrides,
        }
        path = r / "config.json"
        path.write_text(json.dumps(cfg))
        return path


@pytest.fixture
def salt_env(monkeypatch):
    monkeypatch.setenv("NETFENCE_SALT", SALT_HEX)
    return SALT_HEX


@pytest.fixture
def world(tmp_path) -> CouponWorld:
    return CouponWorld(tmp_path / "world")


# -- acceptance reporting ------------------------------------------------------

_criteria: dict[int, tuple[str, str, float]] = {}
_setup_secs: dict[str, float] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    if report.when == "setup":
        _setup_secs[item.nodeid] = report.duration
    if report.when == "call" or (report.when == "setup" and report.failed):
        secs = report.duration + (_setup_secs.get(item.nodeid, 0.0) if report.when == "call" else 0.0)
        _criteria[number] = (title, "PASS" if report.passed else "FAIL", secs)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, verdict, secs = _criteria[number]
        terminalreporter.write_line(f"criterion {number:2d}: {verdict}  {title}  ({secs:.3f} s)")
